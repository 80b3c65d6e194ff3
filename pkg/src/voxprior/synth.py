"""Procedural voxel shapes (tables, chairs, planes) and dataset manifests.

Shapes are unions of axis-aligned boxes and axis-aligned cylinders in the
unit cube, chosen so each family has parts that a single view can occlude
(far table/chair legs, the far wing of a plane).
"""

import json
import os

import numpy as np

from .voxel import VoxelGrid, write_grid

FAMILIES = ("table", "chair", "plane")

# per-family parameter bounds; minimum feature sizes guarantee non-empty
# occupancy for every supported resolution (>= 16)
PARAM_BOUNDS = {
    "table": {
        "top_extent": (0.28, 0.45),
        "top_thickness": (0.08, 0.16),
        "leg_radius": (0.045, 0.08),
        "leg_height": (0.30, 0.55),
    },
    "chair": {
        "seat_extent": (0.18, 0.30),
        "seat_thickness": (0.08, 0.14),
        "leg_thickness": (0.08, 0.13),
        "leg_height": (0.25, 0.40),
        "back_height": (0.25, 0.40),
        "back_thickness": (0.08, 0.13),
    },
    "plane": {
        "body_radius": (0.07, 0.11),
        "body_length": (0.60, 0.90),
        "wing_span": (0.60, 0.90),
        "wing_chord": (0.15, 0.28),
        "wing_thickness": (0.08, 0.12),
        "tail_height": (0.12, 0.22),
    },
}

MIN_SUPPORTED_RESOLUTION = 16


class ShapeSpec:
    """A family name plus concrete parameters within the family bounds."""

    __slots__ = ("family", "params", "seed")

    def __init__(self, family, params, seed=0):
        if family not in PARAM_BOUNDS:
            raise ValueError("unknown shape family %r" % (family,))
        bounds = PARAM_BOUNDS[family]
        if set(params) != set(bounds):
            raise ValueError("family %r expects params %s, got %s"
                             % (family, sorted(bounds), sorted(params)))
        for name, v in params.items():
            lo, hi = bounds[name]
            if not (lo <= v <= hi):
                raise ValueError("param %s=%r outside bounds [%r, %r]" % (name, v, lo, hi))
        self.family = family
        self.params = dict(params)
        self.seed = int(seed)

    @classmethod
    def random(cls, family, seed):
        rng = np.random.default_rng(np.random.PCG64(seed))
        bounds = PARAM_BOUNDS[family]
        params = {name: float(rng.uniform(lo, hi)) for name, (lo, hi) in sorted(bounds.items())}
        return cls(family, params, seed)

    def to_dict(self):
        return {"family": self.family, "params": self.params, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(d["family"], d["params"], d.get("seed", 0))


def _box(lo, hi):
    return ("box", np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64))


def _cylinder(axis, center, radius, lo, hi):
    # axis-aligned cylinder: `center` are the two cross-axis coordinates,
    # [lo, hi] the extent along `axis`
    return ("cyl", axis, np.asarray(center, dtype=np.float64), float(radius),
            float(lo), float(hi))


def primitives_for(spec):
    """List of solid primitives whose union defines the shape."""
    p = spec.params
    prims = []
    if spec.family == "table":
        e, t = p["top_extent"], p["top_thickness"]
        r, h = p["leg_radius"], p["leg_height"]
        prims.append(_box((0.5 - e, h, 0.5 - e), (0.5 + e, h + t, 0.5 + e)))
        inset = e - r - 0.02
        for sx in (-1, 1):
            for sz in (-1, 1):
                cx, cz = 0.5 + sx * inset, 0.5 + sz * inset
                prims.append(_cylinder(1, (cx, cz), r, 0.0, h))
    elif spec.family == "chair":
        e, t = p["seat_extent"], p["seat_thickness"]
        lw, lh = p["leg_thickness"], p["leg_height"]
        bh, bt = p["back_height"], p["back_thickness"]
        prims.append(_box((0.5 - e, lh, 0.5 - e), (0.5 + e, lh + t, 0.5 + e)))
        for sx in (-1, 1):
            for sz in (-1, 1):
                cx, cz = 0.5 + sx * (e - lw / 2), 0.5 + sz * (e - lw / 2)
                prims.append(_box((cx - lw / 2, 0.0, cz - lw / 2),
                                  (cx + lw / 2, lh, cz + lw / 2)))
        prims.append(_box((0.5 - e, lh + t, 0.5 + e - bt), (0.5 + e, lh + t + bh, 0.5 + e)))
    elif spec.family == "plane":
        br, bl = p["body_radius"], p["body_length"]
        ws, wc, wt = p["wing_span"], p["wing_chord"], p["wing_thickness"]
        th = p["tail_height"]
        prims.append(_cylinder(0, (0.5, 0.5), br, 0.5 - bl / 2, 0.5 + bl / 2))
        prims.append(_box((0.5 - wc / 2, 0.5 - wt / 2, 0.5 - ws / 2),
                          (0.5 + wc / 2, 0.5 + wt / 2, 0.5 + ws / 2)))
        prims.append(_box((0.5 + bl / 2 - wc / 2, 0.5, 0.5 - wt / 2),
                          (0.5 + bl / 2, 0.5 + br + th, 0.5 + wt / 2)))
    return prims


def point_in_primitive(prim, pt):
    """Scalar membership test; the brute-force voxelization oracle uses this too."""
    if prim[0] == "box":
        _, lo, hi = prim
        return bool(np.all(pt >= lo) and np.all(pt < hi))
    _, axis, center, radius, lo, hi = prim
    if not (lo <= pt[axis] < hi):
        return False
    cross = [pt[i] for i in range(3) if i != axis]
    return (cross[0] - center[0]) ** 2 + (cross[1] - center[1]) ** 2 <= radius ** 2


def generate_shape(spec, resolution):
    """Deterministic binary grid: a cell is occupied iff its center lies in a primitive."""
    if resolution < MIN_SUPPORTED_RESOLUTION:
        raise ValueError("resolution %d below supported minimum %d"
                         % (resolution, MIN_SUPPORTED_RESOLUTION))
    n = resolution
    centers = (np.arange(n) + 0.5) / n
    X, Y, Z = np.meshgrid(centers, centers, centers, indexing="ij")
    occ = np.zeros((n, n, n), dtype=bool)
    for prim in primitives_for(spec):
        if prim[0] == "box":
            _, lo, hi = prim
            occ |= ((X >= lo[0]) & (X < hi[0]) & (Y >= lo[1]) & (Y < hi[1])
                    & (Z >= lo[2]) & (Z < hi[2]))
        else:
            _, axis, center, radius, lo, hi = prim
            coords = (X, Y, Z)
            cross = [coords[i] for i in range(3) if i != axis]
            inside = ((cross[0] - center[0]) ** 2 + (cross[1] - center[1]) ** 2
                      <= radius ** 2)
            occ |= inside & (coords[axis] >= lo) & (coords[axis] < hi)
    return VoxelGrid(occ.astype(np.float32))


class DatasetManifest:
    """Shape ids, specs, split tags and per-shape camera view parameters."""

    def __init__(self, entries, config):
        self.entries = list(entries)
        self.config = dict(config)
        train = {e["id"] for e in self.entries if e["split"] == "train"}
        test = {e["id"] for e in self.entries if e["split"] == "test"}
        if train & test:
            raise ValueError("train/test splits overlap: %s" % sorted(train & test))

    def split(self, tag):
        return [e for e in self.entries if e["split"] == tag]

    def to_dict(self):
        return {"config": self.config, "entries": self.entries}

    @classmethod
    def from_dict(cls, d):
        return cls(d["entries"], d["config"])

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def generate_dataset(config, out_dir):
    """Write shape grids, per-shape view parameter files and the manifest.

    config keys: n_shapes, resolution, train_fraction, views_per_shape,
    seed, distance, elevation_range (radians).
    """
    n_shapes = int(config["n_shapes"])
    if n_shapes < 1:
        raise ValueError("n_shapes must be positive, got %d" % n_shapes)
    resolution = int(config.get("resolution", 16))
    train_fraction = float(config.get("train_fraction", 0.9))
    views_per_shape = int(config.get("views_per_shape", 20))
    distance = float(config.get("distance", 2.0))
    el_lo, el_hi = config.get("elevation_range", (-np.pi / 3, np.pi / 3))
    master_seed = int(config.get("seed", 0))

    ss = np.random.SeedSequence(master_seed)
    shape_seeds = ss.spawn(n_shapes)
    split_rng = np.random.default_rng(ss.spawn(1)[0])

    os.makedirs(os.path.join(out_dir, "shapes"), exist_ok=True)
    order = split_rng.permutation(n_shapes)
    n_train = int(np.floor(n_shapes * train_fraction + 0.5))
    split_of = {int(order[i]): ("train" if i < n_train else "test") for i in range(n_shapes)}

    entries = []
    for i in range(n_shapes):
        family = FAMILIES[i % len(FAMILIES)]
        child = np.random.default_rng(shape_seeds[i])
        spec_seed = int(child.integers(0, 2 ** 31))
        spec = ShapeSpec.random(family, spec_seed)
        shape_id = "%s_%04d" % (family, i)
        grid = generate_shape(spec, resolution)
        try:
            write_grid(os.path.join(out_dir, "shapes", shape_id + ".vxg"), grid)
        except OSError as exc:
            raise OSError("failed writing grid for %s under %s: %s"
                          % (shape_id, out_dir, exc)) from exc
        views = []
        for k in range(views_per_shape):
            views.append({
                "azimuth": float(child.uniform(0.0, 2.0 * np.pi)),
                "elevation": float(child.uniform(el_lo, el_hi)),
                "distance": distance,
            })
        view_dir = os.path.join(out_dir, "views", shape_id)
        os.makedirs(view_dir, exist_ok=True)
        for k, v in enumerate(views):
            with open(os.path.join(view_dir, "%d.json" % k), "w") as f:
                json.dump(v, f, indent=2, sort_keys=True)
                f.write("\n")
        entries.append({
            "id": shape_id,
            "spec": spec.to_dict(),
            "split": split_of[i],
            "views": views,
        })
    manifest = DatasetManifest(entries, {
        "n_shapes": n_shapes, "resolution": resolution,
        "train_fraction": train_fraction, "views_per_shape": views_per_shape,
        "distance": distance, "elevation_range": [float(el_lo), float(el_hi)],
        "seed": master_seed,
    })
    manifest.save(os.path.join(out_dir, "manifest.json"))
    return manifest
