"""Voxel occupancy grids: I/O, pooling, isosurface sampling and shape metrics."""

import struct

import numpy as np

from .errors import EmptyShapeError, FormatError, ShapeMismatchError

GRID_MAGIC = b"VXG1"

# Exhaustive nearest-neighbor search below this cloud size, grid hash above.
_NN_EXHAUSTIVE_LIMIT = 4000

# face id -> (axis, direction): -x,+x,-y,+y,-z,+z
_FACES = [(0, -1), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1)]


class VoxelGrid:
    """Cubic occupancy field over the unit cube; immutable after construction.

    values[x, y, z] is the occupancy of the cell spanning
    [x/N, (x+1)/N) x [y/N, (y+1)/N) x [z/N, (z+1)/N).
    """

    __slots__ = ("values",)

    def __init__(self, values):
        arr = np.asarray(values, dtype=np.float32)
        if arr.ndim != 3 or len(set(arr.shape)) != 1:
            raise ValueError("voxel grid must be cubic, got shape %r" % (arr.shape,))
        if arr.shape[0] < 2:
            raise ValueError("voxel grid resolution must be >= 2, got %d" % arr.shape[0])
        if np.isnan(arr).any() or arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("voxel occupancy values must lie in [0, 1]")
        arr = arr.copy()
        arr.flags.writeable = False
        self.values = arr

    @property
    def resolution(self):
        return self.values.shape[0]

    def is_binary(self):
        v = self.values
        return bool(np.all((v == 0.0) | (v == 1.0)))

    def occupied_count(self, threshold=0.5):
        return int(np.count_nonzero(self.values >= threshold))

    def __eq__(self, other):
        return isinstance(other, VoxelGrid) and np.array_equal(self.values, other.values)

    def __repr__(self):
        return "VoxelGrid(resolution=%d, occupied=%d)" % (self.resolution, self.occupied_count())


class PointCloud:
    """Points in the unit-cube frame; immutable after construction."""

    __slots__ = ("points",)

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("point cloud must have shape (n, 3), got %r" % (pts.shape,))
        pts = pts.copy()
        pts.flags.writeable = False
        self.points = pts

    def __len__(self):
        return self.points.shape[0]


def binarize(grid, threshold=0.5):
    """Threshold to a {0,1} grid; cell is 1 iff value >= threshold."""
    if not (0.0 < threshold < 1.0):
        raise ValueError("threshold must lie strictly in (0, 1), got %r" % (threshold,))
    return VoxelGrid((grid.values >= threshold).astype(np.float32))


def iou(a, b, threshold=0.5):
    """Intersection over union of the two occupancy sets after binarization.

    Two empty grids score 1.0 by convention; empty vs non-empty scores 0.0.
    """
    if a.resolution != b.resolution:
        raise ShapeMismatchError(
            "iou resolution mismatch: %d vs %d" % (a.resolution, b.resolution))
    if not (0.0 < threshold < 1.0):
        raise ValueError("threshold must lie strictly in (0, 1), got %r" % (threshold,))
    oa = a.values >= threshold
    ob = b.values >= threshold
    union = np.count_nonzero(oa | ob)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(oa & ob)) / float(union)


def downsample(grid, factor):
    """Max-pool by an integer factor; preserves thin occupied structures."""
    n = grid.resolution
    factor = int(factor)
    if factor < 1 or n % factor != 0:
        raise ValueError("factor %d must divide resolution %d" % (factor, n))
    m = n // factor
    v = grid.values.reshape(m, factor, m, factor, m, factor)
    return VoxelGrid(v.max(axis=(1, 3, 5)))


def _exposed_faces(occ):
    """(cell index, face id) pairs for faces adjacent to empty cells or the boundary."""
    n = occ.shape[0]
    faces = []
    pad = np.pad(occ, 1, constant_values=False)
    for fid, (axis, d) in enumerate(_FACES):
        shift = [slice(1, n + 1)] * 3
        shift[axis] = slice(1 + d, n + 1 + d)
        neighbor = pad[tuple(shift)]
        xs, ys, zs = np.nonzero(occ & ~neighbor)
        for x, y, z in zip(xs, ys, zs):
            faces.append((int(x), int(y), int(z), fid))
    faces.sort()
    return faces


def sample_isosurface_points(grid, count, threshold=0.5, seed=0):
    """Uniformly sample `count` points on exposed faces of the occupancy isosurface."""
    if count < 1:
        raise ValueError("count must be positive, got %d" % count)
    occ = binarize(grid, threshold).values.astype(bool)
    faces = _exposed_faces(occ)
    if not faces:
        raise EmptyShapeError("cannot sample the isosurface of an empty shape")
    rng = np.random.default_rng(np.random.PCG64(seed))
    n = grid.resolution
    idx = rng.integers(0, len(faces), size=count)
    uv = rng.random((count, 2))
    pts = np.empty((count, 3), dtype=np.float64)
    farr = np.asarray(faces, dtype=np.int64)[idx]
    for i in range(count):
        x, y, z, fid = farr[i]
        axis, d = _FACES[fid]
        lo = np.array([x, y, z], dtype=np.float64)
        p = lo.copy()
        p[axis] += 1.0 if d > 0 else 0.0
        others = [ax for ax in range(3) if ax != axis]
        p[others[0]] += uv[i, 0]
        p[others[1]] += uv[i, 1]
        pts[i] = p / n
    return PointCloud(pts)


def _nn_min_dists_exhaustive(p, q):
    # chunked to bound memory on larger clouds
    out = np.empty(p.shape[0], dtype=np.float64)
    step = 2048
    for i in range(0, p.shape[0], step):
        block = p[i:i + step]
        d2 = np.sum((block[:, None, :] - q[None, :, :]) ** 2, axis=2)
        out[i:i + step] = np.sqrt(d2.min(axis=1))
    return out


def _nn_min_dists_hash(p, q):
    """Exact nearest-neighbor distances via a uniform-grid spatial hash."""
    n_cells = max(1, int(round(len(q) ** (1.0 / 3.0))))
    lo = q.min(axis=0)
    hi = q.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    cell = span / n_cells
    keys = np.minimum((np.floor((q - lo) / cell)).astype(np.int64), n_cells - 1)
    keys = np.maximum(keys, 0)
    buckets = {}
    for j, k in enumerate(map(tuple, keys)):
        buckets.setdefault(k, []).append(j)
    buckets = {k: np.asarray(v) for k, v in buckets.items()}

    min_width = float(cell.min())
    out = np.empty(p.shape[0], dtype=np.float64)
    for i in range(p.shape[0]):
        c = np.floor((p[i] - lo) / cell).astype(np.int64)
        c = np.clip(c, 0, n_cells - 1)
        best = np.inf
        for ring in range(0, n_cells + 1):
            # any point in an unvisited bucket (Chebyshev ring >= r) is at least
            # (r-1) * min cell width away from the query's cell region
            if ring > 0 and best <= (ring - 1) * min_width:
                break
            found = []
            for dx in range(-ring, ring + 1):
                for dy in range(-ring, ring + 1):
                    for dz in range(-ring, ring + 1):
                        if max(abs(dx), abs(dy), abs(dz)) != ring:
                            continue
                        k = (int(c[0] + dx), int(c[1] + dy), int(c[2] + dz))
                        if k in buckets:
                            found.append(buckets[k])
            if found:
                cand = q[np.concatenate(found)]
                d = np.sqrt(np.sum((cand - p[i]) ** 2, axis=1))
                best = min(best, float(d.min()))
        out[i] = best
    return out


def _nn_min_dists(p, q):
    if len(q) <= _NN_EXHAUSTIVE_LIMIT and len(p) <= _NN_EXHAUSTIVE_LIMIT:
        return _nn_min_dists_exhaustive(p, q)
    return _nn_min_dists_hash(p, q)


def chamfer_distance(p, q):
    """Symmetric Chamfer distance: half the sum of the two directional
    mean nearest-neighbor Euclidean distances, in unit-cube coordinates."""
    if len(p) == 0 or len(q) == 0:
        raise ValueError("chamfer_distance requires non-empty point clouds")
    d_pq = _nn_min_dists(p.points, q.points).mean()
    d_qp = _nn_min_dists(q.points, p.points).mean()
    return 0.5 * (d_pq + d_qp)


def extract_surface_mesh(grid, threshold=0.5):
    """Quad mesh of all exposed faces; vertices in the unit-cube frame.

    Returns (vertices: (V,3) float array, faces: (F,4) int array of
    0-based vertex indices, wound counter-clockwise seen from outside).
    """
    occ = binarize(grid, threshold).values.astype(bool)
    n = grid.resolution
    # corner offsets per face, CCW as seen from outside (right-handed outward normal)
    corner_tables = {
        (0, -1): [(0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 0)],
        (0, 1): [(1, 0, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1)],
        (1, -1): [(0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1)],
        (1, 1): [(0, 1, 0), (0, 1, 1), (1, 1, 1), (1, 1, 0)],
        (2, -1): [(0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0)],
        (2, 1): [(0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)],
    }
    vert_index = {}
    vertices = []
    faces_out = []
    for x, y, z, fid in _exposed_faces(occ):
        axis, d = _FACES[fid]
        quad = []
        for off in corner_tables[(axis, d)]:
            key = (x + off[0], y + off[1], z + off[2])
            vid = vert_index.get(key)
            if vid is None:
                vid = len(vertices)
                vert_index[key] = vid
                vertices.append(key)
            quad.append(vid)
        faces_out.append(quad)
    verts = np.asarray(vertices, dtype=np.float64).reshape(-1, 3) / n
    return verts, np.asarray(faces_out, dtype=np.int64).reshape(-1, 4)


def write_obj(path, vertices, faces):
    """ASCII OBJ export with 1-based face indices."""
    with open(path, "w") as f:
        for v in vertices:
            f.write("v %.9g %.9g %.9g\n" % (v[0], v[1], v[2]))
        for q in faces:
            f.write("f %d %d %d %d\n" % (q[0] + 1, q[1] + 1, q[2] + 1, q[3] + 1))


def write_grid(path, grid):
    """Binary grid file: "VXG1", three uint32 LE dims, float32 LE x-fastest."""
    with open(path, "wb") as f:
        f.write(GRID_MAGIC)
        n = grid.resolution
        f.write(struct.pack("<III", n, n, n))
        f.write(np.asarray(grid.values, dtype="<f4").ravel(order="F").tobytes())


def read_grid(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != GRID_MAGIC:
            raise FormatError("bad magic %r at offset 0, expected %r" % (magic, GRID_MAGIC))
        hdr = f.read(12)
        if len(hdr) != 12:
            raise FormatError("truncated header at offset %d" % (4 + len(hdr)))
        nx, ny, nz = struct.unpack("<III", hdr)
        if not (nx == ny == nz) or nx < 2:
            raise FormatError("invalid dims (%d, %d, %d) at offset 4" % (nx, ny, nz))
        payload = f.read(4 * nx * ny * nz)
        if len(payload) != 4 * nx * ny * nz:
            raise FormatError("truncated payload at offset %d" % (16 + len(payload)))
        vals = np.frombuffer(payload, dtype="<f4").reshape((nx, ny, nz), order="F")
        return VoxelGrid(vals)
