"""Single-view observation synthesis: pinhole camera, voxel ray casting,
ray-depth / camera-space-normal / silhouette maps, and PFM/PBM file I/O."""

import numpy as np

from .errors import EmptyViewError, FormatError

DEFAULT_FOCAL_MM = 50.0
DEFAULT_FILM_MM = 35.0
MIN_DISTANCE = np.sqrt(3.0) / 2.0

_CENTER = np.array([0.5, 0.5, 0.5])
_WORLD_UP = np.array([0.0, 1.0, 0.0])


class Camera:
    """Pinhole camera looking at the unit-cube center with world +y up."""

    __slots__ = ("azimuth", "elevation", "distance", "focal_mm", "film_mm",
                 "width", "height", "position", "right", "up", "forward")

    def __init__(self, azimuth, elevation, distance, width, height,
                 focal_mm=DEFAULT_FOCAL_MM, film_mm=DEFAULT_FILM_MM):
        if not abs(elevation) < np.pi / 2:
            raise ValueError("elevation must satisfy |e| < pi/2, got %r" % (elevation,))
        if distance <= MIN_DISTANCE:
            raise ValueError("camera distance %r must exceed the cube's bounding-sphere "
                             "radius %g" % (distance, MIN_DISTANCE))
        self.azimuth = float(azimuth)
        self.elevation = float(elevation)
        self.distance = float(distance)
        self.focal_mm = float(focal_mm)
        self.film_mm = float(film_mm)
        self.width = int(width)
        self.height = int(height)
        az, el, d = self.azimuth, self.elevation, self.distance
        offset = np.array([np.sin(az) * np.cos(el), np.sin(el), -np.cos(az) * np.cos(el)])
        self.position = _CENTER + d * offset
        forward = _CENTER - self.position
        forward = forward / np.linalg.norm(forward)
        right = np.cross(_WORLD_UP, forward)
        right = right / np.linalg.norm(right)
        self.forward = forward
        self.right = right
        self.up = np.cross(forward, right)

    def rotation(self):
        """World-to-camera rotation; rows are (right, up, forward)."""
        return np.stack([self.right, self.up, self.forward])

    def pixel_rays(self):
        """Normalized world-space ray directions, shape (H*W, 3), row-major."""
        W, H = self.width, self.height
        film_w = self.film_mm
        film_h = self.film_mm * H / W
        xs = ((np.arange(W) + 0.5) / W - 0.5) * film_w
        ys = (0.5 - (np.arange(H) + 0.5) / H) * film_h
        gx, gy = np.meshgrid(xs, ys)  # (H, W)
        d_cam = np.stack([gx.ravel(), gy.ravel(),
                          np.full(W * H, self.focal_mm)], axis=1)
        d_cam /= np.linalg.norm(d_cam, axis=1, keepdims=True)
        return d_cam @ self.rotation()  # R^T applied from the right


class ObservationMaps:
    """Per-view ray-depth, camera-space normal and silhouette images."""

    __slots__ = ("depth", "normal", "silhouette")

    def __init__(self, depth, normal, silhouette):
        self.depth = np.asarray(depth, dtype=np.float64)
        self.normal = np.asarray(normal, dtype=np.float64)
        self.silhouette = np.asarray(silhouette, dtype=bool)
        H, W = self.depth.shape
        if self.normal.shape != (3, H, W) or self.silhouette.shape != (H, W):
            raise ValueError("inconsistent observation map shapes")


def camera_from_angles(azimuth, elevation, distance, width, height,
                       focal_mm=DEFAULT_FOCAL_MM, film_mm=DEFAULT_FILM_MM):
    return Camera(azimuth, elevation, distance, width, height, focal_mm, film_mm)


def render_view(grid, camera):
    """Cast one pinhole ray per pixel through the binary grid (DDA traversal).

    Depth is the Euclidean distance from the camera center to the exact
    ray/face intersection point; normals are outward axis-aligned face
    normals rotated into camera space.
    """
    if not grid.is_binary():
        raise ValueError("render_view requires a binarized grid")
    occ = grid.values > 0.5
    n = grid.resolution
    o = camera.position
    dirs = camera.pixel_rays()  # (P, 3)
    P = dirs.shape[0]

    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t_a = (0.0 - o) * inv
        t_b = (1.0 - o) * inv
    # degenerate axes: no constraint when origin inside the slab, miss otherwise
    deg = dirs == 0.0
    lo_t = np.where(deg, np.where((o >= 0.0) & (o <= 1.0), -np.inf, np.inf), np.minimum(t_a, t_b))
    hi_t = np.where(deg, np.where((o >= 0.0) & (o <= 1.0), np.inf, -np.inf), np.maximum(t_a, t_b))
    t_enter = lo_t.max(axis=1)
    t_exit = hi_t.min(axis=1)
    entry_axis = lo_t.argmax(axis=1)
    active = (t_enter <= t_exit) & (t_exit > 0.0) & np.isfinite(t_enter)

    step = np.sign(dirs).astype(np.int64)
    with np.errstate(divide="ignore"):
        t_delta = np.where(dirs != 0.0, (1.0 / n) / np.abs(dirs), np.inf)

    p_enter = o + t_enter[:, None] * dirs
    cell = np.clip(np.floor(p_enter * n).astype(np.int64), 0, n - 1)
    rows = np.arange(P)
    # snap the entry axis index to the entered face to dodge fp edge cases
    cell[rows, entry_axis] = np.where(step[rows, entry_axis] > 0, 0, n - 1)

    next_bound = (cell + (step > 0)) / n
    with np.errstate(divide="ignore", invalid="ignore"):
        t_max = np.where(dirs != 0.0, (next_bound - o) / dirs, np.inf)

    t_cur = t_enter.copy()
    axis_cur = entry_axis.copy()
    hit = np.zeros(P, dtype=bool)
    depth = np.zeros(P, dtype=np.float64)
    n_axis = np.zeros(P, dtype=np.int64)
    n_sign = np.zeros(P, dtype=np.int64)

    for _ in range(3 * n + 2):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        c = cell[idx]
        occ_here = occ[c[:, 0], c[:, 1], c[:, 2]]
        new_hits = idx[occ_here]
        hit[new_hits] = True
        depth[new_hits] = t_cur[new_hits]
        n_axis[new_hits] = axis_cur[new_hits]
        n_sign[new_hits] = -step[new_hits, axis_cur[new_hits]]
        active[new_hits] = False
        idx = idx[~occ_here]
        if idx.size == 0:
            continue
        a = np.argmin(t_max[idx], axis=1)
        t_cur[idx] = t_max[idx, a]
        cell[idx, a] += step[idx, a]
        axis_cur[idx] = a
        t_max[idx, a] += t_delta[idx, a]
        gone = (cell[idx, a] < 0) | (cell[idx, a] >= n)
        active[idx[gone]] = False

    H, W = camera.height, camera.width
    R = camera.rotation()
    normal_world = np.zeros((P, 3), dtype=np.float64)
    normal_world[rows[hit], n_axis[hit]] = n_sign[hit].astype(np.float64)
    normal_cam = normal_world @ R.T
    return ObservationMaps(depth.reshape(H, W),
                           normal_cam.T.reshape(3, H, W),
                           hit.reshape(H, W))


def mask_maps(maps):
    """4-channel network input: silhouette-masked normalized depth + normals.

    Depth is normalized to [0, 1] over silhouette pixels; a constant-depth
    silhouette maps to 0.
    """
    sil = maps.silhouette
    if not sil.any():
        raise EmptyViewError("silhouette is empty; shape not visible in this view")
    d = maps.depth
    d_in = d[sil]
    d_min, d_max = d_in.min(), d_in.max()
    if d_max > d_min:
        dn = np.where(sil, (d - d_min) / (d_max - d_min), 0.0)
    else:
        dn = np.zeros_like(d)
    out = np.concatenate([dn[None], maps.normal * sil[None].astype(np.float64)], axis=0)
    return out


def write_pfm(path, image):
    """Little-endian PFM; image is (H, W) grayscale or (3, H, W) color.

    Rows are stored bottom-to-top per the PFM convention.
    """
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 2:
        header, data = b"Pf", img[::-1]
    elif img.ndim == 3 and img.shape[0] == 3:
        header = b"PF"
        data = np.moveaxis(img, 0, 2)[::-1]  # (H, W, 3), bottom-up
    else:
        raise ValueError("expected (H, W) or (3, H, W) image, got %r" % (img.shape,))
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(b"%d %d\n" % (w, h))
        f.write(b"-1.0\n")  # negative scale: little-endian
        f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_pfm(path):
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic not in (b"Pf", b"PF"):
            raise FormatError("bad PFM magic %r at offset 0" % (magic,))
        try:
            w, h = map(int, f.readline().split())
            scale = float(f.readline())
        except ValueError as exc:
            raise FormatError("malformed PFM header: %s" % exc) from exc
        channels = 3 if magic == b"PF" else 1
        count = w * h * channels
        dtype = "<f4" if scale < 0 else ">f4"
        buf = f.read(4 * count)
        if len(buf) != 4 * count:
            raise FormatError("truncated PFM payload at offset %d" % (f.tell(),))
        data = np.frombuffer(buf, dtype=dtype).reshape(h, w, channels)[::-1]
    if channels == 1:
        return np.ascontiguousarray(data[:, :, 0]).astype(np.float32)
    return np.ascontiguousarray(np.moveaxis(data, 2, 0)).astype(np.float32)


def write_pbm(path, mask):
    """Plain (P1) PBM; 1 encodes a silhouette pixel."""
    mask = np.asarray(mask).astype(np.uint8)
    h, w = mask.shape
    lines = ["P1", "%d %d" % (w, h)]
    lines.extend(" ".join(str(int(v)) for v in row) for row in mask)
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_pbm(path):
    with open(path) as f:
        tokens = f.read().split()
    if not tokens or tokens[0] != "P1":
        raise FormatError("bad PBM magic at offset 0")
    w, h = int(tokens[1]), int(tokens[2])
    bits = np.array(tokens[3:3 + w * h], dtype=np.uint8)
    if bits.size != w * h:
        raise FormatError("truncated PBM payload")
    return bits.reshape(h, w).astype(bool)
