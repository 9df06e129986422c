"""Mesh, camera model, and per-view geometric buffers.

World frame is right-handed ENU: x = east, y = north, z = up, meters.
Camera frame is the usual computer-vision pinhole: x right, y down,
z along the optical axis; extrinsics map world to camera points as
x_cam = R @ x_world + t.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._validation import check_unit_vector
from .image import BinaryMask

_LEAF_SIZE = 4
DEFAULT_SHADOW_BIAS_FRACTION = 1e-3  # of the scene diagonal
MIN_SKY_SAMPLES = 16


def _build_bvh(v0, e1, e2):
    """Median-split BVH flattened to arrays (children adjacent, leaves hold
    ranges into a permuted triangle order)."""
    n_tris = v0.shape[0]
    tri_min = np.minimum(np.minimum(v0, v0 + e1), v0 + e2)
    tri_max = np.maximum(np.maximum(v0, v0 + e1), v0 + e2)
    centroids = (tri_min + tri_max) * 0.5

    order = np.arange(n_tris, dtype=np.int32)
    node_min, node_max, node_left, node_count = [], [], [], []

    def new_node():
        node_min.append(None)
        node_max.append(None)
        node_left.append(0)
        node_count.append(0)
        return len(node_left) - 1

    # (node index, lo, hi) work list; children are allocated adjacently
    root = new_node()
    work = [(root, 0, n_tris)]
    while work:
        node, lo, hi = work.pop()
        idx = order[lo:hi]
        node_min[node] = tri_min[idx].min(axis=0)
        node_max[node] = tri_max[idx].max(axis=0)
        if hi - lo <= _LEAF_SIZE:
            node_left[node] = lo
            node_count[node] = hi - lo
            continue
        cen = centroids[idx]
        axis = int(np.argmax(cen.max(axis=0) - cen.min(axis=0)))
        mid = (hi - lo) // 2
        part = np.argpartition(cen[:, axis], mid)
        order[lo:hi] = idx[part]
        left = new_node()
        right = new_node()
        assert right == left + 1
        node_left[node] = left
        node_count[node] = -1  # internal marker; leaves store their size
        work.append((left, lo, lo + mid))
        work.append((right, lo + mid, hi))

    return (np.asarray(node_min, dtype=np.float64),
            np.asarray(node_max, dtype=np.float64),
            np.asarray(node_left, dtype=np.int32),
            np.asarray(node_count, dtype=np.int32),
            order)


@dataclass
class TriangleMesh:
    """Triangle soup with a BVH built at construction.

    Degenerate (zero-area) triangles are dropped during cleaning; vertex
    indices are validated against the vertex count.
    """

    vertices: np.ndarray  # (N, 3) float64, meters, world frame
    triangles: np.ndarray  # (M, 3) int32 vertex indices

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        tris = np.ascontiguousarray(self.triangles, dtype=np.int32)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError("vertices must be (N, 3)")
        if tris.size and (tris.min() < 0 or tris.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")
        if tris.size:
            a = self.vertices[tris[:, 0]]
            e1 = self.vertices[tris[:, 1]] - a
            e2 = self.vertices[tris[:, 2]] - a
            area2 = np.linalg.norm(np.cross(e1, e2), axis=1)
            keep = area2 > 0.0
            tris = tris[keep]
        self.triangles = tris
        self._v0 = (self.vertices[tris[:, 0]] if tris.size
                    else np.zeros((0, 3)))
        self._e1 = (self.vertices[tris[:, 1]] - self._v0 if tris.size
                    else np.zeros((0, 3)))
        self._e2 = (self.vertices[tris[:, 2]] - self._v0 if tris.size
                    else np.zeros((0, 3)))
        self._v0 = np.ascontiguousarray(self._v0)
        self._e1 = np.ascontiguousarray(self._e1)
        self._e2 = np.ascontiguousarray(self._e2)
        if tris.size:
            (self._node_min, self._node_max, self._node_left,
             self._node_count, self._tri_order) = _build_bvh(self._v0, self._e1, self._e2)
        else:
            # a single empty leaf keeps the kernels branch-free
            self._node_min = np.full((1, 3), np.inf)
            self._node_max = np.full((1, 3), -np.inf)
            self._node_left = np.zeros(1, np.int32)
            self._node_count = np.zeros(1, np.int32)
            self._tri_order = np.zeros(0, np.int32)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def scene_diagonal(self) -> float:
        if not len(self.vertices):
            return 1.0
        extent = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(extent)) or 1.0

    def face_normals(self) -> np.ndarray:
        n = np.cross(self._e1, self._e2)
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.where(norm > 0, norm, 1.0)

    def _bvh_args(self):
        return (self._v0, self._e1, self._e2, self._node_min, self._node_max,
                self._node_left, self._node_count, self._tri_order)

    @classmethod
    def from_obj(cls, path) -> "TriangleMesh":
        """Load a Wavefront OBJ (v/f records; materials and normals ignored).

        Polygonal faces are fan-triangulated; negative indices resolve
        relative to the vertices seen so far.
        """
        vertices = []
        faces = []
        with open(path) as fh:
            for line in fh:
                parts = line.split()
                if not parts or parts[0].startswith("#"):
                    continue
                if parts[0] == "v":
                    vertices.append([float(x) for x in parts[1:4]])
                elif parts[0] == "f":
                    idx = []
                    for token in parts[1:]:
                        raw = int(token.split("/")[0])
                        idx.append(raw - 1 if raw > 0 else len(vertices) + raw)
                    for k in range(1, len(idx) - 1):
                        faces.append([idx[0], idx[k], idx[k + 1]])
        return cls(np.asarray(vertices, dtype=np.float64).reshape(-1, 3),
                   np.asarray(faces, dtype=np.int32).reshape(-1, 3))


@dataclass
class CameraModel:
    """Pinhole camera without distortion (inputs are undistorted upstream)."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # (3, 3) world-to-camera
    translation: np.ndarray  # (3,) world-to-camera, meters
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.ascontiguousarray(self.rotation, dtype=np.float64)
        self.translation = np.ascontiguousarray(self.translation, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err >= 1e-6:
            raise ValueError(f"rotation is not orthonormal (max deviation {err:.2e})")
        if self.width < 1 or self.height < 1:
            raise ValueError("resolution must be positive")

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def pixel_rays(self) -> np.ndarray:
        """World-frame ray directions through every pixel center, scaled so the
        camera-frame z component is 1 (ray parameter = optical-axis depth)."""
        xs = (np.arange(self.width) + 0.5 - self.cx) / self.fx
        ys = (np.arange(self.height) + 0.5 - self.cy) / self.fy
        gx, gy = np.meshgrid(xs, ys)
        d_cam = np.stack([gx, gy, np.ones_like(gx)], axis=-1)
        return d_cam.reshape(-1, 3) @ self.rotation


@dataclass
class GeometryBuffers:
    """Per-view geometric layers; all arrays share the camera resolution."""

    depth: np.ndarray                   # (H, W) float32, meters along optical axis, 0 = miss
    normal: np.ndarray                  # (H, W, 3) float32, unit, world frame, camera-facing
    hit: BinaryMask
    sun_visibility: BinaryMask | None = None
    sky_visibility: np.ndarray | None = None   # (H, W) float32 in [0, 1]
    prim_index: np.ndarray | None = None       # (H, W) int32 triangle id, -1 = miss
    points: np.ndarray = field(default=None, repr=False)  # (H, W, 3) float64 world hits

    def __post_init__(self):
        if self.points is None:
            self.points = np.zeros(self.depth.shape + (3,), dtype=np.float64)


def render_geometry(mesh: TriangleMesh, cam: CameraModel) -> GeometryBuffers:
    """Cast one primary ray per pixel center; nearest hit wins (ties broken by
    lowest triangle index). Normals are flat triangle normals flipped toward
    the camera."""
    h, w = cam.height, cam.width
    dirs = np.ascontiguousarray(cam.pixel_rays())
    origin = np.ascontiguousarray(cam.center)
    t_out = np.empty(h * w, dtype=np.float64)
    tri_out = np.empty(h * w, dtype=np.int32)
    _kernels.render_primary(origin, dirs, *mesh._bvh_args(), t_out, tri_out)

    hit = np.isfinite(t_out) & (tri_out >= 0)
    depth = np.where(hit, t_out, 0.0)
    points = origin[None, :] + dirs * depth[:, None]

    normals = np.zeros((h * w, 3), dtype=np.float64)
    if mesh.n_triangles and hit.any():
        face_n = mesh.face_normals()
        n = face_n[np.where(hit, tri_out, 0)]
        flip = np.einsum("ij,ij->i", n, dirs) > 0.0
        n[flip] *= -1.0
        normals[hit] = n[hit]

    tri_out = np.where(hit, tri_out, -1)
    return GeometryBuffers(
        depth=depth.reshape(h, w).astype(np.float32),
        normal=normals.reshape(h, w, 3).astype(np.float32),
        hit=BinaryMask(hit.reshape(h, w)),
        prim_index=tri_out.reshape(h, w),
        points=points.reshape(h, w, 3),
    )


def shadow_bias(mesh: TriangleMesh, fraction: float = DEFAULT_SHADOW_BIAS_FRACTION) -> float:
    return fraction * mesh.scene_diagonal()


def compute_sun_visibility(mesh: TriangleMesh, buffers: GeometryBuffers,
                           cam: CameraModel, sun_dir, bias: float | None = None,
                           ) -> BinaryMask:
    """V_sun: true where a shadow ray toward the sun escapes the scene and the
    surface faces the sun (n . sun_dir > 0). Non-unit sun_dir within 1e-3 of
    unit length is normalized with a warning; anything further off is an error."""
    norm = float(np.linalg.norm(np.asarray(sun_dir, dtype=np.float64)))
    if abs(norm - 1.0) > 1e-9:
        warnings.warn(f"sun_dir norm {norm:.6f} != 1; normalizing", stacklevel=2)
    sun = check_unit_vector(sun_dir, tol=1e-3, name="sun_dir")
    h, w = buffers.depth.shape
    hit = buffers.hit.bits.reshape(-1)
    n_dot = buffers.normal.reshape(-1, 3).astype(np.float64) @ sun
    active = hit & (n_dot > 0.0)

    points = np.ascontiguousarray(buffers.points.reshape(-1, 3))
    eps = shadow_bias(mesh) if bias is None else bias
    origins = points + eps * buffers.normal.reshape(-1, 3).astype(np.float64)
    blocked = np.empty(h * w, dtype=np.bool_)
    _kernels.occlusion_batch(np.ascontiguousarray(origins), sun,
                             np.ascontiguousarray(active), *mesh._bvh_args(), blocked)
    visible = active & ~blocked
    return BinaryMask(visible.reshape(h, w))


def compute_sky_visibility(mesh: TriangleMesh, buffers: GeometryBuffers,
                           cam: CameraModel, samples: int, seed: int,
                           bias: float | None = None) -> np.ndarray:
    """V_sky fraction: cosine-weighted Monte Carlo over the hemisphere above
    the horizontal plane, counting unoccluded directions. Deterministic for a
    fixed seed regardless of threading."""
    if samples < MIN_SKY_SAMPLES:
        raise ValueError(f"samples must be >= {MIN_SKY_SAMPLES}, got {samples}")
    h, w = buffers.depth.shape
    eps = shadow_bias(mesh) if bias is None else bias
    out = np.empty(h * w, dtype=np.float64)
    _kernels.sky_visibility_mc(
        np.ascontiguousarray(buffers.points.reshape(-1, 3)),
        np.ascontiguousarray(buffers.normal.reshape(-1, 3).astype(np.float64)),
        np.ascontiguousarray(buffers.hit.bits.reshape(-1)),
        samples, seed, eps, *mesh._bvh_args(), out)
    return out.reshape(h, w).astype(np.float32)


def parse_camera_manifest(path) -> dict[str, CameraModel]:
    """Plain-text camera manifest: one record per image, '#' comments allowed.

    id fx fy cx cy r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz width height
    """
    cameras = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 19:
                raise ValueError(f"{path}:{lineno}: expected 19 fields, got {len(parts)}")
            image_id = parts[0]
            vals = [float(x) for x in parts[1:]]
            cameras[image_id] = CameraModel(
                fx=vals[0], fy=vals[1], cx=vals[2], cy=vals[3],
                rotation=np.asarray(vals[4:13]).reshape(3, 3),
                translation=np.asarray(vals[13:16]),
                width=int(vals[16]), height=int(vals[17]))
    return cameras


def nadir_camera(center_xy, altitude: float, focal: float,
                 width: int, height: int) -> CameraModel:
    """Camera at (x, y, altitude) looking straight down, image up = north."""
    rotation = np.array([[1.0, 0.0, 0.0],
                         [0.0, -1.0, 0.0],
                         [0.0, 0.0, -1.0]])
    position = np.array([center_xy[0], center_xy[1], altitude], dtype=np.float64)
    return CameraModel(fx=focal, fy=focal, cx=width / 2.0, cy=height / 2.0,
                       rotation=rotation, translation=-rotation @ position,
                       width=width, height=height)


def _rotation_about(axis, angle_deg: float) -> np.ndarray:
    axis = check_unit_vector(axis, tol=1e-9, name="axis")
    c = math.cos(math.radians(angle_deg))
    s = math.sin(math.radians(angle_deg))
    x, y, z = axis
    k = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
    return np.eye(3) * c + s * k + (1 - c) * np.outer(axis, axis)


def tilted_camera(center_xy, altitude: float, focal: float, width: int, height: int,
                  tilt_deg: float, tilt_axis=(1.0, 0.0, 0.0)) -> CameraModel:
    """Nadir camera tilted by tilt_deg about a world axis through its center."""
    base = nadir_camera(center_xy, altitude, focal, width, height)
    tilt = _rotation_about(tilt_axis, tilt_deg)
    rotation = base.rotation @ tilt.T
    position = base.center
    return CameraModel(fx=focal, fy=focal, cx=width / 2.0, cy=height / 2.0,
                       rotation=rotation, translation=-rotation @ position,
                       width=width, height=height)
