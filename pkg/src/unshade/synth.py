"""Synthetic-scene oracle: parametric plane+box scenes with known albedo,
geometry, and sun/sky ratio, rendered through the exact forward model.

Scenes are deliberately restricted to a ground plane and axis-aligned boxes
so shadow footprints, sky visibility, and depth all have closed forms that
tests can compute independently.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .decompose import compose_image
from .geometry import (
    CameraModel,
    GeometryBuffers,
    TriangleMesh,
    compute_sun_visibility,
    nadir_camera,
    render_geometry,
    tilted_camera,
)
from .illum import ShadingMaps, SunPosition, compute_sky_shading_uniform, compute_sun_shading
from .image import BinaryMask, LinearImage


@dataclass
class BoxSpec:
    center_xy: tuple[float, float]
    size: tuple[float, float, float]   # x, y extents and height, meters
    albedo: tuple[float, float, float] | None = None   # None: drawn from the seed


@dataclass
class SceneSpec:
    """Parameters of a synthetic validation scene."""

    plane_size: float = 100.0
    plane_cells: int = 8                # checker cells per side
    boxes: list[BoxSpec] = field(default_factory=lambda: [
        BoxSpec(center_xy=(-15.0, 5.0), size=(10.0, 12.0, 8.0)),
        BoxSpec(center_xy=(12.0, -8.0), size=(8.0, 8.0, 12.0)),
    ])
    phi_true: tuple[float, float, float] = (6.0, 5.0, 4.0)
    sun_azimuth: float = 135.0
    sun_elevation: float = 35.0
    camera_altitude: float = 80.0
    camera_focal: float | None = None   # None: 0.9 * image_width (wide view)
    image_width: int = 160
    image_height: int = 120
    n_cameras: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.sun_elevation <= 0:
            raise ValueError("scenes are daytime: sun elevation must be > 0")
        if self.plane_cells < 1 or self.plane_size <= 0:
            raise ValueError("bad plane parameters")


@dataclass
class SyntheticScene:
    mesh: TriangleMesh
    tri_albedo: np.ndarray              # (M, 3) in (0, 1]
    phi_true: np.ndarray                # (3,)
    sun: SunPosition
    cameras: list[CameraModel]
    spec: SceneSpec

    def __post_init__(self):
        if ((self.tri_albedo <= 0) | (self.tri_albedo > 1)).any():
            raise ValueError("per-triangle albedo must lie in (0, 1]")


@dataclass
class GroundTruth:
    """Every layer of one rendered view."""

    image: LinearImage
    albedo: LinearImage
    buffers: GeometryBuffers
    shading: ShadingMaps
    sun_visibility: BinaryMask


def _box_mesh(center_xy, size) -> tuple[np.ndarray, np.ndarray]:
    cx, cy = center_xy
    hx, hy, hz = size[0] / 2.0, size[1] / 2.0, size[2]
    v = np.array([
        [cx - hx, cy - hy, 0.0], [cx + hx, cy - hy, 0.0],
        [cx + hx, cy + hy, 0.0], [cx - hx, cy + hy, 0.0],
        [cx - hx, cy - hy, hz], [cx + hx, cy - hy, hz],
        [cx + hx, cy + hy, hz], [cx - hx, cy + hy, hz],
    ])
    f = np.array([
        [0, 1, 5], [0, 5, 4],   # south face
        [1, 2, 6], [1, 6, 5],   # east
        [2, 3, 7], [2, 7, 6],   # north
        [3, 0, 4], [3, 4, 7],   # west
        [4, 5, 6], [4, 6, 7],   # top
    ], dtype=np.int32)
    return v, f


def build_scene(spec: SceneSpec) -> SyntheticScene:
    """Deterministic mesh + per-triangle albedo from the spec and its seed."""
    rng = np.random.default_rng(spec.seed)
    half = spec.plane_size / 2.0
    cells = spec.plane_cells
    edges = np.linspace(-half, half, cells + 1)

    vertices = []
    faces = []
    albedo = []
    color_a = rng.uniform(0.25, 0.9, 3)
    color_b = rng.uniform(0.05, 0.45, 3)
    for i in range(cells):
        for j in range(cells):
            base = len(vertices)
            vertices.extend([
                [edges[j], edges[i], 0.0], [edges[j + 1], edges[i], 0.0],
                [edges[j + 1], edges[i + 1], 0.0], [edges[j], edges[i + 1], 0.0]])
            faces.append([base, base + 1, base + 2])
            faces.append([base, base + 2, base + 3])
            color = color_a if (i + j) % 2 == 0 else color_b
            albedo.extend([color, color])

    for box in spec.boxes:
        v, f = _box_mesh(box.center_xy, box.size)
        base = len(vertices)
        vertices.extend(v.tolist())
        faces.extend((f + base).tolist())
        color = (np.asarray(box.albedo, dtype=np.float64) if box.albedo is not None
                 else rng.uniform(0.2, 0.95, 3))
        albedo.extend([color] * len(f))

    if not spec.boxes:
        warnings.warn("scene has no shadow casters; no lit-shadow pairs will exist")

    mesh = TriangleMesh(np.asarray(vertices), np.asarray(faces, dtype=np.int32))
    sun = SunPosition(azimuth=spec.sun_azimuth, elevation=spec.sun_elevation)

    focal = spec.camera_focal if spec.camera_focal else 0.9 * spec.image_width
    cameras = []
    offsets = np.linspace(-0.12, 0.12, spec.n_cameras) * spec.plane_size
    for k in range(spec.n_cameras):
        if k % 2 == 0:
            cameras.append(nadir_camera(
                (offsets[k], -offsets[k] / 2.0), spec.camera_altitude,
                focal, spec.image_width, spec.image_height))
        else:
            cameras.append(tilted_camera(
                (offsets[k], offsets[k] / 3.0), spec.camera_altitude,
                focal, spec.image_width, spec.image_height,
                tilt_deg=8.0))

    return SyntheticScene(mesh=mesh, tri_albedo=np.asarray(albedo),
                          phi_true=np.asarray(spec.phi_true, dtype=np.float64),
                          sun=sun, cameras=cameras, spec=spec)


def albedo_image(scene: SyntheticScene, buffers: GeometryBuffers) -> LinearImage:
    """Ground-truth albedo layer: per-triangle albedo looked up by the
    primary-hit triangle id; zero on misses."""
    prim = buffers.prim_index
    flat = np.where(prim >= 0, prim, 0)
    albedo = scene.tri_albedo[flat]
    albedo[~buffers.hit.bits] = 0.0
    return LinearImage(albedo.astype(np.float32))


def render_ground_truth(scene: SyntheticScene, cam_index: int,
                        sky_samples: int = 128, seed: int = 0) -> GroundTruth:
    """Render all layers of one view and compose the radiance image
    I = R * (phi * S_sun + S_sky) from them."""
    cam = scene.cameras[cam_index]
    buffers = render_geometry(scene.mesh, cam)
    sun_vis = compute_sun_visibility(scene.mesh, buffers, cam, scene.sun.direction)
    s_sun = compute_sun_shading(buffers.normal, sun_vis, scene.sun)
    s_sky = compute_sky_shading_uniform(buffers, scene.mesh, cam, sky_samples, seed)
    shading = ShadingMaps(s_sun=s_sun, s_sky=s_sky, valid=buffers.hit)
    albedo = albedo_image(scene, buffers)
    image = compose_image(albedo, scene.phi_true, shading)
    return GroundTruth(image=image, albedo=albedo, buffers=buffers,
                       shading=shading, sun_visibility=sun_vis)
