"""Physics-based outdoor albedo/shading decomposition toolkit.

The forward model is I = R * (phi * S_sun + S_sky) per channel, with
normalized sun/sky shading derived from scene geometry and a per-channel
sun/sky ratio phi estimated from lit-shadow pixel pairs.
"""

from .decompose import (
    AlbedoDecomposer,
    LitShadowPair,
    PairFilterConfig,
    SunSkyRatio,
    TwoComponentGaussianMixture,
    build_confidence_mask,
    compose_image,
    detect_lit_shadow_pairs,
    extract_shading,
    fit_phi_gmm,
    phi_per_pair,
    phi_samples,
    recover_albedo,
)
from .geometry import (
    CameraModel,
    GeometryBuffers,
    TriangleMesh,
    compute_sky_visibility,
    compute_sun_visibility,
    render_geometry,
)
from .illum import (
    ExposureStack,
    ShadingMaps,
    SkyDome,
    SunPosition,
    align_sky_dome,
    compute_sky_shading_measured,
    compute_sky_shading_uniform,
    compute_sun_shading,
    fisheye_to_equirect,
    merge_hdr,
    sun_direction,
)
from .image import (
    BinaryMask,
    LinearImage,
    downsample_box,
    read_linear_exr,
    to_display_gray8,
    write_linear_exr,
)
from .changedet import ChangeConfig, change_mask
from .metrics import MetricReport, compare, psnr, ssim
from .synth import SceneSpec, SyntheticScene, build_scene, render_ground_truth

__all__ = [
    "AlbedoDecomposer",
    "BinaryMask",
    "CameraModel",
    "ChangeConfig",
    "ExposureStack",
    "GeometryBuffers",
    "LinearImage",
    "LitShadowPair",
    "MetricReport",
    "PairFilterConfig",
    "SceneSpec",
    "ShadingMaps",
    "SkyDome",
    "SunPosition",
    "SunSkyRatio",
    "SyntheticScene",
    "TriangleMesh",
    "TwoComponentGaussianMixture",
    "align_sky_dome",
    "build_confidence_mask",
    "build_scene",
    "change_mask",
    "compare",
    "compose_image",
    "compute_sky_shading_measured",
    "compute_sky_shading_uniform",
    "compute_sky_visibility",
    "compute_sun_shading",
    "compute_sun_visibility",
    "detect_lit_shadow_pairs",
    "downsample_box",
    "extract_shading",
    "fisheye_to_equirect",
    "fit_phi_gmm",
    "merge_hdr",
    "phi_per_pair",
    "phi_samples",
    "psnr",
    "read_linear_exr",
    "recover_albedo",
    "render_geometry",
    "render_ground_truth",
    "ssim",
    "sun_direction",
    "to_display_gray8",
    "write_linear_exr",
]

__version__ = "0.1.0"
