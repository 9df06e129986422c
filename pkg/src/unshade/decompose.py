"""Albedo-shading decomposition core.

The single unknown of the illumination model, given geometry, is the
per-channel sun/sky ratio. It is estimated from pixel pairs straddling
cast-shadow boundaries that plausibly share albedo: for such a pair the
albedo cancels and the ratio follows from the radiance difference. Pair
samples are cleaned with a two-component Gaussian mixture whose
low-variance component tracks the true ratio and whose high-variance
component absorbs outliers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_same_shape
from .geometry import GeometryBuffers
from .illum import ShadingMaps
from .image import BinaryMask, LinearImage

DEFAULT_EPS_DENOMINATOR = 1e-4
MAX_SKY_SHADING_PAIR_DIFF = 0.1


@dataclass(frozen=True)
class LitShadowPair:
    """One accepted lit/shadow pixel pair; coordinates are (row, col)."""

    lit_pixel: tuple[int, int]
    shadow_pixel: tuple[int, int]
    i_lit: np.ndarray        # per-channel radiance at the lit pixel
    i_shadow: np.ndarray     # per-channel radiance at the shadow pixel
    s_sun_lit: float
    s_sky_lit: float
    s_sky_shadow: float


@dataclass
class ChannelMixture:
    """Diagnostics of one per-channel mixture fit."""

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray
    responsibility_counts: np.ndarray
    signal_index: int
    n_iter: int
    degenerate: bool

    @property
    def signal_mean(self) -> float:
        return float(self.means[self.signal_index])


@dataclass
class SunSkyRatio:
    """Per-channel sun/sky ratio with the mixture diagnostics behind it."""

    phi: np.ndarray                     # (3,) positive, finite
    channels: list[ChannelMixture]
    sample_count: int

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)
        if not np.isfinite(self.phi).all() or (self.phi <= 0).any():
            raise ValueError(f"ratio must be finite and positive, got {self.phi}")

    def to_record(self) -> dict:
        return {
            "phi": [float(v) for v in self.phi],
            "sample_count": self.sample_count,
            "channels": [
                {
                    "means": [float(v) for v in ch.means],
                    "variances": [float(v) for v in ch.variances],
                    "weights": [float(v) for v in ch.weights],
                    "responsibility_counts": [float(v) for v in ch.responsibility_counts],
                    "signal_index": ch.signal_index,
                    "n_iter": ch.n_iter,
                    "degenerate": ch.degenerate,
                }
                for ch in self.channels
            ],
        }


@dataclass
class PairFilterConfig:
    """Geometric/photometric gates for lit-shadow pair mining.

    min_shadow_brightness < 0 means "1% of the image's 99th-percentile
    radiance", resolved per image at detection time.
    """

    boundary_search_radius: int = 5
    max_normal_angle: float = 18.0        # degrees
    max_depth_diff: float = 0.5           # meters
    min_shadow_brightness: float = -1.0   # radiance units; negative = auto
    min_pairs: int = 50

    def __post_init__(self):
        if (self.boundary_search_radius <= 0 or self.max_normal_angle <= 0
                or self.max_depth_diff <= 0 or self.min_pairs <= 0):
            raise ValueError("pair filter parameters must be positive")

    def resolve_brightness(self, img: LinearImage) -> float:
        if self.min_shadow_brightness >= 0:
            return self.min_shadow_brightness
        return 0.01 * float(np.percentile(img.data, 99.0))


def shadow_boundary(sun_vis: BinaryMask, hit: BinaryMask) -> BinaryMask:
    """Shadow-side boundary: hit pixels in shadow with an 8-adjacent lit pixel."""
    lit = sun_vis.bits & hit.bits
    near_lit = ndimage.binary_dilation(lit, structure=np.ones((3, 3), bool))
    return BinaryMask(near_lit & ~sun_vis.bits & hit.bits)


def _search_offsets(radius: int) -> np.ndarray:
    """Window offsets within `radius`, sorted by distance then row/col for
    deterministic nearest-first matching."""
    span = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(span, span, indexing="ij")
    d2 = dy ** 2 + dx ** 2
    keep = (d2 > 0) & (d2 <= radius ** 2)
    order = np.lexsort((dx[keep], dy[keep], d2[keep]))
    return np.stack([dy[keep][order], dx[keep][order]], axis=1)


def detect_lit_shadow_pairs(img: LinearImage, buffers: GeometryBuffers,
                            shading: ShadingMaps, cfg: PairFilterConfig,
                            sun_vis: BinaryMask | None = None,
                            ) -> list[LitShadowPair]:
    """Pair every shadow-boundary pixel with its nearest lit pixel that passes
    the normal/depth/brightness gates; at most one pair per shadow pixel.

    The sun-visibility mask defaults to `s_sun > 0`; pass the exact mask when
    available (grazing surfaces have s_sun ~ 0 while still sunlit).
    """
    check_same_shape(img.data, buffers.depth, shading.s_sun,
                     names=["image", "buffers", "shading"])
    h, w = buffers.depth.shape
    if sun_vis is None:
        sun_vis = BinaryMask(shading.s_sun > 0.0)
    boundary = shadow_boundary(sun_vis, buffers.hit)

    sy, sx = np.nonzero(boundary.bits)
    if sy.size == 0:
        return []

    min_brightness = cfg.resolve_brightness(img)
    cos_limit = math.cos(math.radians(cfg.max_normal_angle))
    normals = buffers.normal.astype(np.float64)
    depth = buffers.depth.astype(np.float64)
    lit_ok = (sun_vis.bits & buffers.hit.bits & shading.valid.bits
              & (shading.s_sun > 0.0))

    shadow_bright = img.data[sy, sx].min(axis=1) >= min_brightness
    valid_shadow = shading.valid.bits[sy, sx] & shadow_bright
    matched = np.full(sy.size, -1, dtype=np.int64)

    for dy, dx in _search_offsets(cfg.boundary_search_radius):
        open_idx = np.nonzero((matched < 0) & valid_shadow)[0]
        if open_idx.size == 0:
            break
        ly = sy[open_idx] + dy
        lx = sx[open_idx] + dx
        inside = (ly >= 0) & (ly < h) & (lx >= 0) & (lx < w)
        open_idx = open_idx[inside]
        ly, lx = ly[inside], lx[inside]
        ok = lit_ok[ly, lx]
        cos_n = np.einsum("ij,ij->i", normals[sy[open_idx], sx[open_idx]],
                          normals[ly, lx])
        ok &= cos_n >= cos_limit
        ok &= np.abs(depth[ly, lx] - depth[sy[open_idx], sx[open_idx]]) <= cfg.max_depth_diff
        ok &= np.abs(shading.s_sky[ly, lx] - shading.s_sky[sy[open_idx], sx[open_idx]]) \
            <= MAX_SKY_SHADING_PAIR_DIFF
        sel = open_idx[ok]
        matched[sel] = ly[ok].astype(np.int64) * w + lx[ok]

    pairs = []
    for i in np.nonzero(matched >= 0)[0]:
        ly, lx = divmod(int(matched[i]), w)
        py, px = int(sy[i]), int(sx[i])
        pairs.append(LitShadowPair(
            lit_pixel=(ly, lx), shadow_pixel=(py, px),
            i_lit=img.data[ly, lx].astype(np.float64),
            i_shadow=img.data[py, px].astype(np.float64),
            s_sun_lit=float(shading.s_sun[ly, lx]),
            s_sky_lit=float(shading.s_sky[ly, lx]),
            s_sky_shadow=float(shading.s_sky[py, px])))
    return pairs


def phi_per_pair(pair: LitShadowPair) -> np.ndarray | None:
    """Per-channel ratio sample from one pair; None when any channel is
    non-finite or non-positive (rejected, not an error).

    The sky term is evaluated at the shadow pixel; the pair filter already
    bounds the lit/shadow sky difference.
    """
    if pair.s_sun_lit <= 0.0 or (pair.i_shadow <= 0.0).any():
        return None
    phi = pair.s_sky_shadow * (pair.i_lit - pair.i_shadow) / (pair.s_sun_lit * pair.i_shadow)
    if not np.isfinite(phi).all() or (phi <= 0.0).any():
        return None
    return phi


def phi_samples(pairs) -> np.ndarray:
    """Stack accepted per-pair ratio samples into an (N, 3) array."""
    rows = [s for s in (phi_per_pair(p) for p in pairs) if s is not None]
    return np.asarray(rows, dtype=np.float64).reshape(-1, 3)


class TwoComponentGaussianMixture(BaseEstimator):
    """1-D EM fit of a narrow signal Gaussian plus a wide noise Gaussian.

    Initialization: signal at the sample median with 0.25x the sample
    variance, noise at the sample mean with 4x; equal weights. The signal
    component is the one with the smaller fitted variance. The model assumes
    the variances differ strongly; when the fit ends with comparable
    variances (within `tie_ratio`) the variance criterion is uninformative
    and the tie breaks toward the larger mixture weight — this also guards
    against the noise component collapsing onto a few duplicated outliers.
    The log-likelihood is asserted nondecreasing every iteration.
    """

    def __init__(self, max_iter=200, tol=1e-8, variance_floor=1e-8,
                 tie_ratio=0.25):
        self.max_iter = max_iter
        self.tol = tol
        self.variance_floor = variance_floor
        self.tie_ratio = tie_ratio

    def fit(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.size < 2:
            raise ValueError(f"need at least 2 samples, got {x.size}")
        spread = x.var()
        if spread == 0.0:
            v = float(x[0])
            self.means_ = np.array([v, v])
            self.variances_ = np.zeros(2)
            self.weights_ = np.array([1.0, 0.0])
            self.responsibility_counts_ = np.array([float(x.size), 0.0])
            self.signal_index_ = 0
            self.degenerate_ = True
            self.n_iter_ = 0
            self.log_likelihoods_ = []
            return self

        means = np.array([np.median(x), x.mean()])
        variances = np.maximum(np.array([0.25 * spread, 4.0 * spread]),
                               self.variance_floor)
        weights = np.array([0.5, 0.5])

        def log_pdf(mu, var):
            return -0.5 * (np.log(2 * np.pi * var) + (x - mu) ** 2 / var)

        prev_ll = -np.inf
        lls = []
        n_iter = 0
        for n_iter in range(1, self.max_iter + 1):
            log_joint = np.stack([np.log(weights[k]) + log_pdf(means[k], variances[k])
                                  for k in range(2)])
            log_norm = np.logaddexp(log_joint[0], log_joint[1])
            ll = float(log_norm.sum())
            assert ll >= prev_ll - 1e-9 * max(1.0, abs(prev_ll)), \
                f"EM log-likelihood decreased: {prev_ll} -> {ll}"
            lls.append(ll)
            resp = np.exp(log_joint - log_norm)
            counts = resp.sum(axis=1)
            if (counts == 0).any():
                break
            means = (resp @ x) / counts
            variances = np.maximum(
                np.array([(resp[k] @ (x - means[k]) ** 2) / counts[k] for k in range(2)]),
                self.variance_floor)
            weights = counts / x.size
            if ll - prev_ll < self.tol and n_iter > 1:
                break
            prev_ll = ll

        if variances.min() > self.tie_ratio * variances.max():
            signal = int(np.argmax(weights))
        else:
            signal = int(np.argmin(variances))
        self.means_ = means
        self.variances_ = variances
        self.weights_ = weights
        self.responsibility_counts_ = counts
        self.signal_index_ = signal
        self.degenerate_ = False
        self.n_iter_ = n_iter
        self.log_likelihoods_ = lls
        return self

    @property
    def signal_mean_(self) -> float:
        return float(self.means_[self.signal_index_])

    def diagnostics(self) -> ChannelMixture:
        return ChannelMixture(
            means=self.means_.copy(), variances=self.variances_.copy(),
            weights=self.weights_.copy(),
            responsibility_counts=self.responsibility_counts_.copy(),
            signal_index=self.signal_index_, n_iter=self.n_iter_,
            degenerate=self.degenerate_)


def fit_phi_gmm(samples: np.ndarray, max_iter: int = 200, tol: float = 1e-8,
                min_samples: int = 50) -> SunSkyRatio:
    """Fit each channel's ratio independently and take the signal means."""
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 3)
    if samples.shape[0] < min_samples:
        raise ValueError(f"need >= {min_samples} ratio samples, got {samples.shape[0]}")
    channels = []
    phi = np.empty(3)
    for c in range(3):
        gmm = TwoComponentGaussianMixture(max_iter=max_iter, tol=tol).fit(samples[:, c])
        channels.append(gmm.diagnostics())
        phi[c] = gmm.signal_mean_
    return SunSkyRatio(phi=phi, channels=channels, sample_count=samples.shape[0])


def _broadcast_phi(phi) -> np.ndarray:
    if isinstance(phi, SunSkyRatio):
        return phi.phi
    return np.asarray(phi, dtype=np.float64).reshape(-1)


def shading_denominator(phi, shading: ShadingMaps) -> np.ndarray:
    """phi * S_sun + S_sky per channel, shape (H, W, C)."""
    p = _broadcast_phi(phi)
    return (p[None, None, :] * shading.s_sun[:, :, None].astype(np.float64)
            + shading.s_sky[:, :, None].astype(np.float64))


def recover_albedo(img: LinearImage, phi, shading: ShadingMaps,
                   eps_denominator: float = DEFAULT_EPS_DENOMINATOR,
                   ) -> tuple[LinearImage, BinaryMask]:
    """Albedo = I / max(phi*S_sun + S_sky, eps). The second return flags
    pixels where the clamp fired or the shading is invalid."""
    check_same_shape(img.data, shading.s_sun, names=["image", "shading"])
    denom = shading_denominator(phi, shading)
    clamped = (denom < eps_denominator).any(axis=2) | ~shading.valid.bits
    albedo = img.data.astype(np.float64) / np.maximum(denom, eps_denominator)
    return LinearImage(albedo.astype(np.float32)), BinaryMask(clamped)


def compose_image(albedo: LinearImage, phi, shading: ShadingMaps) -> LinearImage:
    """Forward model: I = R * (phi * S_sun + S_sky), channel-wise."""
    check_same_shape(albedo.data, shading.s_sun, names=["albedo", "shading"])
    radiance = albedo.data.astype(np.float64) * shading_denominator(phi, shading)
    return LinearImage(radiance.astype(np.float32))


def extract_shading(img: LinearImage, albedo: LinearImage,
                    eps: float = 1e-6) -> LinearImage:
    """Inverse-Retinex shading S = I / max(R, eps); recombining an edited
    albedo with this S preserves the original lighting."""
    check_same_shape(img.data, albedo.data, names=["image", "albedo"])
    s = img.data.astype(np.float64) / np.maximum(albedo.data.astype(np.float64), eps)
    return LinearImage(s.astype(np.float32))


def _disk(radius: int) -> np.ndarray:
    if radius <= 0:
        return np.ones((1, 1), bool)
    span = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(span, span, indexing="ij")
    return dy ** 2 + dx ** 2 <= radius ** 2


def detect_geometry_errors(buffers: GeometryBuffers,
                           threshold_scale: float = 3.0) -> BinaryMask:
    """Geometric-error pixels: depth steps larger than threshold_scale x the
    median absolute neighbor difference, plus hit pixels adjacent to misses."""
    depth = buffers.depth.astype(np.float64)
    hit = buffers.hit.bits
    diffs = []
    for axis in (0, 1):
        step = np.abs(depth - np.roll(depth, -1, axis=axis))
        both = hit & np.roll(hit, -1, axis=axis)
        if axis == 0:
            both[-1, :] = False
        else:
            both[:, -1] = False
        diffs.append(step[both])
    steps = np.concatenate(diffs) if diffs else np.zeros(0)
    base = float(np.median(steps)) if steps.size else 0.0
    limit = threshold_scale * base if base > 0 else np.inf

    flags = np.zeros_like(hit)
    for axis, shift in ((0, 1), (0, -1), (1, 1), (1, -1)):
        neighbor = np.roll(depth, shift, axis=axis)
        neighbor_hit = np.roll(hit, shift, axis=axis)
        inbounds = np.ones_like(hit)  # reject the wrapped border row/column
        edge = slice(0, 1) if shift == 1 else slice(-1, None)
        if axis == 0:
            inbounds[edge, :] = False
        else:
            inbounds[:, edge] = False
        step = hit & neighbor_hit & inbounds & (np.abs(depth - neighbor) > limit)
        flags |= step
        flags |= hit & inbounds & ~neighbor_hit  # miss-adjacent

    return BinaryMask(flags & hit)


def build_confidence_mask(buffers: GeometryBuffers, sun_vis: BinaryMask,
                          mesh_boundary: BinaryMask | None = None,
                          dilation_radius: int = 3) -> BinaryMask:
    """Confident = hit, away from dilated shadow boundaries and dilated
    geometric-error regions."""
    if mesh_boundary is None:
        mesh_boundary = detect_geometry_errors(buffers)
    check_same_shape(buffers.depth, sun_vis.bits, mesh_boundary.bits,
                     names=["buffers", "sun_vis", "mesh_boundary"])
    selem = _disk(dilation_radius)
    bad = shadow_boundary(sun_vis, buffers.hit).bits | mesh_boundary.bits
    bad = ndimage.binary_dilation(bad, structure=selem)
    return BinaryMask(buffers.hit.bits & ~bad)


class AlbedoDecomposer(BaseEstimator, TransformerMixin):
    """Estimator wrapper over the decomposition: `fit` mines lit-shadow pairs
    and fits the per-channel sun/sky ratio; `transform` recovers albedo for
    any view rendered under the same illumination.

    Fitted attributes: ratio_ (SunSkyRatio), pairs_, n_pairs_.
    """

    def __init__(self, boundary_search_radius=5, max_normal_angle=18.0,
                 max_depth_diff=0.5, min_shadow_brightness=-1.0, min_pairs=50,
                 gmm_max_iter=200, gmm_tol=1e-8,
                 eps_denominator=DEFAULT_EPS_DENOMINATOR):
        self.boundary_search_radius = boundary_search_radius
        self.max_normal_angle = max_normal_angle
        self.max_depth_diff = max_depth_diff
        self.min_shadow_brightness = min_shadow_brightness
        self.min_pairs = min_pairs
        self.gmm_max_iter = gmm_max_iter
        self.gmm_tol = gmm_tol
        self.eps_denominator = eps_denominator

    def pair_config(self) -> PairFilterConfig:
        return PairFilterConfig(
            boundary_search_radius=self.boundary_search_radius,
            max_normal_angle=self.max_normal_angle,
            max_depth_diff=self.max_depth_diff,
            min_shadow_brightness=self.min_shadow_brightness,
            min_pairs=self.min_pairs)

    def fit(self, image: LinearImage, buffers: GeometryBuffers = None,
            shading: ShadingMaps = None, sun_vis: BinaryMask = None):
        if buffers is None or shading is None:
            raise ValueError("fit needs geometry buffers and shading maps")
        self.pairs_ = detect_lit_shadow_pairs(
            image, buffers, shading, self.pair_config(), sun_vis=sun_vis)
        self.n_pairs_ = len(self.pairs_)
        samples = phi_samples(self.pairs_)
        self.ratio_ = fit_phi_gmm(samples, max_iter=self.gmm_max_iter,
                                  tol=self.gmm_tol, min_samples=self.min_pairs)
        return self

    def transform(self, image: LinearImage, shading: ShadingMaps = None,
                  ) -> LinearImage:
        if shading is None:
            raise ValueError("transform needs the view's shading maps")
        albedo, self.clamped_ = recover_albedo(
            image, self.ratio_, shading, eps_denominator=self.eps_denominator)
        return albedo

    def fit_transform(self, image: LinearImage, buffers: GeometryBuffers = None,
                      shading: ShadingMaps = None, **kwargs) -> LinearImage:
        return self.fit(image, buffers, shading, **kwargs).transform(image, shading)

    def inverse_transform(self, albedo: LinearImage,
                          shading: ShadingMaps = None) -> LinearImage:
        if shading is None:
            raise ValueError("inverse_transform needs the view's shading maps")
        return compose_image(albedo, self.ratio_, shading)
