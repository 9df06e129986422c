"""Batch driver: dataset decomposition runs, sky-dome tooling, change
detection, metrics, and synthetic fixture generation.

Exit codes: 0 success, 1 partial failure, 2 configuration error.

Dataset manifest: a header line starting with '#', then one record per
image with whitespace-separated fields

    id image_path fx fy cx cy r00 r01 r02 r10 r11 r12 r20 r21 r22
    tx ty tz width height utc lat lon

utc/lat/lon may be '-' when the sun is given explicitly in the config.
Config precedence: CLI flags > config-file values > built-in defaults; the
effective configuration is echoed into the output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import multiprocessing
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import exr
from .changedet import ChangeConfig, blob_count, change_mask
from .decompose import (
    PairFilterConfig,
    build_confidence_mask,
    detect_lit_shadow_pairs,
    fit_phi_gmm,
    phi_samples,
    recover_albedo,
)
from .geometry import CameraModel, TriangleMesh, compute_sun_visibility, render_geometry
from .illum import (
    ExposureStack,
    ShadingMaps,
    SkyCaptureManifest,
    SkyDome,
    SunPosition,
    align_sky_dome,
    compute_sky_shading_measured,
    compute_sun_shading,
    compute_sky_shading_uniform,
    fisheye_to_equirect,
    merge_hdr,
    sky_shading_measured_raw,
    sun_direction,
)
from .image import (
    BinaryMask,
    LinearImage,
    read_linear_exr,
    resize_bilinear,
    write_linear_exr,
    write_mask_png,
)
from .metrics import compare
from .synth import SceneSpec, build_scene, render_ground_truth


class ConfigError(ValueError):
    pass


@dataclass
class ManifestRecord:
    image_id: str
    image_path: str
    camera: CameraModel
    utc: str
    lat: str
    lon: str


def parse_dataset_manifest(path) -> list[ManifestRecord]:
    records = []
    seen = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 23:
                raise ConfigError(f"{path}:{lineno}: expected 23 fields, got {len(parts)}")
            image_id = parts[0]
            if image_id in seen:
                raise ConfigError(f"{path}:{lineno}: duplicate image id {image_id!r}")
            seen.add(image_id)
            vals = [float(x) for x in parts[2:20]]
            cam = CameraModel(fx=vals[0], fy=vals[1], cx=vals[2], cy=vals[3],
                              rotation=np.asarray(vals[4:13]).reshape(3, 3),
                              translation=np.asarray(vals[13:16]),
                              width=int(vals[16]), height=int(vals[17]))
            records.append(ManifestRecord(
                image_id=image_id, image_path=parts[1], camera=cam,
                utc=parts[20], lat=parts[21], lon=parts[22]))
    if not records:
        raise ConfigError(f"{path}: no image records")
    return records


@dataclass
class RunConfig:
    """Everything a decompose run needs; mirrors the CLI flags."""

    manifest: str = ""
    mesh: str = ""
    out_dir: str = "out"
    sun_azimuth: float | None = None
    sun_elevation: float | None = None
    sky_mode: str = "uniform"          # uniform | measured
    dome: str | None = None
    sky_samples: int = 64
    seed: int = 0
    workers: int = 1
    phi_pooling: str = "image"         # image | flight
    pair_radius: int = 5
    max_normal_angle: float = 18.0
    max_depth_diff: float = 0.5
    min_shadow_brightness: float = -1.0
    min_pairs: int = 50
    gmm_max_iter: int = 200
    gmm_tol: float = 1e-8
    eps_denominator: float = 1e-4
    confidence_dilation: int = 3
    dump_pairs: bool = False

    def __post_init__(self):
        if self.sky_mode not in ("uniform", "measured"):
            raise ConfigError(f"sky_mode must be uniform|measured, got {self.sky_mode!r}")
        if self.sky_mode == "measured" and not self.dome:
            raise ConfigError("sky_mode=measured requires a dome path")
        if self.phi_pooling not in ("image", "flight"):
            raise ConfigError(f"phi_pooling must be image|flight, got {self.phi_pooling!r}")
        if (self.sun_azimuth is None) != (self.sun_elevation is None):
            raise ConfigError("explicit sun needs both azimuth and elevation")
        if self.workers < 1 or self.sky_samples < 16 or self.seed < 0:
            raise ConfigError("workers >= 1, sky_samples >= 16, seed >= 0 required")

    def pair_config(self) -> PairFilterConfig:
        return PairFilterConfig(
            boundary_search_radius=self.pair_radius,
            max_normal_angle=self.max_normal_angle,
            max_depth_diff=self.max_depth_diff,
            min_shadow_brightness=self.min_shadow_brightness,
            min_pairs=self.min_pairs)


def _merge_config(cls, config_path: str | None, overrides: dict):
    values = {}
    if config_path:
        try:
            with open(config_path) as fh:
                file_values = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {config_path}: {e}") from e
        known = {f.name for f in fields(cls)}
        unknown = set(file_values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(file_values)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**values)


def _sun_for_record(cfg: RunConfig, rec: ManifestRecord) -> SunPosition:
    if cfg.sun_azimuth is not None:
        return SunPosition(azimuth=cfg.sun_azimuth, elevation=cfg.sun_elevation)
    if rec.utc == "-" or rec.lat == "-" or rec.lon == "-":
        raise ConfigError(
            f"image {rec.image_id}: manifest has no utc/lat/lon and no explicit "
            "sun was configured")
    utc = datetime.fromisoformat(rec.utc.replace("Z", "+00:00"))
    if utc.tzinfo is None:
        utc = utc.replace(tzinfo=timezone.utc)
    return sun_direction(float(rec.lat), float(rec.lon), utc)


# Per-process caches so workers load the mesh and dome once.
_WORKER_MESH: dict[str, TriangleMesh] = {}
_WORKER_DOME: dict[str, SkyDome] = {}


def _get_mesh(path: str) -> TriangleMesh:
    if path not in _WORKER_MESH:
        _WORKER_MESH[path] = TriangleMesh.from_obj(path)
    return _WORKER_MESH[path]


def _get_dome(path: str, gain: float) -> SkyDome:
    key = f"{path}:{gain}"
    if key not in _WORKER_DOME:
        dome = SkyDome(read_linear_exr(path))
        dome.gain = gain
        _WORKER_DOME[key] = dome
    return _WORKER_DOME[key]


def _render_view(cfg: RunConfig, rec: ManifestRecord, dome_gain: float | None):
    mesh = _get_mesh(cfg.mesh)
    image = read_linear_exr(rec.image_path)
    if (image.height, image.width) != (rec.camera.height, rec.camera.width):
        raise ValueError(
            f"{rec.image_id}: image is {image.width}x{image.height} but the "
            f"camera says {rec.camera.width}x{rec.camera.height}")
    sun = _sun_for_record(cfg, rec)
    buffers = render_geometry(mesh, rec.camera)
    sun_vis = compute_sun_visibility(mesh, buffers, rec.camera, sun.direction)
    s_sun = compute_sun_shading(buffers.normal, sun_vis, sun)
    if cfg.sky_mode == "measured":
        dome = _get_dome(cfg.dome, dome_gain)
        s_sky = compute_sky_shading_measured(buffers, mesh, rec.camera, dome,
                                             cfg.sky_samples, cfg.seed)
    else:
        s_sky = compute_sky_shading_uniform(buffers, mesh, rec.camera,
                                            cfg.sky_samples, cfg.seed)
    shading = ShadingMaps(s_sun=s_sun, s_sky=s_sky, valid=buffers.hit)
    return image, buffers, sun_vis, shading


def _out_paths(out_dir: str, image_id: str) -> dict[str, Path]:
    base = Path(out_dir)
    return {
        "albedo": base / f"{image_id}_albedo.exr",
        "s_sun": base / f"{image_id}_s_sun.exr",
        "s_sky": base / f"{image_id}_s_sky.exr",
        "depth": base / f"{image_id}_depth.exr",
        "normal": base / f"{image_id}_normal.exr",
        "confidence": base / f"{image_id}_confidence.png",
        "phi": base / f"{image_id}_phi.json",
    }


def _write_phi_record(path: Path, record: dict) -> None:
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_pairs_csv(path: Path, pairs) -> None:
    from .decompose import phi_per_pair
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lit_y", "lit_x", "shadow_y", "shadow_x",
                         "phi_r", "phi_g", "phi_b"])
        for p in pairs:
            sample = phi_per_pair(p)
            if sample is None:
                continue
            writer.writerow([p.lit_pixel[0], p.lit_pixel[1],
                             p.shadow_pixel[0], p.shadow_pixel[1],
                             f"{sample[0]:.9g}", f"{sample[1]:.9g}",
                             f"{sample[2]:.9g}"])


def _decompose_stage1(task) -> dict:
    """Render + mine pairs for one image; write every layer except albedo."""
    cfg_dict, rec_fields, dome_gain = task
    cfg = RunConfig(**cfg_dict)
    rec = ManifestRecord(
        image_id=rec_fields["image_id"], image_path=rec_fields["image_path"],
        camera=CameraModel(**rec_fields["camera"]),
        utc=rec_fields["utc"], lat=rec_fields["lat"], lon=rec_fields["lon"])
    try:
        image, buffers, sun_vis, shading = _render_view(cfg, rec, dome_gain)
        pairs = detect_lit_shadow_pairs(image, buffers, shading,
                                        cfg.pair_config(), sun_vis=sun_vis)
        samples = phi_samples(pairs)
        confidence = build_confidence_mask(buffers, sun_vis,
                                           dilation_radius=cfg.confidence_dilation)
        paths = _out_paths(cfg.out_dir, rec.image_id)
        exr.write_exr(paths["s_sun"], shading.s_sun)
        exr.write_exr(paths["s_sky"], shading.s_sky)
        exr.write_exr(paths["depth"], buffers.depth)
        exr.write_exr(paths["normal"], buffers.normal)
        write_mask_png(confidence, paths["confidence"])
        if cfg.dump_pairs:
            _write_pairs_csv(Path(cfg.out_dir) / f"{rec.image_id}_pairs.csv", pairs)
        return {"id": rec.image_id, "status": "ok", "n_pairs": len(pairs),
                "samples": samples}
    except Exception as e:  # per-image failures must not sink the run
        return {"id": rec.image_id, "status": "failed", "error": str(e),
                "n_pairs": 0, "samples": np.zeros((0, 3))}


def _decompose_stage2(task) -> dict:
    """Recover + write albedo from the stage-1 layers and a ratio record."""
    cfg_dict, rec_fields, phi_record = task
    cfg = RunConfig(**cfg_dict)
    image_id = rec_fields["image_id"]
    try:
        paths = _out_paths(cfg.out_dir, image_id)
        image = read_linear_exr(rec_fields["image_path"])
        s_sun = exr.read_exr(paths["s_sun"])[:, :, 0]
        s_sky = exr.read_exr(paths["s_sky"])[:, :, 0]
        valid = BinaryMask(exr.read_exr(paths["depth"])[:, :, 0] > 0)
        shading = ShadingMaps(s_sun=s_sun, s_sky=s_sky, valid=valid)
        albedo, _clamped = recover_albedo(image, np.asarray(phi_record["phi"]),
                                          shading, cfg.eps_denominator)
        write_linear_exr(albedo, paths["albedo"])
        _write_phi_record(paths["phi"], phi_record)
        return {"id": image_id, "status": "ok"}
    except Exception as e:
        return {"id": image_id, "status": "failed", "error": str(e)}


def _record_fields(rec: ManifestRecord) -> dict:
    return {
        "image_id": rec.image_id, "image_path": rec.image_path,
        "camera": {
            "fx": rec.camera.fx, "fy": rec.camera.fy,
            "cx": rec.camera.cx, "cy": rec.camera.cy,
            "rotation": rec.camera.rotation, "translation": rec.camera.translation,
            "width": rec.camera.width, "height": rec.camera.height},
        "utc": rec.utc, "lat": rec.lat, "lon": rec.lon}


def _run_tasks(func, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    # spawn: forked children would inherit the parent's OpenMP thread state
    ctx = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
        return list(pool.map(func, tasks))


def _align_dome_gain(cfg: RunConfig, rec: ManifestRecord) -> float:
    """Solve the flight-wide least-squares dome gain on the first image."""
    mesh = _get_mesh(cfg.mesh)
    dome = SkyDome(read_linear_exr(cfg.dome))
    buffers = render_geometry(mesh, rec.camera)
    uniform = compute_sky_shading_uniform(buffers, mesh, rec.camera,
                                          cfg.sky_samples, cfg.seed)
    raw = sky_shading_measured_raw(buffers, mesh, rec.camera, dome,
                                   cfg.sky_samples, cfg.seed)
    return align_sky_dome(dome, uniform, raw, buffers.hit)


def run_decompose(cfg: RunConfig) -> int:
    records = parse_dataset_manifest(cfg.manifest)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.json", "w") as fh:
        json.dump(asdict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")

    dome_gain = None
    if cfg.sky_mode == "measured":
        dome_gain = _align_dome_gain(cfg, records[0])

    cfg_dict = asdict(cfg)
    stage1_tasks = [(cfg_dict, _record_fields(r), dome_gain) for r in records]
    stage1 = {r["id"]: r for r in _run_tasks(_decompose_stage1, stage1_tasks, cfg.workers)}

    pooled_record = None
    if cfg.phi_pooling == "flight":
        pooled = np.vstack([stage1[r.image_id]["samples"] for r in records
                            if stage1[r.image_id]["status"] == "ok"])
        if pooled.shape[0] >= cfg.min_pairs:
            ratio = fit_phi_gmm(pooled, max_iter=cfg.gmm_max_iter,
                                tol=cfg.gmm_tol, min_samples=cfg.min_pairs)
            pooled_record = {**ratio.to_record(), "pooled": True}

    stage2_tasks = []
    report_rows = []
    for rec in records:
        s1 = stage1[rec.image_id]
        if s1["status"] != "ok":
            report_rows.append({"id": rec.image_id, "status": "failed",
                                "error": s1.get("error", ""), "n_pairs": 0})
            continue
        if cfg.phi_pooling == "flight":
            # pooled mode: one flight-wide ratio for every image
            phi_record = pooled_record
            fail_reason = "too few pooled ratio samples across the flight"
        else:
            try:
                ratio = fit_phi_gmm(s1["samples"], max_iter=cfg.gmm_max_iter,
                                    tol=cfg.gmm_tol, min_samples=cfg.min_pairs)
                phi_record = {**ratio.to_record(), "pooled": False}
                fail_reason = ""
            except ValueError as e:
                phi_record = pooled_record  # None unless pooling was enabled
                fail_reason = f"ratio fit: {e}"
        if phi_record is None:
            report_rows.append({"id": rec.image_id, "status": "failed",
                                "error": fail_reason, "n_pairs": s1["n_pairs"]})
            continue
        stage2_tasks.append((cfg_dict, _record_fields(rec), phi_record))
        report_rows.append({"id": rec.image_id, "status": "pending",
                            "n_pairs": s1["n_pairs"]})

    stage2 = {r["id"]: r for r in _run_tasks(_decompose_stage2, stage2_tasks, cfg.workers)}
    for row in report_rows:
        if row["status"] != "pending":
            continue
        s2 = stage2[row["id"]]
        row["status"] = s2["status"]
        if s2["status"] != "ok":
            row["error"] = s2.get("error", "")

    n_failed = sum(1 for r in report_rows if r["status"] != "ok")
    report = {"images": report_rows, "n_images": len(records), "n_failed": n_failed}
    with open(out_dir / "run_report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0 if n_failed == 0 else 1


def run_skymerge(stack_manifest: str, out_path: str, fisheye_focal: float,
                 center_x: float, center_y: float, rotation_deg: float,
                 out_width: int, out_height: int, skip_projection: bool) -> int:
    manifest = SkyCaptureManifest.parse(stack_manifest)
    frames = []
    for p in manifest.frame_paths:
        img = read_linear_exr(p)
        frames.append(img.data[:, :, 0] if img.channels == 1
                      else img.data.mean(axis=2))
    stack = ExposureStack(frames=frames,
                          exposure_times=np.asarray(manifest.exposure_seconds))
    radiance = merge_hdr(stack)
    if skip_projection:
        write_linear_exr(radiance, out_path)
    else:
        if center_x < 0:
            center_x = radiance.width / 2.0
        if center_y < 0:
            center_y = radiance.height / 2.0
        dome = fisheye_to_equirect(radiance, fisheye_focal,
                                   (center_x, center_y), rotation_deg,
                                   out_width, out_height)
        write_linear_exr(dome.equirect, out_path)
    return 0


def run_changedetect(reference: str, source_dir: str, out_dir: str,
                     cfg: ChangeConfig) -> int:
    ref = read_linear_exr(reference)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for src_path in sorted(Path(source_dir).glob("*.exr")):
        src = read_linear_exr(src_path)
        mask = change_mask(ref, src, cfg)
        frame_id = src_path.stem
        write_mask_png(mask, out / f"{frame_id}_change.png")
        rows.append({"frame": frame_id, "changed_pixels": mask.count(),
                     "blobs": blob_count(mask)})
    with open(out / "changes.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["frame", "changed_pixels", "blobs"])
        writer.writeheader()
        writer.writerows(rows)
    return 0


def run_metrics(pred_dir: str, truth_dir: str, out_csv: str, space: str) -> int:
    truth_paths = sorted(Path(truth_dir).glob("*.exr"))
    if not truth_paths:
        raise ConfigError(f"no ground-truth EXRs in {truth_dir}")
    rows = []
    psnrs = []
    ssims = []
    for tp in truth_paths:
        pp = Path(pred_dir) / tp.name
        if not pp.exists():
            raise ConfigError(f"missing prediction for {tp.name}")
        truth = read_linear_exr(tp)
        pred = read_linear_exr(pp)
        if (pred.height, pred.width) != (truth.height, truth.width):
            pred = resize_bilinear(pred, truth.width, truth.height)
        report = compare(pred, truth, space=space)
        rows.append({"image": tp.stem, "psnr": report.psnr, "ssim": report.ssim,
                     "pixel_count": report.pixel_count})
        psnrs.append(report.psnr)
        ssims.append(report.ssim)
    rows.append({"image": "mean", "psnr": float(np.mean(psnrs)),
                 "ssim": float(np.mean(ssims)),
                 "pixel_count": int(np.sum([r["pixel_count"] for r in rows]))})
    with open(out_csv, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["image", "psnr", "ssim", "pixel_count"])
        writer.writeheader()
        writer.writerows(rows)
    return 0


def write_obj(mesh: TriangleMesh, path) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.triangles:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def _camera_record(cam: CameraModel) -> str:
    r = cam.rotation.reshape(-1)
    t = cam.translation
    return (f"{cam.fx:.9g} {cam.fy:.9g} {cam.cx:.9g} {cam.cy:.9g} "
            + " ".join(f"{x:.12g}" for x in r) + " "
            + " ".join(f"{x:.12g}" for x in t)
            + f" {cam.width} {cam.height}")


def run_synth(out_dir: str, spec: SceneSpec, sky_samples: int, seed: int) -> int:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene = build_scene(spec)
    write_obj(scene.mesh, out / "scene.obj")

    manifest_lines = ["# id image fx fy cx cy r00 r01 r02 r10 r11 r12 r20 r21 "
                      "r22 tx ty tz width height utc lat lon"]
    for k in range(len(scene.cameras)):
        gt = render_ground_truth(scene, k, sky_samples=sky_samples, seed=seed)
        stem = f"view{k:02d}"
        write_linear_exr(gt.image, out / f"{stem}.exr")
        write_linear_exr(gt.albedo, out / f"{stem}_albedo_true.exr")
        exr.write_exr(out / f"{stem}_s_sun_true.exr", gt.shading.s_sun)
        exr.write_exr(out / f"{stem}_s_sky_true.exr", gt.shading.s_sky)
        exr.write_exr(out / f"{stem}_depth_true.exr", gt.buffers.depth)
        exr.write_exr(out / f"{stem}_normal_true.exr", gt.buffers.normal)
        write_mask_png(gt.sun_visibility, out / f"{stem}_sun_vis.png")
        write_mask_png(gt.buffers.hit, out / f"{stem}_hit.png")
        manifest_lines.append(
            f"{stem} {out / (stem + '.exr')} {_camera_record(scene.cameras[k])} - - -")

    with open(out / "manifest.txt", "w") as fh:
        fh.write("\n".join(manifest_lines) + "\n")
    scene_info = {
        "phi_true": [float(v) for v in scene.phi_true],
        "sun_azimuth": scene.sun.azimuth, "sun_elevation": scene.sun.elevation,
        "sky_samples": sky_samples, "seed": seed,
        "n_cameras": len(scene.cameras),
    }
    with open(out / "scene.json", "w") as fh:
        json.dump(scene_info, fh, indent=2, sort_keys=True)
        fh.write("\n")
    decompose_cfg = {
        "manifest": str(out / "manifest.txt"), "mesh": str(out / "scene.obj"),
        "sun_azimuth": scene.sun.azimuth, "sun_elevation": scene.sun.elevation,
        "sky_mode": "uniform", "sky_samples": sky_samples, "seed": seed,
    }
    with open(out / "decompose_config.json", "w") as fh:
        json.dump(decompose_cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unshade",
        description="Outdoor albedo/shading decomposition pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="run the decomposition over a manifest")
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--manifest", help="dataset manifest path")
    p.add_argument("--mesh", help="scene mesh (OBJ)")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--sun-azimuth", dest="sun_azimuth", type=float)
    p.add_argument("--sun-elevation", dest="sun_elevation", type=float)
    p.add_argument("--sky-mode", dest="sky_mode", choices=["uniform", "measured"])
    p.add_argument("--dome", help="measured sky dome EXR (equirect, 1 channel)")
    p.add_argument("--sky-samples", dest="sky_samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--phi-pooling", dest="phi_pooling", choices=["image", "flight"])
    p.add_argument("--pair-radius", dest="pair_radius", type=int)
    p.add_argument("--max-normal-angle", dest="max_normal_angle", type=float)
    p.add_argument("--max-depth-diff", dest="max_depth_diff", type=float)
    p.add_argument("--min-shadow-brightness", dest="min_shadow_brightness", type=float)
    p.add_argument("--min-pairs", dest="min_pairs", type=int)
    p.add_argument("--gmm-max-iter", dest="gmm_max_iter", type=int)
    p.add_argument("--gmm-tol", dest="gmm_tol", type=float)
    p.add_argument("--eps-denominator", dest="eps_denominator", type=float)
    p.add_argument("--confidence-dilation", dest="confidence_dilation", type=int)
    p.add_argument("--dump-pairs", dest="dump_pairs", action="store_const",
                   const=True, help="also write per-image lit-shadow pair CSVs")

    p = sub.add_parser("skymerge", help="merge a bracketed sky stack into a dome EXR")
    p.add_argument("--stack-manifest", required=True,
                   help="lines of: frame_path exposure_seconds")
    p.add_argument("--out", required=True)
    p.add_argument("--fisheye-focal", type=float, default=150.0,
                   help="equidistant fisheye focal, pixels per radian")
    p.add_argument("--center-x", type=float, default=-1.0,
                   help="fisheye center x (default: image center)")
    p.add_argument("--center-y", type=float, default=-1.0)
    p.add_argument("--rotation", type=float, default=0.0,
                   help="azimuth of image-up, degrees east of north")
    p.add_argument("--out-width", type=int, default=512)
    p.add_argument("--out-height", type=int, default=256)
    p.add_argument("--skip-projection", action="store_true",
                   help="write the merged radiance without fisheye reprojection")

    p = sub.add_parser("changedetect", help="albedo differencing against a reference")
    p.add_argument("--reference", required=True)
    p.add_argument("--source-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--threshold", type=int, default=30)
    p.add_argument("--min-blob-area", type=int, default=25)
    p.add_argument("--opening-radius", type=int, default=2)

    p = sub.add_parser("metrics", help="PSNR/SSIM of predictions vs ground truth")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--truth-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--space", choices=["display", "linear"], default="display")

    p = sub.add_parser("synth", help="generate a synthetic fixture directory")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--phi", type=float, nargs=3, default=[6.0, 5.0, 4.0])
    p.add_argument("--sun-azimuth", type=float, default=135.0)
    p.add_argument("--sun-elevation", type=float, default=35.0)
    p.add_argument("--width", type=int, default=160)
    p.add_argument("--height", type=int, default=120)
    p.add_argument("--cameras", type=int, default=3)
    p.add_argument("--scene-seed", type=int, default=0)
    p.add_argument("--sky-samples", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "decompose":
            overrides = {f.name: getattr(args, f.name, None) for f in fields(RunConfig)}
            cfg = _merge_config(RunConfig, args.config, overrides)
            if not cfg.manifest or not cfg.mesh:
                raise ConfigError("decompose needs --manifest and --mesh")
            return run_decompose(cfg)
        if args.command == "skymerge":
            return run_skymerge(args.stack_manifest, args.out, args.fisheye_focal,
                                args.center_x, args.center_y, args.rotation,
                                args.out_width, args.out_height, args.skip_projection)
        if args.command == "changedetect":
            cfg = ChangeConfig(threshold=args.threshold,
                               min_blob_area=args.min_blob_area,
                               opening_radius=args.opening_radius)
            return run_changedetect(args.reference, args.source_dir, args.out_dir, cfg)
        if args.command == "metrics":
            return run_metrics(args.pred_dir, args.truth_dir, args.out, args.space)
        if args.command == "synth":
            spec = SceneSpec(phi_true=tuple(args.phi),
                             sun_azimuth=args.sun_azimuth,
                             sun_elevation=args.sun_elevation,
                             image_width=args.width, image_height=args.height,
                             n_cameras=args.cameras, seed=args.scene_seed)
            return run_synth(args.out_dir, spec, args.sky_samples, args.seed)
        raise ConfigError(f"unknown command {args.command}")
    except (ConfigError, ValueError, OSError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
