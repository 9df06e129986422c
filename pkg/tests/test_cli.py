import csv
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from unshade import exr
from unshade.cli import main, parse_dataset_manifest
from unshade.image import LinearImage, read_linear_exr, read_mask_png, write_linear_exr


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    """A small synthetic dataset produced by the synth subcommand."""
    out = tmp_path_factory.mktemp("fixture")
    rc = main(["synth", "--out-dir", str(out), "--width", "100", "--height", "80",
               "--cameras", "2", "--sky-samples", "48", "--seed", "7"])
    assert rc == 0
    return out


def run_digest(run_dir: Path) -> dict:
    out = {}
    for p in sorted(run_dir.iterdir()):
        if p.name == "config.json":
            continue
        out[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


class TestSynthCommand:
    def test_fixture_directory_complete(self, fixture_dir):
        names = {p.name for p in fixture_dir.iterdir()}
        assert "scene.obj" in names
        assert "manifest.txt" in names
        assert "scene.json" in names
        assert "decompose_config.json" in names
        for k in range(2):
            stem = f"view{k:02d}"
            for suffix in (".exr", "_albedo_true.exr", "_s_sun_true.exr",
                           "_s_sky_true.exr", "_depth_true.exr",
                           "_normal_true.exr", "_sun_vis.png", "_hit.png"):
                assert stem + suffix in names, stem + suffix

    def test_manifest_parses(self, fixture_dir):
        records = parse_dataset_manifest(fixture_dir / "manifest.txt")
        assert [r.image_id for r in records] == ["view00", "view01"]
        assert records[0].camera.width == 100


@pytest.fixture(scope="module")
def run_dir(fixture_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    rc = main(["decompose", "--config", str(fixture_dir / "decompose_config.json"),
               "--out-dir", str(out), "--workers", "1"])
    assert rc == 0
    return out


class TestDecomposeCommand:
    def test_outputs_per_image(self, fixture_dir, run_dir):
        for k in range(2):
            stem = f"view{k:02d}"
            for suffix in ("_albedo.exr", "_s_sun.exr", "_s_sky.exr",
                           "_depth.exr", "_normal.exr", "_confidence.png",
                           "_phi.json"):
                assert (run_dir / (stem + suffix)).exists(), stem + suffix
        assert (run_dir / "run_report.json").exists()
        assert (run_dir / "config.json").exists()

    def test_ratio_within_two_percent(self, fixture_dir, run_dir):
        truth = json.loads((fixture_dir / "scene.json").read_text())
        for k in range(2):
            phi = json.loads((run_dir / f"view{k:02d}_phi.json").read_text())["phi"]
            rel = np.abs(np.asarray(phi) - truth["phi_true"]) / np.asarray(truth["phi_true"])
            assert rel.max() < 0.02

    def test_shading_layers_match_fixture_truth(self, fixture_dir, run_dir):
        # same seed: the pipeline reproduces the fixture's shading exactly
        for layer in ("s_sun", "s_sky", "depth"):
            got = exr.read_exr(run_dir / f"view00_{layer}.exr")
            want = exr.read_exr(fixture_dir / f"view00_{layer}_true.exr")
            assert np.array_equal(got, want), layer

    def test_report_enumerates_every_image_once(self, run_dir):
        report = json.loads((run_dir / "run_report.json").read_text())
        ids = [im["id"] for im in report["images"]]
        assert ids == ["view00", "view01"]
        assert all(im["status"] == "ok" for im in report["images"])
        assert report["n_failed"] == 0

    def test_byte_identical_across_runs_and_workers(self, fixture_dir, run_dir,
                                                    tmp_path_factory):
        out2 = tmp_path_factory.mktemp("run_w2")
        rc = main(["decompose", "--config", str(fixture_dir / "decompose_config.json"),
                   "--out-dir", str(out2), "--workers", "2"])
        assert rc == 0
        assert run_digest(run_dir) == run_digest(out2)

    def test_missing_image_partial_failure(self, fixture_dir, tmp_path):
        lines = (fixture_dir / "manifest.txt").read_text().splitlines()
        ghost = lines[1].split()
        ghost[0] = "ghost"
        ghost[1] = str(fixture_dir / "missing.exr")
        lines.insert(1, " ".join(ghost))
        bad = tmp_path / "manifest_bad.txt"
        bad.write_text("\n".join(lines) + "\n")
        out = tmp_path / "run_bad"
        rc = main(["decompose", "--config", str(fixture_dir / "decompose_config.json"),
                   "--manifest", str(bad), "--out-dir", str(out), "--workers", "1"])
        assert rc == 1
        report = json.loads((out / "run_report.json").read_text())
        by_id = {im["id"]: im for im in report["images"]}
        assert by_id["ghost"]["status"] == "failed"
        assert by_id["view00"]["status"] == "ok"
        assert by_id["view01"]["status"] == "ok"
        assert len(report["images"]) == 3

    def test_flight_pooling_uses_one_ratio_for_all_images(self, fixture_dir,
                                                          tmp_path):
        out = tmp_path / "pooled"
        rc = main(["decompose", "--config", str(fixture_dir / "decompose_config.json"),
                   "--out-dir", str(out), "--workers", "1",
                   "--phi-pooling", "flight"])
        assert rc == 0
        records = [json.loads((out / f"view{k:02d}_phi.json").read_text())
                   for k in range(2)]
        assert all(r["pooled"] is True for r in records)
        assert records[0]["phi"] == records[1]["phi"]
        # pooled sample count covers both images
        report = json.loads((out / "run_report.json").read_text())
        total_pairs = sum(im["n_pairs"] for im in report["images"])
        assert records[0]["sample_count"] <= total_pairs
        assert records[0]["sample_count"] > max(im["n_pairs"]
                                                for im in report["images"]) / 2

    def test_pooling_fallback_when_one_image_lacks_pairs(self, fixture_dir,
                                                         tmp_path):
        # raising min image pairs beyond reach fails per-image mode but the
        # flight pool still succeeds
        out_image = tmp_path / "per_image"
        rc = main(["decompose", "--config", str(fixture_dir / "decompose_config.json"),
                   "--out-dir", str(out_image), "--workers", "1",
                   "--min-pairs", "100000"])
        assert rc == 1  # every image fails alone
        out_flight = tmp_path / "per_flight"
        rc = main(["decompose", "--config", str(fixture_dir / "decompose_config.json"),
                   "--out-dir", str(out_flight), "--workers", "1",
                   "--phi-pooling", "flight", "--min-pairs", "100000"])
        assert rc == 1  # pool is still too small at this floor
        report = json.loads((out_flight / "run_report.json").read_text())
        assert all("pooled" in im["error"] for im in report["images"])

    def test_config_error_exit_code(self, tmp_path):
        rc = main(["decompose", "--out-dir", str(tmp_path / "x")])
        assert rc == 2
        rc = main(["decompose", "--manifest", "m.txt", "--mesh", "m.obj",
                   "--sky-mode", "measured"])
        assert rc == 2  # measured without a dome

    def test_flags_override_config_file(self, fixture_dir, tmp_path):
        out = tmp_path / "override"
        rc = main(["decompose", "--config", str(fixture_dir / "decompose_config.json"),
                   "--out-dir", str(out), "--workers", "1", "--min-pairs", "17"])
        assert rc == 0
        effective = json.loads((out / "config.json").read_text())
        assert effective["min_pairs"] == 17          # flag beats default
        assert effective["sky_samples"] == 48        # file value survives

    def test_pairs_csv_dump(self, fixture_dir, tmp_path):
        out = tmp_path / "with_pairs"
        rc = main(["decompose", "--config", str(fixture_dir / "decompose_config.json"),
                   "--out-dir", str(out), "--workers", "1", "--dump-pairs"])
        assert rc == 0
        with open(out / "view00_pairs.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) > 10
        report = json.loads((out / "run_report.json").read_text())
        n_pairs = report["images"][0]["n_pairs"]
        assert len(rows) <= n_pairs  # rejected samples are omitted
        first = rows[0]
        assert float(first["phi_r"]) > 0
        assert 0 <= int(first["shadow_y"]) < 80


class TestMeasuredSkyMode:
    def test_constant_dome_reproduces_uniform_run(self, fixture_dir, tmp_path):
        # a constant dome must align to gain 1/c and reproduce the uniform
        # shading bit-for-bit modulo float rounding
        c = 0.3
        dome = LinearImage(np.full((32, 64, 1), c, np.float32))
        dome_path = tmp_path / "dome.exr"
        write_linear_exr(dome, dome_path)

        uniform_out = tmp_path / "uniform"
        measured_out = tmp_path / "measured"
        rc = main(["decompose", "--config", str(fixture_dir / "decompose_config.json"),
                   "--out-dir", str(uniform_out), "--workers", "1"])
        assert rc == 0
        rc = main(["decompose", "--config", str(fixture_dir / "decompose_config.json"),
                   "--out-dir", str(measured_out), "--workers", "1",
                   "--sky-mode", "measured", "--dome", str(dome_path)])
        assert rc == 0

        for k in range(2):
            s_u = exr.read_exr(uniform_out / f"view{k:02d}_s_sky.exr")
            s_m = exr.read_exr(measured_out / f"view{k:02d}_s_sky.exr")
            assert np.abs(s_u - s_m).max() < 1e-5
            a_u = exr.read_exr(uniform_out / f"view{k:02d}_albedo.exr")
            a_m = exr.read_exr(measured_out / f"view{k:02d}_albedo.exr")
            assert np.abs(a_u - a_m).max() < 1e-3


class TestSkymergeCommand:
    def test_merge_recovers_radiance(self, tmp_path, rng):
        truth = np.exp(rng.uniform(np.log(0.05), np.log(2.0), (24, 24)))
        times = np.geomspace(0.5, 32.0, 11)
        lines = []
        for i, t in enumerate(times):
            frame = np.clip(truth * t, 0.0, 1.0).astype(np.float32)
            path = tmp_path / f"frame{i:02d}.exr"
            exr.write_exr(path, frame)
            lines.append(f"{path} {t}")
        manifest = tmp_path / "stack.txt"
        manifest.write_text("\n".join(lines) + "\n")

        out = tmp_path / "merged.exr"
        rc = main(["skymerge", "--stack-manifest", str(manifest),
                   "--out", str(out), "--skip-projection"])
        assert rc == 0
        merged = read_linear_exr(out)
        rel = np.abs(merged.data[:, :, 0] - truth) / truth
        assert rel.max() < 1e-3

    def test_projection_output_is_dome_shaped(self, tmp_path, rng):
        frames = []
        for i, t in enumerate((1.0, 8.0)):
            frame = np.full((200, 200), 0.4 / t if t > 1 else 0.4, np.float32) * t / 2
            path = tmp_path / f"f{i}.exr"
            exr.write_exr(path, np.clip(frame, 0, 1))
            frames.append(f"{path} {t}")
        manifest = tmp_path / "stack.txt"
        manifest.write_text("\n".join(frames) + "\n")
        out = tmp_path / "dome.exr"
        rc = main(["skymerge", "--stack-manifest", str(manifest), "--out", str(out),
                   "--fisheye-focal", "60", "--out-width", "64", "--out-height", "32"])
        assert rc == 0
        dome = read_linear_exr(out)
        assert (dome.width, dome.height, dome.channels) == (64, 32, 1)
        assert (dome.data[16:] == 0).all()  # below horizon

    def test_single_frame_is_an_error(self, tmp_path):
        path = tmp_path / "only.exr"
        exr.write_exr(path, np.full((4, 4), 0.5, np.float32))
        manifest = tmp_path / "stack.txt"
        manifest.write_text(f"{path} 2.0\n")
        rc = main(["skymerge", "--stack-manifest", str(manifest),
                   "--out", str(tmp_path / "o.exr")])
        assert rc == 2


class TestChangedetectCommand:
    def test_identical_frames_give_empty_masks(self, tmp_path, rng):
        ref = LinearImage(rng.random((32, 32, 3)).astype(np.float32))
        write_linear_exr(ref, tmp_path / "ref.exr")
        src_dir = tmp_path / "frames"
        src_dir.mkdir()
        for i in range(3):
            write_linear_exr(ref, src_dir / f"t{i}.exr")
        out = tmp_path / "masks"
        rc = main(["changedetect", "--reference", str(tmp_path / "ref.exr"),
                   "--source-dir", str(src_dir), "--out-dir", str(out)])
        assert rc == 0
        with open(out / "changes.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 3
        assert all(int(r["changed_pixels"]) == 0 for r in rows)
        for i in range(3):
            assert read_mask_png(out / f"t{i}_change.png").count() == 0


class TestMetricsCommand:
    def test_perfect_prediction(self, tmp_path, rng):
        truth_dir = tmp_path / "truth"
        pred_dir = tmp_path / "pred"
        truth_dir.mkdir()
        pred_dir.mkdir()
        for i in range(2):
            img = LinearImage(rng.random((24, 24, 3)).astype(np.float32))
            write_linear_exr(img, truth_dir / f"im{i}.exr")
            write_linear_exr(img, pred_dir / f"im{i}.exr")
        out = tmp_path / "metrics.csv"
        rc = main(["metrics", "--pred-dir", str(pred_dir),
                   "--truth-dir", str(truth_dir), "--out", str(out)])
        assert rc == 0
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert [r["image"] for r in rows] == ["im0", "im1", "mean"]
        assert all(float(r["psnr"]) == float("inf") for r in rows)
        assert all(abs(float(r["ssim"]) - 1.0) < 1e-9 for r in rows)

    def test_prediction_resized_to_truth(self, tmp_path, rng):
        truth_dir = tmp_path / "truth"
        pred_dir = tmp_path / "pred"
        truth_dir.mkdir()
        pred_dir.mkdir()
        img = LinearImage(rng.uniform(0.2, 0.8, (32, 32, 3)).astype(np.float32))
        write_linear_exr(img, truth_dir / "a.exr")
        from unshade.image import resize_bilinear
        write_linear_exr(resize_bilinear(img, 16, 16), pred_dir / "a.exr")
        out = tmp_path / "metrics.csv"
        rc = main(["metrics", "--pred-dir", str(pred_dir),
                   "--truth-dir", str(truth_dir), "--out", str(out)])
        assert rc == 0
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert float(rows[0]["psnr"]) > 20.0

    def test_missing_prediction_is_config_error(self, tmp_path, rng):
        truth_dir = tmp_path / "truth"
        pred_dir = tmp_path / "pred"
        truth_dir.mkdir()
        pred_dir.mkdir()
        write_linear_exr(LinearImage(rng.random((16, 16, 3)).astype(np.float32)),
                         truth_dir / "a.exr")
        rc = main(["metrics", "--pred-dir", str(pred_dir),
                   "--truth-dir", str(truth_dir), "--out", str(tmp_path / "m.csv")])
        assert rc == 2
