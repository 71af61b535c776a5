import json

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from ladc.config import apply_overrides, from_dict
from ladc.dataset import FeatureDataset, save_dataset
from ladc.errors import PipelineError
from ladc.pipeline import run_pipeline

SMALL = ["stage1.epochs=3", "stage2.epochs=4", "stage2.lr_drops=[[2, 0.1]]",
         "synthetic.num_classes=6", "synthetic.max_count=150", "synthetic.imbalance_factor=20",
         "synthetic.test_per_class=30"]


def config(tmp_path, *extra):
    return from_dict(apply_overrides({}, [*SMALL, f"output.dir={tmp_path}", *extra]))


def walk_numbers(obj):
    if isinstance(obj, dict):
        for v in obj.values():
            yield from walk_numbers(v)
    elif isinstance(obj, list):
        for v in obj:
            yield from walk_numbers(v)
    elif isinstance(obj, float):
        yield obj


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return out, run_pipeline(config(out))


class TestReport:
    def test_artifacts_written(self, run):
        out, report = run
        for name in ("report.json", "timings.json", "baseline.ckpt", "ladc.ckpt", "grouped_accuracy.csv",
                     "per_class.csv", "calibrations.jsonl", "scatter.csv", "scatter.svg",
                     "figures/grouped_accuracy.png", "figures/loss.png", "figures/scatter.png"):
            assert (out / name).exists(), name

    def test_report_shape(self, run):
        out, report = run
        data = json.loads((out / "report.json").read_text())
        assert set(data) >= {"config", "dataset", "calibration", "sampling", "baseline", "ladc", "delta",
                             "per_class", "distribution_gap", "loss"}
        assert data["delta"]["overall"] == pytest.approx(data["ladc"]["overall"] - data["baseline"]["overall"])
        assert len(data["per_class"]) == 6
        assert len(data["loss"]["stage1"]) == 3 and len(data["loss"]["stage2"]) == 4
        assert data["distribution_gap"]["reference"] == "truth"
        assert all(np.isfinite(x) for x in walk_numbers(data))

    def test_config_echo_reproduces(self, run, tmp_path):
        out, report = run
        echoed = json.loads((out / "report.json").read_text())["config"]
        echoed["output"]["dir"] = str(tmp_path)
        again = run_pipeline(from_dict(echoed), write=False)
        for key in ("baseline", "ladc", "per_class", "distribution_gap", "loss"):
            assert again[key] == report[key]

    def test_timings_separate(self, run):
        out, _ = run
        timings = json.loads((out / "timings.json").read_text())
        assert {"load", "stage1", "calibrate", "stage2", "evaluate"} <= set(timings)


class TestDeterminism:
    def test_byte_identical_across_runs_and_threads(self, tmp_path):
        cfg = config(tmp_path)
        run_pipeline(cfg)
        names = ("report.json", "baseline.ckpt", "ladc.ckpt", "scatter.csv", "calibrations.jsonl")
        first = {n: (tmp_path / n).read_bytes() for n in names}
        with threadpool_limits(1):
            run_pipeline(cfg)
        for n in names:
            assert (tmp_path / n).read_bytes() == first[n], n

    def test_seed_matters(self, tmp_path):
        a = run_pipeline(config(tmp_path, "seed=1"), write=False)
        b = run_pipeline(config(tmp_path, "seed=2"), write=False)
        assert a["loss"] != b["loss"]


class TestDegenerateConfigs:
    def test_all_head_no_prior(self, tmp_path):
        r = run_pipeline(config(tmp_path, "sampling.tau=0", "calibration.beta=0", "mass_ratio=1.0"),
                         write=False)
        assert r["dataset"]["tail"] == [] and r["calibration"]["count"] == 0
        # temperature weights are uniform; per-instance weighting then draws classes by frequency
        np.testing.assert_allclose(r["sampling"]["probabilities"], 1 / 6)
        counts = np.array(r["dataset"]["train_counts"])
        np.testing.assert_allclose(r["sampling"]["class_draw_probabilities"], counts / counts.sum())

    def test_all_head_class_unit_is_uniform(self, tmp_path):
        r = run_pipeline(config(tmp_path, "sampling.tau=0", "calibration.beta=0", "mass_ratio=1.0",
                                "sampling.draw_unit=class"), write=False)
        np.testing.assert_allclose(r["sampling"]["class_draw_probabilities"], 1 / 6)

    def test_beta_zero_samples_anchors(self, tmp_path):
        run_pipeline(config(tmp_path, "calibration.beta=0", "output.figures=false"))
        for line in (tmp_path / "calibrations.jsonl").read_text().splitlines():
            rec = json.loads(line)
            assert rec["mean"] == rec["anchor"]
            assert not any(rec["cov_diag"])

    def test_class_average_mode(self, tmp_path):
        r = run_pipeline(config(tmp_path, "calibration.mode=class_average"), write=False)
        assert r["calibration"]["count"] == len(r["dataset"]["tail"])

    def test_file_inputs(self, tmp_path):
        rng = np.random.default_rng(0)
        counts = [60, 40, 8, 3]
        centres = np.eye(4) * 3
        x = np.concatenate([c + rng.standard_normal((n, 4)) for c, n in zip(centres, counts)])
        save_dataset(FeatureDataset(x, np.repeat(range(4), counts), 4), tmp_path / "train.ladc")
        xt = np.concatenate([c + rng.standard_normal((10, 4)) for c in centres])
        save_dataset(FeatureDataset(xt, np.repeat(range(4), 10), 4), tmp_path / "test.csv")
        cfg = config(tmp_path / "out", f"data.train={tmp_path / 'train.ladc'}",
                     f"data.test={tmp_path / 'test.csv'}")
        r = run_pipeline(cfg, write=False)
        assert r["dataset"]["source"] == "files"
        assert r["distribution_gap"]["reference"] == "test"

    def test_errors_name_the_phase(self, tmp_path):
        with pytest.raises(PipelineError, match=r"\[load\] UnreadableFile"):
            run_pipeline(config(tmp_path, f"data.train={tmp_path / 'missing.ladc'}",
                                f"data.test={tmp_path / 'missing.ladc'}"), write=False)
