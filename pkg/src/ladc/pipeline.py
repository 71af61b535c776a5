"""End-to-end two-stage experiment.

Stage 1 trains a plain linear classifier on the long-tailed features; that
classifier is the baseline arm.  Stage 2 re-balances it with calibrated tail
sampling.  Both arms are evaluated on the same balanced test split.

The JSON report carries no wall-clock data so that a rerun with the echoed
config rewrites it byte for byte; timings go to ``timings.json``.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import plotting
from .calibration import calibrate_tail, group_by_class, mixture_moments, write_debug_dump
from .classifier import LinearClassifier, predict, save_checkpoint, train
from .config import ExperimentConfig
from .dataset import (
    cross_polytope_spec,
    generate_synthetic,
    load_dataset,
    partition_head_tail,
)
from .errors import DataError, LADCError, PipelineError
from .evaluation import (
    GroupedAccuracy,
    GroupThresholds,
    class_groups,
    concat_exports,
    distribution_gap,
    fit_projection,
    grouped_accuracy,
    per_class_accuracy,
    project_2d,
)
from .sampler import BatchSpec, InstanceStream, ResampledStream, sampling_probabilities
from .stats import all_class_statistics, empirical_gaussian, make_rng

log = logging.getLogger(__name__)

EMPIRICAL_RIDGE = 1e-3
SCATTER_PER_CLASS = 100


@dataclass
class ExperimentReport:
    data: dict
    timings: dict = field(default_factory=dict)
    classifiers: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, allow_nan=False) + "\n"

    def __getitem__(self, key):
        return self.data[key]


class _Timer:
    def __init__(self):
        self.timings: dict[str, float] = {}

    @contextmanager
    def phase(self, name: str):
        start = time.perf_counter()
        try:
            yield
        except PipelineError:
            raise
        except LADCError as exc:
            raise PipelineError(name, exc) from exc
        finally:
            self.timings[name] = time.perf_counter() - start


def _load_data(cfg: ExperimentConfig):
    if cfg.uses_synthetic:
        s = cfg.synthetic
        spec = cross_polytope_spec(
            s.num_classes, s.dim, s.imbalance_factor, s.max_count,
            radius=s.radius, signal_std=s.signal_std, nuisance_std=s.nuisance_std,
            seed=cfg.seed if s.seed is None else s.seed, test_per_class=s.test_per_class,
        )
        train_ds, test_ds = generate_synthetic(spec)
        return train_ds, test_ds, spec
    if cfg.data.test is None:
        raise DataError("data.test is required when data.train is given")
    train_ds = load_dataset(cfg.data.train, cfg.data.format)
    test_ds = load_dataset(cfg.data.test, cfg.data.format, num_classes=train_ds.num_classes)
    if test_ds.dim != train_ds.dim:
        raise DataError(f"test features have D={test_ds.dim}, train D={train_ds.dim}")
    if test_ds.num_classes != train_ds.num_classes:
        raise DataError("train and test declare different class counts")
    return train_ds, test_ds, None


def _round(x):
    return None if x is None else float(x)


def _gap_summary(train_ds, test_ds, partition, calibrations, spec) -> dict:
    groups = group_by_class(calibrations)
    reference = "truth" if spec is not None else "test"
    rows = []
    for c in sorted(partition.tail):
        if c not in groups:
            continue
        if spec is not None:
            ref = (spec.true_means[c], spec.true_covariances[c])
        else:
            x = test_ds.class_features(c)
            if x.shape[0] < 2:
                continue
            ref = empirical_gaussian(x)
        cal = distribution_gap(mixture_moments(groups[c]), ref)
        emp = distribution_gap(empirical_gaussian(train_ds.class_features(c), EMPIRICAL_RIDGE), ref)
        rows.append({"class": c, "calibrated": cal, "empirical": emp})
    summary = {"reference": reference, "empirical_ridge": EMPIRICAL_RIDGE, "per_class": rows}
    if rows:
        summary["mean_calibrated"] = float(np.mean([r["calibrated"] for r in rows]))
        summary["mean_empirical"] = float(np.mean([r["empirical"] for r in rows]))
    else:
        summary["mean_calibrated"] = summary["mean_empirical"] = None
    return summary


def _scatter(train_ds, test_ds, partition, calibrations, seed) -> object:
    rng = make_rng(seed)
    proj = fit_projection(train_ds.features, train_ds.labels, train_ds.num_classes, seed=rng)
    parts = [
        project_2d(train_ds.features, train_ds.labels, "real", proj),
        project_2d(test_ds.features, test_ds.labels, "test", proj),
    ]
    groups = group_by_class(calibrations)
    feats, labels = [], []
    for c in sorted(groups):
        cds = groups[c]
        pick = rng.integers(0, len(cds), size=SCATTER_PER_CLASS)
        eps = rng.standard_normal((SCATTER_PER_CLASS, train_ds.dim))
        for k, e in zip(pick, eps):
            feats.append(cds[k].posterior_mean + cds[k].cholesky_factor() @ e)
        labels += [c] * SCATTER_PER_CLASS
    if feats:
        parts.insert(1, project_2d(np.array(feats), labels, "synthetic", proj))
    return concat_exports(*parts)


def run_pipeline(cfg: ExperimentConfig, write: bool = True) -> ExperimentReport:
    """Run both arms and (optionally) write every artifact under ``cfg.output_dir``."""
    cfg.validate()
    timer = _Timer()
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    thresholds = GroupThresholds(cfg.eval.many_threshold, cfg.eval.few_threshold)

    with timer.phase("load"):
        train_ds, test_ds, spec = _load_data(cfg)
        counts = train_ds.counts
        partition = partition_head_tail(counts, cfg.mass_ratio)
    log.info("train N=%d D=%d C=%d; head=%s", len(train_ds), train_ds.dim, train_ds.num_classes,
             partition.head)

    with timer.phase("stage1"):
        stage1_stream = InstanceStream(train_ds, BatchSpec(cfg.stage1.batch_size, seeds[0]))
        init = LinearClassifier.zeros(train_ds.num_classes, train_ds.dim, "plain")
        baseline, trace1 = train(init, stage1_stream, cfg.stage1)

    with timer.phase("statistics"):
        stats = all_class_statistics(train_ds)
        head_stats = [stats[c] for c in partition.head if c in stats]

    with timer.phase("calibrate"):
        calibrations = calibrate_tail(train_ds, partition, head_stats, cfg.calibration)

    with timer.phase("sampling"):
        present = counts > 0
        plan_counts = np.where(present, counts, 1)
        plan = sampling_probabilities(plan_counts, cfg.sampling.tau, cfg.sampling.draw_unit)
        if not present.all():
            # classes absent from training are never drawn
            probs = plan.probabilities * present
            plan = type(plan)(probs / probs.sum(), plan.tau, counts, plan.n_1, plan.draw_unit)
        stream = ResampledStream(plan, partition, train_ds, calibrations,
                                 BatchSpec(cfg.sampling.batch_size, seeds[1]))

    with timer.phase("stage2"):
        ladc, trace2 = train(baseline.for_stage2(cfg.stage2.mode), stream, cfg.stage2)

    with timer.phase("evaluate"):
        arms = {}
        per_class = {}
        for name, clf in (("baseline", baseline), ("ladc", ladc)):
            pred = predict(clf, test_ds.features) if len(test_ds) else np.zeros(0, dtype=int)
            arms[name] = grouped_accuracy(pred, test_ds.labels, counts, thresholds)
            per_class[name] = per_class_accuracy(pred, test_ds.labels, train_ds.num_classes)
        gap = _gap_summary(train_ds, test_ds, partition, calibrations, spec)

    def delta(key):
        a, b = getattr(arms["ladc"], key), getattr(arms["baseline"], key)
        return None if a is None or b is None else a - b

    groups = class_groups(counts, thresholds)
    data = {
        "config": cfg.to_dict(),
        "dataset": {
            "source": "synthetic" if spec is not None else "files",
            "train_size": len(train_ds),
            "test_size": len(test_ds),
            "dim": train_ds.dim,
            "num_classes": train_ds.num_classes,
            "train_counts": [int(n) for n in counts],
            "head": list(partition.head),
            "tail": list(partition.tail),
            "groups": groups,
        },
        "calibration": {"count": len(calibrations)},
        "sampling": {
            "probabilities": plan.probabilities.tolist(),
            "class_draw_probabilities": plan.class_draw_probabilities.tolist(),
        },
        "baseline": arms["baseline"].as_dict(),
        "ladc": arms["ladc"].as_dict(),
        "delta": {k: delta(k) for k in ("overall", "many", "medium", "few")},
        "per_class": [
            {"class": c, "train_count": int(counts[c]), "group": groups[c],
             "partition": "head" if partition.is_head(c) else "tail",
             "baseline": _round(per_class["baseline"][c]), "ladc": _round(per_class["ladc"][c])}
            for c in range(train_ds.num_classes)
        ],
        "distribution_gap": gap,
        "loss": {"stage1": trace1, "stage2": trace2},
        "artifacts": {},
    }
    report = ExperimentReport(data, timer.timings, {"baseline": baseline, "ladc": ladc})
    if write:
        with timer.phase("write"):
            _write_artifacts(cfg, report, train_ds, test_ds, partition, calibrations, seeds[2])
    return report


def _write_artifacts(cfg, report, train_ds, test_ds, partition, calibrations, scatter_seed) -> None:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    art = report.data["artifacts"]
    for name, clf in report.classifiers.items():
        save_checkpoint(clf, out / f"{name}.ckpt")
        art[f"{name}_checkpoint"] = f"{name}.ckpt"

    with open(out / "grouped_accuracy.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["arm", "overall", "many", "medium", "few", "n_many", "n_medium", "n_few"])
        for arm in ("baseline", "ladc"):
            g = report.data[arm]
            sizes = g["group_sizes"]
            w.writerow([arm, *("" if g[k] is None else repr(g[k]) for k in ("overall", "many", "medium", "few")),
                        sizes["many"], sizes["medium"], sizes["few"]])
    art["grouped_accuracy"] = "grouped_accuracy.csv"

    with open(out / "per_class.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "train_count", "group", "partition", "baseline", "ladc"])
        for row in report.data["per_class"]:
            w.writerow(["" if v is None else v for v in row.values()])
    art["per_class"] = "per_class.csv"

    write_debug_dump(calibrations, out / "calibrations.jsonl")
    art["calibration_dump"] = "calibrations.jsonl"

    if cfg.output.scatter:
        export = _scatter(train_ds, test_ds, partition, calibrations, scatter_seed)
        export.to_csv(out / "scatter.csv")
        export.to_svg(out / "scatter.svg", title="train / synthetic / test")
        art["scatter_csv"] = "scatter.csv"
        art["scatter_svg"] = "scatter.svg"
    if cfg.output.figures:
        fig_dir = out / "figures"
        fig_dir.mkdir(exist_ok=True)
        arms = {arm: GroupedAccuracy(**{k: report.data[arm][k] for k in ("overall", "many", "medium", "few")},
                                     group_sizes=tuple(report.data[arm]["group_sizes"].values()))
                for arm in ("baseline", "ladc")}
        plotting.grouped_accuracy_figure(arms, fig_dir / "grouped_accuracy.png")
        plotting.loss_figure(report.data["loss"], fig_dir / "loss.png")
        art["figures"] = ["figures/grouped_accuracy.png", "figures/loss.png"]
        if cfg.output.scatter:
            plotting.scatter_figure(export, fig_dir / "scatter.png")
            art["figures"].append("figures/scatter.png")

    art["timings"] = "timings.json"
    (out / "report.json").write_text(report.to_json())
    (out / "timings.json").write_text(json.dumps(report.timings, indent=2) + "\n")
