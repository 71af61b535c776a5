"""Command-line interface.

Exit codes: 0 success, 2 configuration/usage error, 3 data error,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from pathlib import Path

import numpy as np

from . import plotting
from .calibration import CalibrationConfig, calibrate_tail, write_debug_dump
from .classifier import LinearClassifier, TrainConfig, load_checkpoint, predict, save_checkpoint, train
from .config import apply_overrides, from_dict, load_config
from .dataset import cross_polytope_spec, generate_synthetic, load_dataset, partition_head_tail, save_dataset
from .errors import ConfigError, DataError, LADCError
from .evaluation import GroupThresholds, concat_exports, fit_projection, grouped_accuracy, per_class_accuracy, project_2d
from .pipeline import run_pipeline
from .sampler import BatchSpec, InstanceStream, ResampledStream, sampling_probabilities
from .stats import all_class_statistics, class_statistics, make_rng

log = logging.getLogger("ladc")


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def _calibration_args(p):
    p.add_argument("--mass-ratio", type=float, default=0.6)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--alpha", type=float, default=0.15)
    p.add_argument("--beta", type=float, default=0.8)
    p.add_argument("--calibration-mode", choices=("per_instance", "class_average"), default="per_instance")
    p.add_argument("--weighting", choices=("paper", "inverse_distance"), default="paper")


def _calibration(args) -> CalibrationConfig:
    return CalibrationConfig(m=args.m, alpha=args.alpha, beta=args.beta,
                             mode=args.calibration_mode, weighting=args.weighting)


def cmd_synth(args) -> int:
    spec = cross_polytope_spec(args.num_classes, args.dim, args.imbalance_factor, args.max_count,
                               radius=args.radius, signal_std=args.signal_std,
                               nuisance_std=args.nuisance_std, seed=args.seed,
                               test_per_class=args.test_per_class)
    train_ds, test_ds = generate_synthetic(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = ".csv" if args.format == "csv" else ".ladc"
    save_dataset(train_ds, out / f"train{ext}", args.format)
    save_dataset(test_ds, out / f"test{ext}", args.format)
    print(f"train\t{out / ('train' + ext)}\tN={len(train_ds)}\tcounts={','.join(map(str, train_ds.counts))}")
    print(f"test\t{out / ('test' + ext)}\tN={len(test_ds)}")
    return 0


def cmd_stats(args) -> int:
    ds = load_dataset(args.dataset, args.format)
    classes = [args.class_id] if args.class_id is not None else [c for c, n in enumerate(ds.counts) if n]
    for c in classes:
        st = class_statistics(ds, c)
        diag = "" if st.covariance is None else ",".join(f"{v:.6g}" for v in np.diag(st.covariance))
        print(f"class\t{c}\tn\t{st.count}")
        print(f"mean\t{','.join(f'{v:.6g}' for v in st.mean)}")
        print(f"cov_diag\t{diag or 'absent'}")
    return 0


def cmd_calibrate(args) -> int:
    ds = load_dataset(args.dataset, args.format)
    part = partition_head_tail(ds.counts, args.mass_ratio)
    stats = all_class_statistics(ds, [c for c in part.head if ds.counts[c]])
    cds = calibrate_tail(ds, part, list(stats.values()), _calibration(args))
    n = write_debug_dump(cds, args.out)
    print(f"head\t{','.join(map(str, part.head))}")
    print(f"tail\t{','.join(map(str, part.tail))}")
    print(f"calibrated\t{n}\t{args.out}")
    return 0


def cmd_train(args) -> int:
    ds = load_dataset(args.dataset, args.format)
    cfg = TrainConfig(epochs=args.epochs, base_lr=args.lr, lr_drops=[tuple(d) for d in args.lr_drop],
                      momentum=args.momentum, weight_decay=args.weight_decay,
                      batch_size=args.batch_size, mode=args.mode, seed=args.seed)
    seeds = np.random.SeedSequence(args.seed).spawn(2)
    if args.init:
        clf = load_checkpoint(args.init).for_stage2(args.mode) if args.mode != "plain" else load_checkpoint(args.init)
    else:
        if args.mode in ("lws", "lws_plus"):
            raise ConfigError(f"mode {args.mode} needs --init (a trained checkpoint)")
        clf = LinearClassifier.zeros(ds.num_classes, ds.dim, args.mode)
    if args.sampling == "ladc":
        part = partition_head_tail(ds.counts, args.mass_ratio)
        stats = all_class_statistics(ds, [c for c in part.head if ds.counts[c]])
        cds = calibrate_tail(ds, part, list(stats.values()), _calibration(args))
        plan = sampling_probabilities(ds.counts, args.tau)
        stream = ResampledStream(plan, part, ds, cds, BatchSpec(args.batch_size, seeds[0]))
    else:
        stream = InstanceStream(ds, BatchSpec(args.batch_size, seeds[0]))
    clf, trace = train(clf, stream, cfg)
    save_checkpoint(clf, args.out)
    for e, loss in enumerate(trace):
        print(f"epoch\t{e}\t{loss:.6f}")
    print(f"checkpoint\t{args.out}")
    return 0


def cmd_eval(args) -> int:
    clf = load_checkpoint(args.checkpoint)
    test = load_dataset(args.test, args.format, num_classes=clf.num_classes)
    pred = predict(clf, test.features)
    if args.train:
        counts = load_dataset(args.train, args.format).counts
    elif args.counts:
        counts = [int(v) for v in args.counts.split(",")]
    else:
        counts = None
    if counts is not None:
        g = grouped_accuracy(pred, test.labels, counts, GroupThresholds(args.many, args.few))
        print("group\taccuracy\tn")
        print(f"overall\t{_fmt(g.overall)}\t{len(test)}")
        for name, size in zip(("many", "medium", "few"), g.group_sizes):
            print(f"{name}\t{_fmt(getattr(g, name))}\t{size}")
    else:
        print("group\taccuracy\tn")
        print(f"overall\t{_fmt(float((pred == test.labels).mean()) if len(test) else None)}\t{len(test)}")
    for c, acc in enumerate(per_class_accuracy(pred, test.labels, clf.num_classes)):
        print(f"class_{c}\t{_fmt(acc)}\t{int((test.labels == c).sum())}")
    return 0


def cmd_pipeline(args) -> int:
    raw = load_config(args.config) if args.config else {}
    flags = {
        "seed": args.seed, "mass_ratio": args.mass_ratio,
        "data.train": args.train, "data.test": args.test,
        "calibration.m": args.m, "calibration.alpha": args.alpha, "calibration.beta": args.beta,
        "calibration.mode": args.calibration_mode, "calibration.weighting": args.weighting,
        "sampling.tau": args.tau, "sampling.draw_unit": args.draw_unit,
        "stage2.mode": args.classifier_mode, "output.dir": args.out_dir,
    }
    sets = [f"{k}={v}" for k, v in flags.items() if v is not None]
    if args.no_figures:
        sets.append("output.figures=false")
    if args.no_scatter:
        sets.append("output.scatter=false")
    cfg = from_dict(apply_overrides(raw, sets + list(args.set)))
    report = run_pipeline(cfg)
    out = cfg.output_dir
    print("arm\toverall\tmany\tmedium\tfew")
    for arm in ("baseline", "ladc"):
        g = report[arm]
        print(f"{arm}\t" + "\t".join(_fmt(g[k]) for k in ("overall", "many", "medium", "few")))
    print(f"report\t{out / 'report.json'}")
    return 0


def cmd_scatter(args) -> int:
    train_ds = load_dataset(args.dataset, args.format)
    test_ds = load_dataset(args.test, args.format, num_classes=train_ds.num_classes) if args.test else None
    rng = make_rng(args.seed)
    if args.projection:
        proj = np.loadtxt(args.projection, delimiter=",", ndmin=2)
    else:
        proj = fit_projection(train_ds.features, train_ds.labels, train_ds.num_classes, seed=rng)
    parts = [project_2d(train_ds.features, train_ds.labels, "real", proj)]
    if args.synthetic:
        part = partition_head_tail(train_ds.counts, args.mass_ratio)
        stats = all_class_statistics(train_ds, [c for c in part.head if train_ds.counts[c]])
        cds = calibrate_tail(train_ds, part, list(stats.values()), _calibration(args))
        if cds:
            k = rng.integers(0, len(cds), size=args.synthetic)
            eps = rng.standard_normal((args.synthetic, train_ds.dim))
            feats = np.array([cds[i].posterior_mean + cds[i].cholesky_factor() @ e for i, e in zip(k, eps)])
            parts.append(project_2d(feats, [cds[i].source_class for i in k], "synthetic", proj))
    if test_ds is not None:
        parts.append(project_2d(test_ds.features, test_ds.labels, "test", proj))
    export = concat_exports(*parts)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    export.to_csv(out / "scatter.csv")
    export.to_svg(out / "scatter.svg")
    np.savetxt(out / "projection.csv", proj, delimiter=",")
    plotting.scatter_figure(export, out / "scatter.png")
    print(f"points\t{len(export)}\t{out / 'scatter.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ladc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic long-tailed train/test pair")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--num-classes", type=int, default=10)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--imbalance-factor", type=float, default=100.0)
    p.add_argument("--max-count", type=int, default=500)
    p.add_argument("--test-per-class", type=int, default=200)
    p.add_argument("--radius", type=float, default=0.7)
    p.add_argument("--signal-std", type=float, default=0.05)
    p.add_argument("--nuisance-std", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("binary", "csv"), default="binary")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="per-class n, mean and covariance diagonal")
    p.add_argument("--dataset", required=True)
    p.add_argument("--class", dest="class_id", type=int, default=None)
    p.add_argument("--format", choices=("binary", "csv"), default=None)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("calibrate", help="write the calibration debug dump (JSON lines)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("binary", "csv"), default=None)
    _calibration_args(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("train", help="single-stage classifier training")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("plain", "crt", "lws", "lws_plus"), default="plain")
    p.add_argument("--init", default=None, help="checkpoint to start from")
    p.add_argument("--sampling", choices=("instance", "ladc"), default="instance")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--lr-drop", nargs=2, type=float, action="append", default=[],
                   metavar=("EPOCH", "FACTOR"))
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--tau", type=float, default=1.25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("binary", "csv"), default=None)
    _calibration_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="grouped accuracy of a checkpoint on a test set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--train", default=None, help="training set, for many/medium/few grouping")
    p.add_argument("--counts", default=None, help="comma-separated training counts per class")
    p.add_argument("--many", type=int, default=100)
    p.add_argument("--few", type=int, default=20)
    p.add_argument("--format", choices=("binary", "csv"), default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="full two-stage run with report")
    p.add_argument("--config", default=None, help="TOML config, or a JSON report/config to replay")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--train")
    p.add_argument("--test")
    p.add_argument("--mass-ratio", type=float)
    p.add_argument("--m", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--calibration-mode", choices=("per_instance", "class_average"))
    p.add_argument("--weighting", choices=("paper", "inverse_distance"))
    p.add_argument("--draw-unit", choices=("instance", "class"))
    p.add_argument("--classifier-mode", choices=("crt", "lws", "lws_plus"))
    p.add_argument("--out-dir")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--no-scatter", action="store_true")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("scatter", help="2-D projection export (CSV, SVG, PNG)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--test", default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--projection", default=None, help="2xD matrix as CSV; fitted when omitted")
    p.add_argument("--synthetic", type=int, default=0, help="number of calibrated draws to add")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("binary", "csv"), default=None)
    _calibration_args(p)
    p.set_defaults(func=cmd_scatter)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limiter = contextlib.nullcontext()
    if args.threads:
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(limits=args.threads)
    try:
        with limiter:
            return args.func(args)
    except LADCError as exc:
        print(f"ladc: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"ladc: error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
