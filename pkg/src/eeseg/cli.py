"""Command-line entry point: fixtures, calibration, evaluation, sweeps.

Commands are deterministic given their flags and seed: reports carry no
timestamps and embed the resolved run configuration plus content hashes of
the input files, so re-runs are byte-identical. Exit codes: 0 success,
2 configuration error, 3 data/format error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import calibration, dataset, figures, fixtures, metrics, model, policy
from .errors import ConfigurationError, DataFormatError, EesegError
from .parallel import ordered_parallel_map

DEFAULT_BETA = 0.998  # best-performing uniform baseline threshold
DEFAULT_ALPHAS = (0.7, 0.8, 0.9, 0.95, 0.99)


def _file_hash(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_model(path: str) -> model.MultiExitNet:
    try:
        with open(path, "rb") as f:
            return model.load_weights(f.read())
    except FileNotFoundError as e:
        raise DataFormatError(f"model file not found: {path}") from e


def _check_dataset_matches(header: dataset.DatasetHeader, net: model.MultiExitNet) -> None:
    if header.num_classes != net.config.num_classes:
        raise ConfigurationError(
            f"dataset has {header.num_classes} classes, model expects "
            f"{net.config.num_classes}"
        )


def _ignore(value: int) -> int | None:
    return None if value < 0 else value


def parse_policy_spec(spec: str, num_classes: int) -> tuple[policy.ExitPolicy, str]:
    """`dense`, `uniform:t`, or `cbt:<thresholds.json>` to a policy object."""
    if spec == "dense":
        return policy.DensePolicy(), "dense"
    if spec.startswith("uniform:"):
        try:
            t = float(spec.split(":", 1)[1])
        except ValueError as e:
            raise ConfigurationError(f"bad uniform threshold in policy spec {spec!r}") from e
        return policy.UniformPolicy(t), spec
    if spec.startswith("cbt:"):
        path = spec.split(":", 1)[1]
        try:
            with open(path, "rb") as f:
                tv = calibration.load_thresholds(f.read())
        except FileNotFoundError as e:
            raise DataFormatError(f"thresholds file not found: {path}") from e
        if tv.num_classes != num_classes:
            raise ConfigurationError(
                f"thresholds file has {tv.num_classes} classes, model expects {num_classes}"
            )
        return policy.PerClassPolicy(tv), spec
    raise ConfigurationError(
        f"unknown policy spec {spec!r}; expected dense, uniform:t, or cbt:<file>"
    )


# --- commands ---------------------------------------------------------------


def cmd_generate_fixtures(args: argparse.Namespace) -> int:
    os.makedirs(args.out, exist_ok=True)
    net = fixtures.fixture_model(args.seed)
    with open(os.path.join(args.out, "fixture_model.eenw"), "wb") as f:
        f.write(model.save_weights(net))
    oracle = fixtures.default_oracle_model()
    with open(os.path.join(args.out, "oracle_model.eenw"), "wb") as f:
        f.write(model.save_weights(oracle))
    images, labels = fixtures.oracle_dataset(args.seed, count=16)
    dataset.write_eesd(os.path.join(args.out, "dataset.eesd"), images, labels, 4)
    print(f"wrote fixture_model.eenw, oracle_model.eenw, dataset.eesd to {args.out}")
    return 0


def _calibrate_gaps(
    net: model.MultiExitNet, dataset_path: str, ignore_label: int | None, jobs: int
) -> tuple[calibration.ClassMeanTable, calibration.ClassConfidenceMatrix, np.ndarray]:
    header = dataset.read_header(dataset_path)
    _check_dataset_matches(header, net)
    table = calibration.accumulate_class_means(
        net, dataset.iter_eesd(dataset_path), ignore_label, jobs=jobs
    )
    matrix = calibration.average_over_layers(table)
    gaps = calibration.confidence_gaps(matrix)
    return table, matrix, gaps


def _nan_to_none(a: np.ndarray) -> list:
    return [None if np.isnan(v) else float(v) for v in np.asarray(a, dtype=np.float64).reshape(-1)]


def _write_diagnostics(
    path: str,
    table: calibration.ClassMeanTable,
    matrix: calibration.ClassConfidenceMatrix,
    gaps: np.ndarray,
    run_config: dict,
) -> None:
    n, k = table.num_exits, table.num_classes
    doc = {
        "version": 1,
        "run_config": run_config,
        "counts": [int(c) for c in table.counts],
        "class_means": [
            [_nan_to_none(table.means[i, j]) for j in range(k)] for i in range(n)
        ],
        "confidence_matrix": [_nan_to_none(matrix.rows[j]) for j in range(k)],
        "confidence_gaps": _nan_to_none(gaps),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, indent=2)
        f.write("\n")


def cmd_calibrate(args: argparse.Namespace) -> int:
    if not args.alpha < args.beta:
        raise ConfigurationError(f"alpha {args.alpha} must be < beta {args.beta}")
    net = _load_model(args.model)
    ignore = _ignore(args.ignore_label)
    run_config = {
        "command": "calibrate",
        "model": args.model,
        "dataset": args.dataset,
        "alpha": args.alpha,
        "beta": args.beta,
        "ignore_label": args.ignore_label,
        "model_id": _file_hash(args.model),
        "dataset_id": _file_hash(args.dataset),
    }
    table, matrix, gaps = _calibrate_gaps(net, args.dataset, ignore, args.jobs)
    tv = calibration.scale_thresholds(gaps, args.alpha, args.beta)
    with open(args.out, "wb") as f:
        f.write(calibration.save_thresholds(tv))
    _write_diagnostics(
        os.path.splitext(args.out)[0] + ".diagnostics.json", table, matrix, gaps, run_config
    )
    print(f"wrote thresholds for {tv.num_classes} classes to {args.out}")
    return 0


def _evaluate_report(
    net: model.MultiExitNet,
    dataset_path: str,
    pol: policy.ExitPolicy,
    policy_desc: str,
    ignore_label: int | None,
    jobs: int,
    run_config: dict,
) -> metrics.EvalReport:
    header = dataset.read_header(dataset_path)
    _check_dataset_matches(header, net)
    gts: list[np.ndarray] = []
    images: list = []
    for image, labels in dataset.iter_eesd(dataset_path):
        images.append(image)
        gts.append(labels)
    results = list(
        ordered_parallel_map(lambda im: model.forward_adaptive(net, im, pol), images, jobs)
    )
    return metrics.build_report(
        results,
        gts,
        net.config.num_classes,
        policy_desc,
        ignore_label,
        model_id=run_config.get("model_id", ""),
        dataset_id=run_config.get("dataset_id", ""),
        run_config=run_config,
    )


def _write_report(report: metrics.EvalReport, out_dir: str, stem: str = "report") -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, f"{stem}.json"), "wb") as f:
        f.write(report.to_json_bytes())
    with open(os.path.join(out_dir, f"{stem}.csv"), "wb") as f:
        f.write(report.to_csv_bytes())
    figures.save_report_figure(report, os.path.join(out_dir, f"{stem}.png"))


def cmd_evaluate(args: argparse.Namespace) -> int:
    net = _load_model(args.model)
    pol, desc = parse_policy_spec(args.policy, net.config.num_classes)
    run_config = {
        "command": "evaluate",
        "model": args.model,
        "dataset": args.dataset,
        "policy": args.policy,
        "ignore_label": args.ignore_label,
        "model_id": _file_hash(args.model),
        "dataset_id": _file_hash(args.dataset),
    }
    report = _evaluate_report(
        net, args.dataset, pol, desc, _ignore(args.ignore_label), args.jobs, run_config
    )
    _write_report(report, args.out)
    last = report.rows[-1]
    print(
        f"policy {desc}: exit-{last.exit} mIoU {last.miou:.4f}, "
        f"{last.gflops:.6f} GFLOPs (reports in {args.out})"
    )
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
    if not alphas:
        raise ConfigurationError("empty alpha list")
    for a in alphas:
        if not a < args.beta:
            raise ConfigurationError(f"alpha {a} must be < beta {args.beta}")
    net = _load_model(args.model)
    ignore = _ignore(args.ignore_label)
    os.makedirs(args.out, exist_ok=True)
    model_id = _file_hash(args.model)
    dataset_id = _file_hash(args.dataset)

    # one dataset pass: the class means and gaps do not depend on alpha,
    # so each alpha only needs the final rescale
    table, matrix, gaps = _calibrate_gaps(net, args.dataset, ignore, args.jobs)

    labeled_reports: list[tuple[str, metrics.EvalReport]] = []
    base_desc = f"uniform:{args.beta}"
    base_config = {
        "command": "sweep",
        "model": args.model,
        "dataset": args.dataset,
        "policy": base_desc,
        "ignore_label": args.ignore_label,
        "model_id": model_id,
        "dataset_id": dataset_id,
    }
    base_report = _evaluate_report(
        net, args.dataset, policy.UniformPolicy(args.beta), base_desc,
        ignore, args.jobs, base_config,
    )
    _write_report(base_report, os.path.join(args.out, "uniform_baseline"))
    labeled_reports.append((base_desc, base_report))

    for a in alphas:
        tv = calibration.scale_thresholds(gaps, a, args.beta)
        tpath = os.path.join(args.out, f"thresholds_alpha_{a}.json")
        with open(tpath, "wb") as f:
            f.write(calibration.save_thresholds(tv))
        desc = f"cbt[{a},{args.beta}]"
        run_config = dict(base_config, policy=desc, alpha=a, beta=args.beta)
        report = _evaluate_report(
            net, args.dataset, policy.PerClassPolicy(tv), desc, ignore, args.jobs, run_config
        )
        _write_report(report, os.path.join(args.out, f"alpha_{a}"))
        labeled_reports.append((desc, report))

    with open(os.path.join(args.out, "combined.csv"), "w", encoding="utf-8", newline="") as f:
        f.write("policy,exit,miou,gflops\n")
        for label, report in labeled_reports:
            for r in report.rows:
                f.write(f"{label},{r.exit},{r.miou!r},{r.gflops!r}\n")
    with open(os.path.join(args.out, "table.txt"), "w", encoding="utf-8") as f:
        f.write(metrics.format_comparison_table(labeled_reports))
    figures.save_comparison_figure(labeled_reports, os.path.join(args.out, "sweep.png"))
    print(f"swept {len(alphas)} alpha values + baseline; outputs in {args.out}")
    return 0


def cmd_forward(args: argparse.Namespace) -> int:
    """Dump per-image, per-exit dense logits (supports external parity checks)."""
    net = _load_model(args.model)
    header = dataset.read_header(args.dataset)
    _check_dataset_matches(header, net)
    arrays: dict[str, np.ndarray] = {}
    for i, (image, _labels) in enumerate(dataset.iter_eesd(args.dataset)):
        if args.limit is not None and i >= args.limit:
            break
        logits = model.forward_dense_logits(net, image)
        for n, t in enumerate(logits, start=1):
            arrays[f"img{i:03d}_exit{n}"] = t.data
    np.savez(args.out, **arrays)
    print(f"wrote {len(arrays)} logit tensors to {args.out}")
    return 0


# --- argument plumbing ------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", help="EENW weight file")
    p.add_argument("--dataset", help="EESD dataset file")
    p.add_argument("--ignore-label", type=int, default=255,
                   help="label excluded from statistics/metrics (negative disables)")
    p.add_argument("--jobs", type=int, default=1, help="image-level worker threads")
    p.add_argument("--config", default=None, help="JSON file with default flag values")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eeseg",
        description="Early-exit segmentation runtime: calibrate per-class "
        "thresholds, run confidence-adaptive inference, report mIoU/GFLOPs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-fixtures", help="write fixture model/dataset files")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory")
    p.add_argument("--config", default=None)
    p.set_defaults(fn=cmd_generate_fixtures, _required=("out",))

    p = sub.add_parser("calibrate", help="derive per-class thresholds from a dataset")
    _add_common(p)
    p.add_argument("--alpha", type=float, help="threshold for the easiest class")
    p.add_argument("--beta", type=float, default=DEFAULT_BETA, help="threshold for the hardest class")
    p.add_argument("--out", help="thresholds JSON path")
    p.set_defaults(fn=cmd_calibrate, _required=("model", "dataset", "alpha", "out"))

    p = sub.add_parser("evaluate", help="run adaptive inference and report mIoU/GFLOPs")
    _add_common(p)
    p.add_argument("--policy", help="dense | uniform:t | cbt:<thresholds.json>")
    p.add_argument("--out", help="output directory")
    p.set_defaults(fn=cmd_evaluate, _required=("model", "dataset", "policy", "out"))

    p = sub.add_parser("sweep", help="calibrate once, evaluate across alpha values")
    _add_common(p)
    p.add_argument("--alphas", default=",".join(str(a) for a in DEFAULT_ALPHAS),
                   help="comma-separated alpha values")
    p.add_argument("--beta", type=float, default=DEFAULT_BETA)
    p.add_argument("--out", help="output directory")
    p.set_defaults(fn=cmd_sweep, _required=("model", "dataset", "out"))

    p = sub.add_parser("forward", help="dump dense per-exit logits to an .npz file")
    _add_common(p)
    p.add_argument("--limit", type=int, default=None, help="only the first N images")
    p.add_argument("--out", help="output .npz path")
    p.set_defaults(fn=cmd_forward, _required=("model", "dataset", "out"))

    return parser


def _apply_config_file(argv: list[str], parser: argparse.ArgumentParser) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as f:
                defaults = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise DataFormatError(f"bad config file {args.config}: {e}") from e
        if not isinstance(defaults, dict):
            raise DataFormatError("config file must hold a JSON object")
        parser.set_defaults(**{k.replace("-", "_"): v for k, v in defaults.items()})
        args = parser.parse_args(argv)  # explicit flags still win
    missing = [name for name in getattr(args, "_required", ()) if getattr(args, name) is None]
    if missing:
        raise ConfigurationError(
            f"missing required parameter(s) for {args.command}: "
            + ", ".join(f"--{m.replace('_', '-')}" for m in missing)
        )
    return args


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = _apply_config_file(list(sys.argv[1:] if argv is None else argv), parser)
        return args.fn(args)
    except EesegError as e:
        print(f"error: {e}", file=sys.stderr)
        return getattr(e, "exit_code", 2)


if __name__ == "__main__":
    sys.exit(main())
