"""Command line front end.

Subcommands: ``validate``, ``convergence``, ``kalpha``, ``regress``, ``infer``
and ``variations``. Every command writes JSON (and CSV with
``--format csv``) into ``--out``; each file embeds the run configuration and
the toolkit version. Exit codes: 0 success, 1 input or environment failure,
2 validation findings.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from . import __version__
from .data_model import (
    IngestConfig,
    MultiAnnotatedDataset,
    ReferentialIntegrityError,
    RosterError,
    SchemaError,
    StructureError,
    load_annotator_files,
    load_dataset,
    validate,
)
from .geometry import GeometryError
from .kalpha import DEFAULT_THRESHOLDS
from .map_metric import ROLE_MODES
from .pipeline import convergence_interval, fit_regression, kalpha_bootstrap, regression_points
from .stats import BootstrapError, BootstrapSummary, FitError, RegressionModel, infer_map
from .variation_analysis import variation_report

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_FINDINGS = 2


@dataclass
class RunConfig:
    command: str
    inputs: list[str] = field(default_factory=list)
    annotator_files: list[str] = field(default_factory=list)
    task: str = "det"
    thresholds: list[float] = field(default_factory=lambda: list(DEFAULT_THRESHOLDS))
    replicates: int = 1000
    fraction: float = 0.10
    seed: int = 0
    role_mode: str = "per-image"
    with_replacement: bool = False
    out: str = "."
    format: str = "json"
    group_field: str | None = None
    category_map: str | None = None

    def check(self) -> None:
        if not self.thresholds or not all(0 < t <= 1 for t in self.thresholds):
            raise ValueError("thresholds must lie in (0, 1]")
        if self.replicates < 1:
            raise ValueError("--replicates must be at least 1")
        if not 0 < self.fraction <= 1:
            raise ValueError("--fraction must lie in (0, 1]")


def parse_thresholds(text: str) -> list[float]:
    """``0.5:0.95:0.05`` (inclusive range) or a comma list such as ``0.4,0.5``."""
    text = text.strip()
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise argparse.ArgumentTypeError(f"bad threshold range {text!r}; use start:stop:step")
        start, stop, step = parts
        n = int(round((stop - start) / step)) + 1
        return [round(start + k * step, 10) for k in range(n)]
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad threshold list {text!r}") from None


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _provenance(config: RunConfig) -> dict:
    return {"config": asdict(config), "version": __version__}


def _load_input(config: RunConfig, path: str | None = None, strict: bool = True) -> MultiAnnotatedDataset:
    ingest = IngestConfig(group_field=config.group_field, category_map=config.category_map)
    if config.annotator_files and path is None:
        files = {}
        for item in config.annotator_files:
            ann, sep, p = item.partition("=")
            if not sep:
                raise SchemaError(f"--annotator-file expects ID=PATH, got {item!r}")
            files[ann] = p
        return load_annotator_files(files, ingest)
    path = path or (config.inputs[0] if config.inputs else None)
    if path is None:
        raise SchemaError("no input given; use --input or --annotator-file")
    return load_dataset(path, ingest, strict=strict)


def _summary_csv(summary: BootstrapSummary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replicate", "value"])
    for i, v in enumerate(summary.values):
        w.writerow([i, repr(v)])
    return buf.getvalue()


def _interval_csv(rows: Sequence[tuple[str, BootstrapSummary]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "mean", "std", "min", "max", "ci_lower", "ci_upper"])
    for label, s in rows:
        w.writerow([label] + [repr(v) for v in (s.mean, s.std, s.min, s.max, s.ci_lower, s.ci_upper)])
    return buf.getvalue()


def _write_summary(config: RunConfig, name: str, summary: BootstrapSummary) -> None:
    out = Path(config.out)
    payload = summary.to_dict()
    payload.update(_provenance(config))
    _write(out / f"{name}.json", _dump(payload))
    if config.format == "csv":
        _write(out / f"{name}_replicates.csv", _summary_csv(summary))
        _write(out / f"{name}_interval.csv", _interval_csv([(name, summary)]))


def _fmt(s: BootstrapSummary, digits: int = 2) -> str:
    return (
        f"mean {s.mean:.{digits}f}  std {s.std:.{digits}f}  "
        f"95% CI [{s.ci_lower:.{digits}f}, {s.ci_upper:.{digits}f}]  (n={s.replicates})"
    )


# -- commands ---------------------------------------------------------------


def cmd_validate(config: RunConfig) -> int:
    dataset = _load_input(config, strict=False)
    report = validate(dataset)
    payload = report.to_dict()
    payload.update(_provenance(config))
    _write(Path(config.out) / "validation.json", _dump(payload))
    print(
        f"{report.n_images} images, {report.n_instances} instances, "
        f"{report.annotators_per_image:.2f} annotators/image; "
        f"duplicates {report.suspected_duplicates}, degenerate {report.degenerate_boxes}, "
        f"out of bounds {report.out_of_bounds}"
    )
    return EXIT_FINDINGS if report.has_findings else EXIT_OK


def cmd_convergence(config: RunConfig) -> int:
    dataset = _load_input(config)
    summary = convergence_interval(
        dataset,
        task=config.task,
        thresholds=config.thresholds,
        replicates=config.replicates,
        fraction=config.fraction,
        seed=config.seed,
        role_mode=config.role_mode,
        with_replacement=config.with_replacement,
    )
    _write_summary(config, "convergence", summary)
    print(f"modified mAP ({config.task}): {_fmt(summary)}")
    return EXIT_OK


def cmd_kalpha(config: RunConfig) -> int:
    dataset = _load_input(config)
    summary = kalpha_bootstrap(
        dataset,
        task=config.task,
        thresholds=config.thresholds,
        replicates=config.replicates,
        fraction=config.fraction,
        seed=config.seed,
        with_replacement=config.with_replacement,
    )
    _write_summary(config, "kalpha", summary)
    print(f"K-alpha ({config.task}): {_fmt(summary, 4)}")
    return EXIT_OK


def _read_points(path: str) -> list[tuple[float, float]]:
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    try:
        return [(float(r["alpha"]), float(r["map"])) for r in rows]
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"{path}: expected columns 'alpha' and 'map' ({exc})") from None


def cmd_regress(config: RunConfig, points_files: Sequence[str] = ()) -> int:
    points: list[tuple[float, float]] = []
    for p in points_files:
        points.extend(_read_points(p))
    if config.inputs:
        datasets = [_load_input(config, p) for p in config.inputs]
        points.extend(
            regression_points(
                datasets,
                task=config.task,
                thresholds=config.thresholds,
                replicates=config.replicates,
                fraction=config.fraction,
                seed=config.seed,
                role_mode=config.role_mode,
            )
        )
    if not points:
        raise SchemaError("regress needs --input datasets or --points files")
    model = fit_regression(points, pool=list(config.inputs) + list(points_files))
    payload = model.to_dict()
    payload.update(_provenance(config))
    out = Path(config.out)
    _write(out / "regression.json", _dump(payload))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["alpha", "map"])
    for a, m in points:
        w.writerow([repr(a), repr(m)])
    _write(out / "regression_points.csv", buf.getvalue())
    print(
        f"mAP = {model.slope:.3f} * alpha + {model.intercept:.3f}  "
        f"(rho {model.pearson:.3f}, R^2 {model.r_squared:.3f}, {model.n_points} points)"
    )
    return EXIT_OK


def cmd_infer(config: RunConfig, model_path: str, alpha_path: str) -> int:
    with open(model_path, encoding="utf-8") as fh:
        model = RegressionModel.from_dict(json.load(fh))
    with open(alpha_path, encoding="utf-8") as fh:
        alpha = BootstrapSummary.from_dict(json.load(fh))
    inferred = infer_map(model, alpha, scale=100.0)
    _write_summary(config, "inferred", inferred)
    print(f"inferred mAP: {_fmt(inferred)}")
    return EXIT_OK


def cmd_variations(config: RunConfig) -> int:
    dataset = _load_input(config)
    report = variation_report(dataset, config.thresholds, config.task)
    out = Path(config.out)
    payload = report.to_dict()
    payload.update(_provenance(config))
    _write(out / "variations.json", _dump(payload))
    if config.format == "csv":
        _write(out / "variations.csv", report.to_csv())
    _write(out / "boundary_histogram.csv", report.histogram.to_csv())
    first = report.counts[report.thresholds[0]]
    print(
        f"{report.n_images} images; at IoU {report.thresholds[0]:.2f}: "
        + ", ".join(f"{k} {v:.1%}" for k, v in first.shares().items())
    )
    if report.histogram.duplicate_spike:
        print(f"warning: {report.histogram.exact_one_share:.1%} of matches have IoU 1.0 (possible duplicates)")
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="label-convergence",
        description="Inter-annotator agreement and label convergence for detection datasets.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, sampling=True):
        p.add_argument("--input", action="append", default=[], help="multi-annotator COCO JSON (repeatable)")
        p.add_argument(
            "--annotator-file", action="append", default=[], metavar="ID=PATH", help="one COCO file per annotator"
        )
        p.add_argument("--group-field", help="annotation field splitting anonymous annotators into groups A/B")
        p.add_argument("--category-map", help="JSON object mapping source to target category ids")
        p.add_argument("--task", choices=("det", "segm"), default="det")
        p.add_argument("--thresholds", type=parse_thresholds, default=list(DEFAULT_THRESHOLDS))
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        if sampling:
            p.add_argument("--replicates", type=int, default=1000)
            p.add_argument("--fraction", type=float, default=0.10)
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--role-mode", choices=ROLE_MODES, default="per-image")
            p.add_argument("--with-replacement", action="store_true")

    common(sub.add_parser("validate", help="check a dataset for data-quality findings"), sampling=False)
    common(sub.add_parser("convergence", help="bootstrap the modified mAP between two annotators"))
    common(sub.add_parser("kalpha", help="bootstrap localized Krippendorff's alpha"))
    p = sub.add_parser("regress", help="fit mAP = slope * alpha + intercept")
    common(p)
    p.add_argument("--points", action="append", default=[], help="CSV with columns alpha,map (repeatable)")
    p = sub.add_parser("infer", help="turn an alpha bootstrap summary into an mAP interval")
    common(p)
    p.add_argument("--model", required=True, help="regression.json from 'regress'")
    p.add_argument("--alpha", required=True, help="kalpha.json from 'kalpha'")
    common(sub.add_parser("variations", help="classify annotator disagreements"), sampling=False)
    return parser


def _config_from(args: argparse.Namespace) -> RunConfig:
    config = RunConfig(
        command=args.command,
        inputs=list(args.input),
        annotator_files=list(args.annotator_file),
        task=args.task,
        thresholds=[float(t) for t in args.thresholds],
        out=args.out,
        format=args.format,
        group_field=args.group_field,
        category_map=args.category_map,
    )
    for name in ("replicates", "fraction", "seed", "role_mode", "with_replacement"):
        if hasattr(args, name):
            setattr(config, name, getattr(args, name))
    config.check()
    return config


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _config_from(args)
        if args.command == "validate":
            return cmd_validate(config)
        if args.command == "convergence":
            return cmd_convergence(config)
        if args.command == "kalpha":
            return cmd_kalpha(config)
        if args.command == "regress":
            return cmd_regress(config, args.points)
        if args.command == "infer":
            return cmd_infer(config, args.model, args.alpha)
        if args.command == "variations":
            return cmd_variations(config)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_FAILURE
    except (
        SchemaError,
        ReferentialIntegrityError,
        RosterError,
        StructureError,
        GeometryError,
        BootstrapError,
        FitError,
        ValueError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
