"""Command-line front end.

Exit codes: 0 success, 1 validation failure, 2 bad input or config,
3 infeasible data (e.g. one label class), 4 missing entity.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from . import classifier, data_model, laki, pipeline, report, shapley, synthfab, validation

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_BAD_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_MISSING = 4

log = logging.getLogger("trajshap")


class CLIError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    measurements: str | None = None
    labels: str | None = None
    ops: str | None = None
    model: str | None = None
    lambda_grid: list[float] = field(default_factory=lambda: list(classifier.DEFAULT_LAMBDA_GRID))
    folds: int = 3
    imputation: str = "laki"
    shapley_method: str = "tsa"
    f_mode: str = "probability"
    out_dir: str = "."
    seed: int = 0
    threshold: float = 0.5
    top_k: int = 5

    def __post_init__(self):
        if self.imputation not in pipeline.IMPUTATION_MODES:
            raise ValueError(f"imputation must be one of {pipeline.IMPUTATION_MODES}")
        if self.shapley_method not in ("baseline", "ce", "tsa"):
            raise ValueError("shapley_method must be baseline, ce or tsa")
        if self.f_mode not in ("probability", "logit"):
            raise ValueError("f_mode must be probability or logit")
        if not isinstance(self.folds, int) or self.folds < 2:
            raise ValueError("folds must be an integer >= 2")
        if not self.lambda_grid or any(not float(v) > 0 for v in self.lambda_grid):
            raise ValueError("lambda_grid must be a non-empty list of positive numbers")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls()
        path = Path(path)
        doc = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(doc, dict):
            raise ValueError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config key(s): {sorted(unknown)}")
        base = path.parent
        for key in ("measurements", "labels", "ops", "model", "out_dir"):
            if doc.get(key) is not None and not Path(doc[key]).is_absolute():
                doc[key] = str(base / doc[key])
        return cls(**doc)

    def out(self) -> Path:
        return Path(self.out_dir)

    def input_path(self, key: str) -> Path:
        default = {"measurements": "measurements.csv", "labels": "labels.csv", "ops": "ops.csv",
                   "model": "model.json"}[key]
        val = getattr(self, key)
        return Path(val) if val is not None else self.out() / default


def _load_dataset(cfg: RunConfig) -> data_model.TrajectoryDataset:
    paths = [cfg.input_path(k) for k in ("measurements", "labels", "ops")]
    for p in paths:
        if not p.exists():
            raise CLIError(EXIT_BAD_INPUT, f"input file not found: {p}")
    try:
        return data_model.load_csvs(*paths)
    except data_model.IngestError as exc:
        raise CLIError(EXIT_BAD_INPUT, str(exc)) from None


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    report.write_atomic(path, text)


def cmd_synth(spec_path: str | None, out_dir: Path, seed: int | None = None) -> list[Path]:
    try:
        spec = synthfab.SynthSpec() if spec_path is None else synthfab.SynthSpec.from_json(
            Path(spec_path).read_text(encoding="utf-8"))
        if seed is not None:
            spec = replace(spec, seed=seed)
        out = synthfab.generate(spec)
    except FileNotFoundError:
        raise CLIError(EXIT_BAD_INPUT, f"spec file not found: {spec_path}") from None
    except (ValueError, TypeError) as exc:
        raise CLIError(EXIT_BAD_INPUT, f"invalid SynthSpec: {exc}") from None
    return synthfab.write_outputs(out, out_dir)


def _eval_rows(mode: str, rep: classifier.EvalReport, lam: float) -> list:
    return [mode, repr(rep.auc), repr(rep.normalized_auc), repr(rep.tpr), repr(rep.threshold),
            repr(lam)]


def cmd_train(cfg: RunConfig, compare_imputation: bool = False) -> dict[str, Path]:
    ds = _load_dataset(cfg)
    if ds.y.min() == ds.y.max():
        raise CLIError(EXIT_INFEASIBLE, "labels contain a single class; nothing to train")
    if cfg.folds > ds.N:
        raise CLIError(EXIT_BAD_INPUT, f"folds={cfg.folds} exceeds the number of wafers ({ds.N})")
    n_lots = len(set(ds.groups().tolist()))
    if cfg.folds > n_lots:
        raise CLIError(EXIT_BAD_INPUT, f"folds={cfg.folds} exceeds the number of lots ({n_lots})")
    kernel = laki.build_lot_kernel(ds)
    modes = list(pipeline.IMPUTATION_MODES) if compare_imputation else [cfg.imputation]
    if cfg.imputation in modes:
        modes.remove(cfg.imputation)
        modes.insert(0, cfg.imputation)

    eval_buf, cv_buf = io.StringIO(), io.StringIO()
    ev = csv.writer(eval_buf, lineterminator="\n")
    cv = csv.writer(cv_buf, lineterminator="\n")
    ev.writerow(["imputation", "auc", "normalized_auc", "tpr", "threshold", "lambda"])
    cv.writerow(["imputation", "lambda", "mean_val_loss"])
    model_json = None
    try:
        for mode in modes:
            model = pipeline.fit_model(ds, mode, cfg.lambda_grid, cfg.folds, kernel)
            rep = pipeline.heldout_report(ds, mode, cfg.lambda_grid, cfg.folds, cfg.seed,
                                          cfg.threshold, kernel)
            ev.writerow(_eval_rows(mode, rep, model.lam))
            for lam, loss in model.cv_path:
                cv.writerow([mode, repr(lam), repr(loss)])
            if mode == cfg.imputation:
                model_json = model.to_json()
                imputed = pipeline.fill(ds, mode, kernel)
    except classifier.TrainingError as exc:
        raise CLIError(EXIT_INFEASIBLE, str(exc)) from None
    except ValueError as exc:
        raise CLIError(EXIT_BAD_INPUT, str(exc)) from None

    out = cfg.out()
    paths = {
        "model": cfg.input_path("model") if cfg.model else out / "model.json",
        "eval": out / "eval.csv",
        "cv": out / "cv.csv",
        "imputed": out / "imputed.json",
    }
    _write(paths["model"], model_json)
    _write(paths["eval"], eval_buf.getvalue())
    _write(paths["cv"], cv_buf.getvalue())
    _write(paths["imputed"], json.dumps(laki.imputed_to_dict(ds, imputed), indent=1) + "\n")
    return paths


def cmd_attribute(cfg: RunConfig, wafer_id: str) -> dict[str, Path]:
    ds = _load_dataset(cfg)
    model_path = cfg.input_path("model")
    if not model_path.exists():
        raise CLIError(EXIT_MISSING, f"model not found: {model_path} (run `train` first)")
    try:
        model = classifier.LogisticModel.load(model_path)
    except (ValueError, KeyError) as exc:
        raise CLIError(EXIT_BAD_INPUT, f"unreadable model {model_path}: {exc}") from None
    if wafer_id not in ds.wafers:
        raise CLIError(EXIT_MISSING, f"unknown wafer {wafer_id!r}")
    try:
        attr = pipeline.attribute(ds, model, wafer_id, cfg.shapley_method, cfg.f_mode,
                                  imputation=cfg.imputation)
    except ValueError as exc:
        raise CLIError(EXIT_BAD_INPUT, str(exc)) from None

    out = cfg.out()
    paths = {"attr": out / "attr.csv"}
    text = report.attribution_csv([attr], ds.order)
    if cfg.f_mode == "probability":
        dev = shapley.deviation_report(attr, int(ds.y[ds.wafer_index(wafer_id)]))
        text += f"# residual={dev.residual!r}\n# large_residual={str(dev.large_residual).lower()}\n"
    _write(paths["attr"], text)
    if attr.method is shapley.Method.TSA:
        curve = report.cumulative_curve(attr, ds.order)
        jumps = report.top_jumps(curve, cfg.top_k)
        paths["curve"] = out / "curve.csv"
        paths["svg"] = out / "curve.svg"
        paths["jumps"] = out / "jumps.csv"
        _write(paths["curve"], report.curve_csv([curve]))
        _write(paths["svg"], report.curve_svg(curve, probability=cfg.f_mode == "probability"))
        _write(paths["jumps"], report.jumps_csv([(wafer_id, jumps)]))
    else:
        log.info("cumulative curve skipped: only defined for trajectory scores")
    return paths


def univariate_csv(rows: list[classifier.UnivariateResult]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["item_id", "sample_size", "auc", "normalized_auc", "flag"])
    for r in rows:
        wr.writerow([r.item_id, r.sample_size, repr(r.auc), repr(r.normalized_auc), r.flag])
    buf.write("# auc_evaluation=in_sample\n")
    return buf.getvalue()


def cmd_univariate(cfg: RunConfig) -> Path:
    ds = _load_dataset(cfg)
    path = cfg.out() / "auc.csv"
    _write(path, univariate_csv(classifier.univariate_screen(ds)))
    return path


def cmd_validate(max_d: int, seed: int = 0, n_instances: int = 200, inject_fault: bool = False,
                 stream=None) -> int:
    stream = stream or sys.stdout
    if not 1 <= max_d <= shapley.MAX_ORACLE_D:
        raise CLIError(EXIT_BAD_INPUT, f"--max-d must lie in [1, {shapley.MAX_ORACLE_D}]")
    closed = validation.broken_closed_form if inject_fault else shapley.trajectory_shapley
    rep = validation.run_validation(max_d, seed, n_instances, closed)
    for inst, msg in rep.failures:
        print(f"FAIL seed={inst}: {msg}", file=stream)
    status = "ok" if rep.ok else f"{len(rep.failures)} failure(s)"
    print(f"validated {rep.n_instances} instance(s), max_d={max_d}: {status}", file=stream)
    return EXIT_OK if rep.ok else EXIT_VALIDATION


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON run config")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")
    common.add_argument("--compare-imputation", action="store_true", default=argparse.SUPPRESS,
                        help="train: also evaluate the other imputation mode")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="trajshap", parents=[common],
                                description="Trajectory Shapley attribution for wafer diagnosis")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("synth", parents=[common], help="generate a synthetic fab dataset")
    s.add_argument("spec", nargs="?", help="SynthSpec JSON (defaults if omitted)")
    sub.add_parser("train", parents=[common], help="fit the classifier and report held-out metrics")
    a = sub.add_parser("attribute", parents=[common], help="attribution report for one wafer")
    a.add_argument("wafer_id")
    sub.add_parser("univariate", parents=[common], help="per-item univariate AUC screen")
    v = sub.add_parser("validate", parents=[common], help="randomized Shapley engine self-check")
    v.add_argument("--max-d", type=int, default=12)
    v.add_argument("--instances", type=int, default=200)
    v.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    return p


def _config(args) -> RunConfig:
    try:
        cfg = RunConfig.load(getattr(args, "config", None))
    except FileNotFoundError:
        raise CLIError(EXIT_BAD_INPUT, f"config not found: {args.config}") from None
    except (ValueError, TypeError) as exc:
        raise CLIError(EXIT_BAD_INPUT, f"bad config: {exc}") from None
    over = {}
    if hasattr(args, "out"):
        over["out_dir"] = args.out
    if hasattr(args, "seed"):
        over["seed"] = args.seed
    return replace(cfg, **over) if over else cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            return cmd_validate(args.max_d, getattr(args, "seed", 0), args.instances,
                                args.inject_fault)
        cfg = _config(args)
        if args.command == "synth":
            seed = getattr(args, "seed", None)
            for p in cmd_synth(args.spec, cfg.out(), seed):
                print(p)
        elif args.command == "train":
            for p in cmd_train(cfg, getattr(args, "compare_imputation", False)).values():
                print(p)
        elif args.command == "attribute":
            for p in cmd_attribute(cfg, args.wafer_id).values():
                print(p)
        elif args.command == "univariate":
            print(cmd_univariate(cfg))
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
