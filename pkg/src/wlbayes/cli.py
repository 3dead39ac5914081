"""Command-line front end.

Subcommands: ``simulate``, ``fit``, ``loo``, ``compare`` and ``rerun``.
Every run writes a ``manifest.json`` next to its outputs recording the
arguments, input checksums and output checksums; ``rerun`` replays a
manifest and checks the outputs are byte-identical.

Exit codes: 0 success, 1 usage, 2 data error, 3 sampler failure,
4 convergence soft-fail (some R-hat above 1.05).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io as wio
from . import metrics as met
from .model import ModelSpec
from .predict import WEIGHTING_MODES, classify, loo_validate
from .sampler import SamplerConfig, SamplerError, sample
from .simdata import SimConfig, simulate
from .weights import compute_weights, unit_weights

logger = logging.getLogger("wlbayes")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_SAMPLER = 3
EXIT_SOFT_FAIL = 4
RHAT_LIMIT = 1.05

MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


class ManifestError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _name_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _check_proportions(props: list[float]) -> None:
    if len(props) < 2:
        raise UsageError("need at least two proportions")
    if any(p <= 0 for p in props):
        raise UsageError("proportions must be positive")
    if abs(sum(props) - 1.0) > 1e-6:
        raise UsageError("proportions must sum to 1")


# ---------------------------------------------------------------- manifest


def _manifest(command: str, args: dict, inputs: dict, out: Path, artifacts: list[str]) -> dict:
    return {
        "tool": "wlbayes",
        "version": __version__,
        "command": command,
        "arguments": args,
        "inputs": {k: {"path": str(p), "sha256": wio.sha256_file(p)} for k, p in inputs.items()},
        "output_dir": str(out),
        "artifacts": {name: wio.sha256_file(out / name) for name in artifacts},
    }


def _finish(command, args, inputs, out, artifacts):
    wio.write_json(out / MANIFEST, _manifest(command, args, inputs, out, artifacts))


def _sampler_config(a) -> SamplerConfig:
    return SamplerConfig(
        seed=a["seed"],
        n_chains=a["chains"],
        n_warmup=a["warmup"],
        n_draws=a["draws"],
        algorithm=a["algorithm"],
        target_accept=a["target_accept"],
    )


def _model_spec(a, K: int) -> ModelSpec:
    kw = dict(prior_sd=a["prior_sd"], cutpoint_sd=a["cutpoint_sd"], standardize=not a["no_standardize"])
    if a["family"] == "binary":
        return ModelSpec.binary(intercept_sd=a["intercept_sd"], **kw)
    return ModelSpec.ordered(K, **kw)


def _load(a):
    return wio.read_dataset(a["data"], a["outcome"], a["family"], a["predictors"], a["categories"])


def _class_proportions(a, data):
    if a["weighting"] != "proportions":
        if a["proportions"] is not None:
            raise UsageError("--proportions is only used with --weighting proportions")
        return None
    props = a["proportions"]
    if props is None:
        raise UsageError("--weighting proportions needs --proportions")
    _check_proportions(props)
    labels = [0, 1] if data.outcome_kind == "binary" else list(range(1, data.n_categories + 1))
    if len(props) != len(labels):
        raise UsageError(f"expected {len(labels)} proportions (one per class {labels}), got {len(props)}")
    return dict(zip(labels, props))


# ---------------------------------------------------------------- commands


def cmd_simulate(a: dict, out: Path) -> int:
    props = a["proportions"]
    _check_proportions(props)
    family = a["family"]
    if family == "binary" and len(props) != 2:
        raise UsageError("binary simulation takes exactly two proportions")
    cfg = SimConfig(
        n=a["n"],
        seed=a["seed"],
        family=family,
        target_proportions=tuple(props),
        true_beta=tuple(a["beta"]),
    )
    data = simulate(cfg)
    wio.write_dataset(data, out / "data.csv")
    _finish("simulate", a, {}, out, ["data.csv"])
    print(f"wrote {data.n} rows to {out / 'data.csv'}")
    return EXIT_OK


def cmd_fit(a: dict, out: Path) -> int:
    data = _load(a)
    props = _class_proportions(a, data)
    spec = _model_spec(a, data.n_categories)
    config = _sampler_config(a)
    if a["weighting"] == "none":
        w = unit_weights(data.n, data.y)
    else:
        w = compute_weights(data.y, props)
    draws = sample(spec, data, w, config)

    summary = draws.summary()
    warnings = [
        f"R-hat {s['rhat']:.4f} > {RHAT_LIMIT} for {name}"
        for name, s in summary.items()
        if s["rhat"] is not None and s["rhat"] > RHAT_LIMIT
    ]
    n_div = int(draws.n_divergent.sum())
    if n_div:
        warnings.append(f"{n_div} divergent transitions")
    report = {
        "model": dataclasses.asdict(spec),
        "sampler": config.to_dict(),
        "weighting": a["weighting"],
        "class_weights": {str(k): v for k, v in w.per_class().items()},
        "standardizer": draws.standardizer.to_dict(),
        "parameters": summary,
        "accept_rate": [float(v) for v in draws.accept_rate],
        "step_size": [float(v) for v in draws.step_size],
        "n_divergent": [int(v) for v in draws.n_divergent],
        "max_rhat": draws.diagnostics.max_rhat(),
        "min_ess_bulk": draws.diagnostics.min_ess(),
        "warnings": warnings,
    }
    wio.write_via(out / "draws.csv", draws.write_csv)
    wio.write_json(out / "diagnostics.json", report)
    _finish("fit", a, {"data": a["data"]}, out, ["draws.csv", "diagnostics.json"])
    for w_ in warnings:
        logger.warning(w_)
    print(f"wrote posterior draws to {out / 'draws.csv'}")
    return EXIT_SOFT_FAIL if any("R-hat" in w_ for w_ in warnings) else EXIT_OK


def cmd_loo(a: dict, out: Path) -> int:
    data = _load(a)
    props = _class_proportions(a, data)
    spec = _model_spec(a, data.n_categories)
    config = _sampler_config(a)
    res = loo_validate(spec, data, a["weighting"], config, props, fixed_weights=a["fixed_weights"])
    pred = res.predictive
    if data.outcome_kind == "binary":
        labels = classify(pred, threshold=a["threshold"])
        report = met.binary_report(pred.probs[:, 1], data.y, labels, threshold=a["threshold"])
    else:
        labels = classify(pred)
        report = met.ordinal_report(pred.probs, data.y, labels)

    diag = res.diagnostics_summary()
    wio.write_via(out / "predictions.csv", res.write_csv)
    wio.write_json(out / "metrics.json", report.to_dict())
    wio.write_json(out / "diagnostics.json", diag)
    _finish("loo", a, {"data": a["data"]}, out, ["predictions.csv", "metrics.json", "diagnostics.json"])
    print(met.format_report(report))
    soft = diag["max_rhat"] is not None and diag["max_rhat"] > RHAT_LIMIT
    if soft:
        logger.warning("max R-hat %.4f across folds exceeds %s", diag["max_rhat"], RHAT_LIMIT)
    return EXIT_SOFT_FAIL if soft else EXIT_OK


def _read_predictions(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ManifestError(f"{path}: no predictions")
    pcols = [c for c in rows[0] if c.startswith("p_")]
    y = np.array([int(r["y_true"]) for r in rows])
    P = np.array([[float(r[c]) for c in pcols] for r in rows])
    return y, P


def _run_dir(path: str) -> Path:
    p = Path(path)
    return p.parent if p.is_file() else p


def _load_run(path: str):
    d = _run_dir(path)
    try:
        manifest = json.loads((d / MANIFEST).read_text())
    except FileNotFoundError:
        raise ManifestError(f"{d}: no {MANIFEST} next to the report") from None
    if manifest.get("command") != "loo":
        raise ManifestError(f"{d}: not a loo run")
    for name in ("metrics.json", "predictions.csv"):
        if wio.sha256_file(d / name) != manifest["artifacts"].get(name):
            raise ManifestError(f"{d / name}: checksum does not match its manifest")
    report = met.MetricsReport.from_dict(json.loads((d / "metrics.json").read_text()))
    return manifest, report, _read_predictions(d / "predictions.csv")


def cmd_compare(a: dict, out: Path) -> int:
    ma, ra, (ya, Pa) = _load_run(a["report_a"])
    mb, rb, (yb, Pb) = _load_run(a["report_b"])
    same = ("family", "outcome", "predictors", "categories")
    if ma["inputs"]["data"]["sha256"] != mb["inputs"]["data"]["sha256"]:
        raise ManifestError("reports come from different datasets (data checksums differ)")
    for k in same:
        if ma["arguments"].get(k) != mb["arguments"].get(k):
            raise ManifestError(f"reports differ in {k!r}; fold structures are not comparable")
    if not np.array_equal(ya, yb):
        raise ManifestError("per-observation truth differs between reports")

    names = tuple(a["names"]) if a["names"] else (ma["arguments"]["weighting"], mb["arguments"]["weighting"])
    if len(names) != 2:
        raise UsageError("--names takes exactly two names")
    table = met.comparison_table(ra, rb, names=names)

    labels = ya + 1 if ma["arguments"]["family"] == "binary" else ya
    mass_a = Pa[np.arange(ya.size), labels - 1]
    mass_b = Pb[np.arange(yb.size), labels - 1]
    _, rps_a = met.rps(Pa, labels)
    _, rps_b = met.rps(Pb, labels)
    rows = ["row,y_true,mass_a,mass_b,mass_diff,rps_a,rps_b,rps_diff"]
    for i in range(ya.size):
        vals = (mass_a[i], mass_b[i], mass_b[i] - mass_a[i], rps_a[i], rps_b[i], rps_b[i] - rps_a[i])
        rows.append(",".join([str(i), str(int(ya[i])), *(repr(float(v)) for v in vals)]))
    wio.write_text(out / "comparison.txt", table + "\n")
    wio.write_text(out / "differences.csv", "\n".join(rows) + "\n")
    inputs = {
        "report_a": _run_dir(a["report_a"]) / "metrics.json",
        "report_b": _run_dir(a["report_b"]) / "metrics.json",
    }
    _finish("compare", a, inputs, out, ["comparison.txt", "differences.csv"])
    print(table)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "loo": cmd_loo, "compare": cmd_compare}


def cmd_rerun(manifest_path: str, out: str | None) -> int:
    try:
        m = json.loads(Path(manifest_path).read_text())
    except FileNotFoundError:
        raise ManifestError(f"{manifest_path}: no such manifest") from None
    command = m.get("command")
    if command not in COMMANDS:
        raise ManifestError(f"{manifest_path}: unknown command {command!r}")
    for name, rec in m["inputs"].items():
        if wio.sha256_file(rec["path"]) != rec["sha256"]:
            raise ManifestError(f"input {name} ({rec['path']}) changed since the manifest was written")
    target = Path(out) if out else Path(m["output_dir"])
    code = COMMANDS[command](dict(m["arguments"]), target)
    fresh = json.loads((target / MANIFEST).read_text())
    bad = [k for k, v in m["artifacts"].items() if fresh["artifacts"].get(k) != v]
    if bad:
        raise ManifestError(f"re-run outputs differ from the manifest: {', '.join(bad)}")
    print(f"reproduced {len(m['artifacts'])} artifact(s) byte-for-byte")
    return code


# ---------------------------------------------------------------- parser


def _add_model_args(p):
    p.add_argument("--data", required=True, help="input CSV with a header row")
    p.add_argument("--outcome", required=True, help="label column")
    p.add_argument("--predictors", type=_name_list, help="comma-separated predictor columns (default: all others)")
    p.add_argument("--family", choices=("binary", "ordinal"), required=True)
    p.add_argument("--categories", type=int, help="number of ordinal categories K (default: largest label)")
    p.add_argument("--weighting", choices=WEIGHTING_MODES, default="none")
    p.add_argument("--proportions", type=_float_list, help="class proportions for --weighting proportions")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--warmup", type=int, default=1000)
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--algorithm", choices=("hmc", "rwm"), default="hmc")
    p.add_argument("--target-accept", type=float)
    p.add_argument("--prior-sd", type=float, default=1.0, help="sd of the Normal prior on coefficients")
    p.add_argument("--intercept-sd", type=float, default=2.5)
    p.add_argument("--cutpoint-sd", type=float, default=5.0)
    p.add_argument("--no-standardize", action="store_true", help="use predictors on their raw scale")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wlbayes", description="Class-weighted Bayesian logistic and ordinal regression.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write a synthetic dataset")
    p.add_argument("--family", choices=("binary", "ordinal"), default="binary")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--proportions", type=_float_list, required=True)
    p.add_argument("--beta", type=_float_list, default=[1.5, -1.5])
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit", help="sample the (weighted) posterior")
    _add_model_args(p)

    p = sub.add_parser("loo", help="leave-one-out predictions and metrics")
    _add_model_args(p)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--fixed-weights", action="store_true", help="keep full-data weights in every fold")

    p = sub.add_parser("compare", help="compare two loo runs on the same data")
    p.add_argument("report_a", help="metrics.json (or run directory) of the first run")
    p.add_argument("report_b", help="metrics.json (or run directory) of the second run")
    p.add_argument("--names", type=_name_list)
    p.add_argument("--out", required=True)

    p = sub.add_parser("rerun", help="replay a manifest and verify identical outputs")
    p.add_argument("manifest")
    p.add_argument("--out", help="output directory (default: the recorded one)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if ns.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if ns.command == "rerun":
            return cmd_rerun(ns.manifest, ns.out)
        args = {k: v for k, v in vars(ns).items() if k not in ("command", "verbose", "out")}
        if ns.command in ("fit", "loo", "compare"):
            for k in ("data", "report_a", "report_b"):
                if k in args:
                    args[k] = str(Path(args[k]).resolve())
        return COMMANDS[ns.command](args, Path(ns.out))
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"wlbayes: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SamplerError as exc:
        print(f"wlbayes: sampler failure: {exc}", file=sys.stderr)
        return EXIT_SAMPLER
    except (ValueError, OSError) as exc:
        print(f"wlbayes: error: {exc}", file=sys.stderr)
        return EXIT_DATA
