"""Command-line front end.

Commands compose through a flat directory convention: a data directory holds
numbered files per image, and every command reads the subset it needs by
prefix and writes its outputs under the same indices.

    gt_0007.npy       uint8 labels
    pred_0007.npy     probability map
    logit_0007.npy    logit map
    stack_0007.npy    prediction stack (+ stack_0007.npy.json tag sidecar)
    unc_0007.npy      uncertainty map (+ unc_0007.npy.json kind sidecar)
    decision_0007.npy accept/defer map

Exit codes: 0 success, 2 unusable input, 3 violated internal invariant,
4 infeasible fit constraint.
"""

from __future__ import annotations

import argparse
import re
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from ._kernels import BACKEND
from .aggregate import mc_aggregate, tta_aggregate
from .calibration import TemperatureModel, apply_temperature, ece, fit_temperature
from .deferral import (
    CRITERIA,
    DEFAULT_DICE_FLOOR,
    POLICIES,
    DeferralModel,
    apply_model,
    fit_threshold,
)
from .errors import InfeasibleFitError, InputError, InvariantError
from .fileio import (
    read_array_file,
    read_json,
    write_array_file,
    write_decision_pgm,
    write_json,
    write_uncertainty_pgm,
)
from .maps import ProbMap, UncertaintyMap
from .metrics import write_curve_csv
from .report import evaluate
from .synth import CALIBRATION_MODES, SynthSpec, generate

_INDEXED = re.compile(r"^(?P<prefix>[a-z]+)_(?P<index>\d{4})\.npy$")


def _indexed_files(directory: Path, prefix: str) -> dict[int, Path]:
    if not directory.is_dir():
        raise InputError(f"{directory}: not a directory")
    out = {}
    for path in directory.iterdir():
        m = _INDEXED.match(path.name)
        if m and m.group("prefix") == prefix:
            out[int(m.group("index"))] = path
    return out


def _aligned(directory: Path, prefixes: list[str], optional: set[str] = frozenset()):
    """Per-index file rows for the given prefixes, checked for alignment."""
    found = {p: _indexed_files(directory, p) for p in prefixes}
    required = [p for p in prefixes if p not in optional]
    if not any(found[p] for p in required):
        raise InputError(
            f"{directory}: no {'/'.join(required)} files found "
            f"(expected names like {required[0]}_0000.npy)"
        )
    indices = sorted(set.union(*(set(found[p]) for p in required)))
    rows = []
    for i in indices:
        row = {}
        for p in prefixes:
            if i in found[p]:
                row[p] = found[p][i]
            elif p not in optional:
                raise InputError(f"{directory}: missing {p}_{i:04d}.npy")
            else:
                row[p] = None
        rows.append((i, row))
    for p in optional:
        present = [i for i, row in rows if row.get(p) is not None]
        if present and len(present) != len(rows):
            raise InputError(f"{directory}: {p} files cover only some indices")
    return rows


def _read_unc(path: Path) -> UncertaintyMap:
    plane = read_array_file(path, kind="prob")  # same container, values in [0, 1]
    sidecar = Path(str(path) + ".json")
    if not sidecar.exists():
        raise InputError(
            f"{path}: uncertainty files need a kind sidecar "
            f'({sidecar.name}: {{"kind": "variance"}} etc.)'
        )
    meta = read_json(sidecar)
    if set(meta) - {"kind"}:
        raise InputError(f"{sidecar}: unknown sidecar field(s) {sorted(set(meta) - {'kind'})}")
    return UncertaintyMap(plane.values, kind=meta.get("kind", ""))


def _write_unc(unc: UncertaintyMap, path: Path) -> None:
    write_array_file(ProbMap(unc.values), path)
    write_json({"kind": unc.kind}, Path(str(path) + ".json"))


@contextmanager
def _phase(timings: dict, name: str):
    t0 = time.perf_counter()
    yield
    timings[name] = timings.get(name, 0.0) + (time.perf_counter() - t0)


def _write_timings(out_dir: Path, command: str, timings: dict) -> None:
    write_json(
        {"command": command, "phases": timings, "total_s": sum(timings.values())},
        out_dir / "timings.json",
    )


def _apply_threads(n: int) -> None:
    if n < 1:
        raise InputError(f"--threads must be >= 1, got {n}")
    try:  # best effort: cap BLAS-style pools when the control package exists
        import threadpoolctl

        threadpoolctl.threadpool_limits(n)
    except ImportError:
        pass


def _config_echo(args: argparse.Namespace) -> dict:
    skip = {"func"}
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in skip:
            continue
        out[key] = str(value) if isinstance(value, Path) else value
    return out


# ---------------------------------------------------------------- commands


def _cmd_synth(args) -> int:
    out_dir = Path(args.out)
    timings: dict = {}
    spec = SynthSpec(
        height=args.height,
        width=args.width,
        n_images=args.images,
        error_rate=args.error_rate,
        unc_error_corr=args.corr,
        calibration_mode=args.calibration,
        t_plant=args.t_plant,
        passes=args.passes,
        seed=args.seed,
        source_tag=args.tag,
        emit_transformed=args.transformed,
    )
    with _phase(timings, "compute_s"):
        data = generate(spec)
    with _phase(timings, "write_s"):
        entries = []
        for i, img in enumerate(data.images):
            files = {
                "gt": f"gt_{i:04d}.npy",
                "pred": f"pred_{i:04d}.npy",
                "logit": f"logit_{i:04d}.npy",
                "unc": f"unc_{i:04d}.npy",
            }
            write_array_file(img.gt, out_dir / files["gt"])
            write_array_file(img.prob, out_dir / files["pred"])
            write_array_file(img.logits, out_dir / files["logit"])
            _write_unc(img.planted_unc, out_dir / files["unc"])
            if img.stack is not None:
                files["stack"] = f"stack_{i:04d}.npy"
                write_array_file(img.stack, out_dir / files["stack"])
            entries.append({"index": i, "files": files})
        write_json(
            {
                "schema": "deferseg-synth/1",
                "spec": spec.to_json_dict(),
                "fingerprint": data.fingerprint(),
                "error_count": data.error_count,
                "pixel_count": data.pixel_count,
                "images": entries,
            },
            out_dir / "manifest.json",
        )
    _write_timings(out_dir, "synth", timings)
    print(f"wrote {len(data.images)} image(s) to {out_dir}")
    return 0


def _cmd_aggregate(args) -> int:
    out_dir = Path(args.out)
    timings: dict = {}
    with _phase(timings, "load_s"):
        rows = _aligned(Path(args.input_dir), ["stack"])
        stacks = [(i, read_array_file(row["stack"], kind="stack")) for i, row in rows]
    n = 0
    for i, stack in stacks:
        with _phase(timings, "compute_s"):
            if stack.source_tag in ("mc_dropout", "ensemble"):
                if args.uncertainty not in (None, "mi"):
                    raise InputError(
                        f"stack {i} is {stack.source_tag}: only mutual information "
                        f"applies, not --uncertainty {args.uncertainty}"
                    )
                mean, unc = mc_aggregate(stack)
            else:
                mean, var, ent = tta_aggregate(stack)
                if args.uncertainty == "mi":
                    raise InputError(
                        f"stack {i} is {stack.source_tag}: mutual information needs "
                        f"an mc_dropout or ensemble stack"
                    )
                unc = ent if args.uncertainty == "entropy" else var
        with _phase(timings, "write_s"):
            write_array_file(mean, out_dir / f"pred_{i:04d}.npy")
            _write_unc(unc, out_dir / f"unc_{i:04d}.npy")
            if args.pgm:
                write_uncertainty_pgm(unc, out_dir / f"unc_{i:04d}.pgm")
        n += 1
    _write_timings(out_dir, "aggregate", timings)
    print(f"aggregated {n} stack(s) [{BACKEND} backend] to {out_dir}")
    return 0


def _load_pred(row: dict):
    if row.get("logit") is not None:
        return read_array_file(row["logit"], kind="logits")
    return read_array_file(row["pred"], kind="prob")


def _cmd_calibrate(args) -> int:
    out_dir = Path(args.out)
    timings: dict = {}
    with _phase(timings, "load_s"):
        prefixes = ["logit", "gt"] if args.use == "logits" else ["pred", "gt"]
        rows = _aligned(Path(args.input_dir), prefixes)
        preds = [
            read_array_file(row[prefixes[0]], kind="logits" if args.use == "logits" else "prob")
            for _, row in rows
        ]
        gts = [read_array_file(row["gt"], kind="mask") for _, row in rows]
    with _phase(timings, "compute_s"):
        model = fit_temperature(preds, gts)
        calibrated = [apply_temperature(p, model.T) for p in preds]
        ece_value, table = ece(calibrated, gts, bins=args.ece_bins, acc_mode=args.acc_mode)
    with _phase(timings, "write_s"):
        write_json(model.to_json_dict(), out_dir / "temperature.json")
        if args.reliability:
            table.to_csv(out_dir / "reliability.csv")
    _write_timings(out_dir, "calibrate", timings)
    print(
        f"T={model.T:.4f} nll {model.nll_before:.6f} -> {model.nll_after:.6f} "
        f"ece(after)={ece_value:.6f}{' [flat]' if model.flat else ''}"
    )
    return 0


def _load_triples(input_dir: Path, need_unc: bool):
    prefixes = ["pred", "gt", "unc"]
    rows = _aligned(input_dir, prefixes, optional=set() if need_unc else {"unc"})
    triples = []
    for _, row in rows:
        pred = read_array_file(row["pred"], kind="prob")
        gt = read_array_file(row["gt"], kind="mask")
        unc = _read_unc(row["unc"]) if row["unc"] is not None else None
        triples.append((pred, unc, gt))
    return triples


def _cmd_fit(args) -> int:
    out_dir = Path(args.out)
    timings: dict = {}
    with _phase(timings, "load_s"):
        triples = _load_triples(Path(args.input_dir), need_unc=True)
        temp = _load_temperature(args.temperature)
    with _phase(timings, "compute_s"):
        if temp is not None:
            triples = [(apply_temperature(p, temp.T), u, g) for p, u, g in triples]
        model = fit_threshold(
            triples,
            policy=args.policy,
            criterion=args.criterion,
            dice_floor=args.dice_floor,
        )
    with _phase(timings, "write_s"):
        write_json(model.to_json_dict(), out_dir / "deferral.json")
    _write_timings(out_dir, "fit", timings)
    value = f"alpha={model.alpha}" if model.policy == "adaptive" else f"tau={model.tau}"
    print(f"fitted {model.policy}/{model.criterion}: {value}")
    return 0


def _load_temperature(path) -> TemperatureModel | None:
    if path is None:
        return None
    return TemperatureModel.from_json_dict(read_json(Path(path)))


def _load_deferral(path) -> DeferralModel | None:
    if path is None:
        return None
    return DeferralModel.from_json_dict(read_json(Path(path)))


def _cmd_defer(args) -> int:
    out_dir = Path(args.out)
    timings: dict = {}
    with _phase(timings, "load_s"):
        model = _load_deferral(args.model)
        need_pred = model.policy == "confidence_aware"
        prefixes = ["unc", "pred"] if need_pred else ["unc"]
        rows = _aligned(Path(args.input_dir), prefixes)
    n = 0
    deferred = 0
    total = 0
    for i, row in rows:
        with _phase(timings, "load_s"):
            unc = _read_unc(row["unc"])
            pred = read_array_file(row["pred"], kind="prob") if need_pred else None
        with _phase(timings, "compute_s"):
            decision = apply_model(model, unc, pred)
        with _phase(timings, "write_s"):
            write_array_file(decision, out_dir / f"decision_{i:04d}.npy")
            if args.pgm:
                write_decision_pgm(decision, out_dir / f"decision_{i:04d}.pgm")
        deferred += int(np.count_nonzero(decision.values == 0))
        total += decision.values.size
        n += 1
    _write_timings(out_dir, "defer", timings)
    print(f"decided {n} image(s), deferred {deferred}/{total} pixels")
    return 0


def _cmd_evaluate(args) -> int:
    out_dir = Path(args.out)
    timings: dict = {}
    with _phase(timings, "load_s"):
        model = _load_deferral(args.model)
        temp = _load_temperature(args.temperature)
        need_unc = model is not None or args.curve != "none"
        triples = _load_triples(Path(args.input_dir), need_unc=model is not None)
        if not all(u is not None for _, u, _ in triples):
            need_unc = False
    targets = [{"metric": v} for v in args.target_metric]
    targets += [{"coverage": v} for v in args.target_coverage]
    with _phase(timings, "compute_s"):
        result = evaluate(
            triples,
            model=model,
            temperature=temp,
            curve_metric=None if args.curve == "none" or not need_unc else args.curve,
            targets=targets,
            ece_bins=args.ece_bins,
            ece_acc_mode=args.acc_mode,
            auc_mode=args.auc_mode,
            bootstrap_seed=args.seed,
            bootstrap_resamples=args.resamples,
            threads=args.threads,
            config=_config_echo(args),
        )
    report = result.report
    with _phase(timings, "write_s"):
        if args.pgm and model is not None:
            for i, (pred, unc, _) in enumerate(triples):
                if temp is not None:
                    pred = apply_temperature(pred, temp.T)
                decision = apply_model(model, unc, pred)
                write_decision_pgm(decision, out_dir / f"decision_{i:04d}.pgm")
        if args.format == "csv":
            if result.curve is not None:
                write_curve_csv(result.curve, out_dir / "curve.csv")
                report["curve"]["points_csv"] = "curve.csv"
            result.reliability.to_csv(out_dir / "reliability.csv")
            report["calibration"]["reliability_csv"] = "reliability.csv"
        else:
            if result.curve is not None:
                report["curve"]["points"] = [
                    {"coverage": q, "value": v, "defined": ok}
                    for q, v, ok in result.curve.points
                ]
            report["calibration"]["reliability"] = [
                {"bin_lo": lo, "bin_hi": hi, "frac": fr, "conf": c, "acc": a, "gap": g}
                for lo, hi, fr, c, a, g in result.reliability.rows
            ]
        write_json(report, out_dir / "report.json")
    _write_timings(out_dir, "evaluate", timings)
    pooled = report["pooled"]
    line = f"dice={pooled['dice']:.4f} iou={pooled['iou']:.4f} ece={pooled['ece']:.4f}"
    if report["deferral"] is not None:
        line += (
            f" coverage={report['deferral']['coverage']:.4f}"
            f" err={report['deferral']['err']}"
        )
    print(line)
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deferseg",
        description="uncertainty-aware deferral for dense binary prediction",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--seed", type=int, default=0, help="seed for anything stochastic")
    parser.add_argument("--threads", type=int, default=1, help="compute thread cap")
    parser.add_argument(
        "--format", choices=("json", "csv"), default="json",
        help="tabular outputs inline in the report (json) or as CSV files (csv)",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("synth", help="generate a synthetic prediction set")
    p.add_argument("--out", required=True)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--images", type=int, default=4)
    p.add_argument("--error-rate", type=float, default=0.1)
    p.add_argument("--corr", type=float, default=0.5,
                   help="uncertainty/error rank correlation in [0, 1]")
    p.add_argument("--calibration", choices=CALIBRATION_MODES, default="calibrated")
    p.add_argument("--t-plant", type=float, default=2.0)
    p.add_argument("--passes", type=int, default=4)
    p.add_argument("--tag", choices=("mc_dropout", "ensemble", "other"),
                   default="mc_dropout")
    p.add_argument("--transformed", action="store_true",
                   help="emit a geometric-augmentation stack (tta)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("aggregate", help="collapse stacks to mean + uncertainty")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--uncertainty", choices=("mi", "variance", "entropy"), default=None,
                   help="uncertainty kind (default: mi for mc/ensemble, variance otherwise)")
    p.add_argument("--pgm", action="store_true", help="also write grayscale previews")
    p.set_defaults(func=_cmd_aggregate)

    p = sub.add_parser("calibrate", help="fit a temperature on validation data")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--use", choices=("probs", "logits"), default="probs")
    p.add_argument("--ece-bins", type=int, default=15)
    p.add_argument("--acc-mode", choices=("positive_frequency", "correctness"),
                   default="positive_frequency")
    p.add_argument("--reliability", action="store_true", help="write reliability.csv")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("fit", help="fit a deferral threshold on validation data")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--policy", choices=POLICIES, required=True)
    p.add_argument("--criterion", choices=CRITERIA, default="max_f1")
    p.add_argument("--dice-floor", type=float, default=DEFAULT_DICE_FLOOR)
    p.add_argument("--temperature", default=None, help="temperature.json to apply first")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("defer", help="apply a fitted model, write decision maps")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", required=True, help="deferral.json from fit")
    p.add_argument("--pgm", action="store_true", help="also write decision previews")
    p.set_defaults(func=_cmd_defer)

    p = sub.add_parser("evaluate", help="full metric report for a prediction set")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", default=None, help="deferral.json to evaluate")
    p.add_argument("--temperature", default=None, help="temperature.json to apply first")
    p.add_argument("--curve", choices=("dice", "error_rate", "auc", "none"), default="dice")
    p.add_argument("--target-metric", type=float, action="append", default=[])
    p.add_argument("--target-coverage", type=float, action="append", default=[])
    p.add_argument("--ece-bins", type=int, default=15)
    p.add_argument("--acc-mode", choices=("positive_frequency", "correctness"),
                   default="positive_frequency")
    p.add_argument("--auc-mode", choices=("exact", "binned"), default="exact",
                   help="binned trades a documented AUC error bound for speed")
    p.add_argument("--resamples", type=int, default=1000)
    p.add_argument("--pgm", action="store_true",
                   help="also write decision previews (needs --model)")
    p.set_defaults(func=_cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_threads(args.threads)
        return args.func(args)
    except InfeasibleFitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InvariantError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
