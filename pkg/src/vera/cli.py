"""Command-line entry point: ``vera <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 failed check or
divergence.  Errors go to stderr as a single ``error: <kind>: <reason>`` line and
every run echoes its resolved configuration to stderr as ``config: <json>``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import re
import sys
import time

from . import accounting, checkpoints
from . import matcore as mc
from .adapters import AdapterConfig, Method
from .harness import model as toy
from .harness.gradcheck import gradcheck
from .harness.reports import magnitude_csv, magnitude_report, model_kwargs_for, rank_sweep
from .harness.tasks import TaskSpec
from .harness.train import DivergenceError, TrainConfig, train
from .prng import InitScheme

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_CHECK = 0, 1, 2, 3
FORMATS = ("text", "json", "csv")
SWEEP_DEFAULT_RANKS = {Method.VERA: (1, 4, 16, 64), Method.LORA: (1, 2, 4, 8)}


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --- argument helpers ---------------------------------------------------------------------

def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError(f"ranks must be positive integers, got {text!r}")
    return values


def _methods(text: str) -> list[Method]:
    try:
        return [Method.parse(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _method(text: str) -> Method:
    return _methods(text)[0]


def _scheme(text: str) -> InitScheme:
    try:
        return InitScheme.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _task(text: str) -> TaskSpec:
    try:
        return TaskSpec.from_name(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _sweep_ranks(text: str) -> tuple[Method | None, list[int]]:
    """``1,2,4`` (every method) or ``vera=1,4,16`` (one method)."""
    if "=" in text:
        name, _, values = text.partition("=")
        return _method(name), _int_list(values)
    return None, _int_list(text)


def _add_format(p: argparse.ArgumentParser, default: str = "text") -> None:
    p.add_argument("--format", choices=FORMATS, default=default)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vera", description="Shared-random-matrix adapters: budgets, training and checkpoints.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("plan", help="parameter and storage budget for a model shape")
    p.add_argument("--name", default="custom")
    p.add_argument("--blocks", type=int, default=12)
    p.add_argument("--dmodel", type=int, default=768)
    p.add_argument("--adapted-per-block", type=int, default=2)
    p.add_argument("--ranks", type=_int_list, default=[1, 16, 256])
    p.add_argument("--method", type=_methods, default=[Method.VERA, Method.LORA])
    p.add_argument("--include-shared", action="store_true", help="also count the frozen shared matrices")
    _add_format(p)

    p = sub.add_parser("table1", help="budget table for the three reference presets")
    _add_format(p)

    p = sub.add_parser("train", help="train adapters on a toy task")
    p.add_argument("--task", type=_task, default=_task("majority"))
    p.add_argument("--method", type=_method, default=Method.VERA)
    p.add_argument("--rank", type=int, default=8)
    p.add_argument("--r-max", type=int, default=None)
    p.add_argument("--d-init", type=float, default=0.1)
    p.add_argument("--init-scheme", type=_scheme, default=InitScheme.kaiming_uniform())
    p.add_argument("--lora-alpha", type=float, default=None)
    p.add_argument("--seed", type=int, default=0, help="seed for base weights and shared matrices")
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr-adapter", type=float, default=None)
    p.add_argument("--lr-head", type=float, default=None)
    p.add_argument("--dmodel", type=int, default=32)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--blocks", type=int, default=1)
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--base-out", help="write the frozen base tensors as a VKWT file")
    p.add_argument("--curve-out", help="write the loss/accuracy curve as CSV")
    _add_format(p)

    p = sub.add_parser("sweep", help="accuracy against rank, median over seeds")
    p.add_argument("--task", type=_task, default=_task("majority"))
    p.add_argument("--methods", type=_methods, default=[Method.VERA, Method.LORA])
    p.add_argument("--ranks", type=_sweep_ranks, action="append",
                   help="'1,2,4' for every method or 'vera=1,4,16' for one; repeatable")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds, 0..N-1")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr-adapter", type=float, default=None)
    p.add_argument("--lr-head", type=float, default=None)
    p.add_argument("--d-init", type=float, default=0.1)
    p.add_argument("--dmodel", type=int, default=32)
    p.add_argument("--out", help="CSV path (stdout when omitted)")
    _add_format(p, "csv")

    p = sub.add_parser("gradcheck", help="finite-difference check of every analytic gradient")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--float64", action="store_true",
                   help="accepted for clarity; the check always runs in float64")
    p.add_argument("--seeds", type=int, default=1)
    _add_format(p)

    p = sub.add_parser("merge", help="fold a checkpoint into base weights")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--out", required=True)
    _add_format(p)

    p = sub.add_parser("inspect", help="describe a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--json", action="store_true", help="same as --format json")
    _add_format(p)

    p = sub.add_parser("magnitude", help="per-layer norms of the trained scaling vectors")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", help="CSV path (stdout when omitted)")
    _add_format(p, "csv")
    return parser


# --- output -------------------------------------------------------------------------------

def _csv(records: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    w.writerows(records)
    return buf.getvalue().rstrip("\n")


def render(records: list[dict], columns: list[str], fmt: str) -> str:
    if fmt == "json":
        return accounting.render_json([{c: r[c] for c in columns} for r in records])
    if fmt == "csv":
        return _csv(records, columns)
    return accounting.render_text(records, columns)


def _emit(text: str, out: str | None = None) -> None:
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        print(text)


def _echo_config(command: str, resolved: dict) -> None:
    print("config: " + json.dumps({"command": command, **resolved}, sort_keys=True, default=str),
          file=sys.stderr)


def _summary(values: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(values, indent=2)
    if fmt == "csv":
        return _csv([values], list(values))
    width = max(map(len, values))
    return "\n".join(f"{k.ljust(width)}  {v}" for k, v in values.items())


# --- subcommands --------------------------------------------------------------------------

def cmd_plan(a) -> int:
    shape = accounting.ModelShape(a.name, a.blocks, a.dmodel, a.adapted_per_block)
    _echo_config("plan", {"model": a.name, "blocks": a.blocks, "dmodel": a.dmodel,
                          "adapted_per_block": a.adapted_per_block, "ranks": a.ranks,
                          "methods": [m.label for m in a.method], "include_shared": a.include_shared})
    columns = list(accounting.PLAN_COLUMNS)
    if not a.include_shared:
        columns = [c for c in columns if "with_shared" not in c]
    records = [row.to_dict() for row in accounting.plan(shape, a.ranks, a.method)]
    _emit(render(records, columns, a.format))
    return EXIT_OK


def cmd_table1(a) -> int:
    _echo_config("table1", {"presets": ["base", "large", "gpt3"], "ranks": list(accounting.TABLE1_RANKS)})
    records = [row.to_dict() for row in accounting.table1()]
    _emit(render(records, accounting.TABLE1_COLUMNS, a.format))
    return EXIT_OK


def _train_config(a, task: TaskSpec, seed: int) -> TrainConfig:
    overrides = {"batch": a.batch, "seed": seed}
    for key in ("steps", "lr_adapter", "lr_head"):
        if getattr(a, key) is not None:
            overrides[key] = getattr(a, key)
    return TrainConfig.for_task(task, **overrides)


def cmd_train(a) -> int:
    config = AdapterConfig(method=a.method, rank=a.rank, init_scheme=a.init_scheme, d_init=a.d_init,
                           lora_alpha=a.lora_alpha, master_seed=a.seed, r_max=a.r_max)
    tcfg = _train_config(a, a.task, a.data_seed)
    model_kw = model_kwargs_for(a.task, d_model=a.dmodel, heads=a.heads, blocks=a.blocks)
    _echo_config("train", {"task": a.task.kind.value, "adapter": config.to_dict(), "train": tcfg.to_dict(),
                           "model": model_kw, "seed": a.seed, "data_seed": a.data_seed})
    model = toy.build_model(config, base_seed=a.seed, **model_kw)
    if a.base_out:
        mc.write_tensors(a.base_out, {**model.frozen_tensors(), "head": model.head})
    start = time.perf_counter()
    try:
        report = train(model, a.task, tcfg)
    except DivergenceError as exc:
        if a.curve_out:
            _emit(exc.report.curve_csv(), a.curve_out)
        raise CheckFailed(f"divergence: {exc}") from None
    elapsed = time.perf_counter() - start
    if a.curve_out:
        _emit(report.curve_csv(), a.curve_out)
    values = {"method": config.method.label, "rank": config.rank,
              "trainable_params": model.adapter_trainable_count(), "steps": tcfg.steps,
              "final_loss": report.losses[-1] if report.losses else None,
              "initial_accuracy": report.initial_accuracy, "final_accuracy": report.final_accuracy,
              "seconds": round(elapsed, 3)}
    if a.out:
        values["checkpoint"] = a.out
        values["checkpoint_bytes"] = checkpoints.save(model.adapted_layers(), config, a.out)
    _emit(_summary(values, a.format))
    return EXIT_OK


def _resolve_sweep_ranks(methods: list[Method], specs) -> dict[Method, list[int]]:
    ranks = {m: list(SWEEP_DEFAULT_RANKS.get(m, (1, 2, 4, 8))) for m in methods}
    for method, values in specs or ():
        if method is None:
            ranks = {m: list(values) for m in methods}
        elif method not in ranks:
            raise UsageError(f"ranks given for {method.label}, which is not in --methods")
        else:
            ranks[method] = list(values)
    return ranks


def cmd_sweep(a) -> int:
    if a.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    ranks = _resolve_sweep_ranks(a.methods, a.ranks)
    tcfg = _train_config(a, a.task, 0)
    _echo_config("sweep", {"task": a.task.kind.value, "ranks": {m.label: r for m, r in ranks.items()},
                           "seeds": list(range(a.seeds)), "train": tcfg.to_dict(), "d_init": a.d_init,
                           "dmodel": a.dmodel})
    try:
        result = rank_sweep(a.task, ranks, range(a.seeds), tcfg, AdapterConfig(d_init=a.d_init),
                            d_model=a.dmodel)
    except DivergenceError as exc:
        raise CheckFailed(f"divergence: {exc}") from None
    if a.format == "csv":
        _emit(result.to_csv(), a.out)
    else:
        records = [{"method": r.method, "rank": r.rank, "params": r.params,
                    "median_accuracy": r.median_accuracy} for r in result.table]
        _emit(render(records, ["method", "rank", "params", "median_accuracy"], a.format), a.out)
    return EXIT_OK


def cmd_gradcheck(a) -> int:
    _echo_config("gradcheck", {"tolerance": a.tolerance, "dtype": "float64", "seeds": list(range(a.seeds))})
    report = gradcheck(seeds=tuple(range(a.seeds)), tolerance=a.tolerance)
    records = [{"case": c, "method": m, "group": g, "max_rel_err": err,
                "passed": err < a.tolerance}
               for (c, m, g), err in report.worst_by_group().items()]
    _emit(render(records, ["case", "method", "group", "max_rel_err", "passed"], a.format))
    if not report.passed:
        worst = max(report.failures(), key=lambda e: e.max_rel_err)
        raise CheckFailed(f"{len(report.failures())} of {len(report.entries)} checks exceed "
                          f"{a.tolerance:g}; worst {worst.max_rel_err:.3g} at {worst.case}/{worst.method}/"
                          f"{worst.m}x{worst.n}/r{worst.r}/{worst.group}")
    return EXIT_OK


def cmd_merge(a) -> int:
    _echo_config("merge", {"ckpt": a.ckpt, "base": a.base, "out": a.out})
    count = checkpoints.export_merged(a.ckpt, a.base, a.out)
    _emit(_summary({"out": a.out, "tensors": count}, a.format))
    return EXIT_OK


def cmd_inspect(a) -> int:
    fmt = "json" if a.json else a.format
    _echo_config("inspect", {"ckpt": a.ckpt, "format": fmt})
    info = checkpoints.inspect(a.ckpt)
    if fmt == "json":
        _emit(json.dumps(info, indent=2))
        return EXIT_OK
    header = {k: v for k, v in info.items() if k not in ("config", "layers")}
    header.update({f"config.{k}": v for k, v in info["config"].items()})
    columns = list(dict.fromkeys(k for layer in info["layers"] for k in layer))
    for layer in info["layers"]:
        for c in columns:
            layer.setdefault(c, "")
    if fmt == "csv":
        _emit(_csv(info["layers"], columns))
    else:
        _emit(_summary(header, "text") + "\n\n" + accounting.render_text(info["layers"], columns))
    return EXIT_OK


def cmd_magnitude(a) -> int:
    _echo_config("magnitude", {"ckpt": a.ckpt, "out": a.out, "format": a.format})
    rows = magnitude_report(a.ckpt)
    if a.format == "csv":
        _emit(magnitude_csv(rows), a.out)
    else:
        records = [{"layer": r.layer, "role": r.role, "d_change_norm": r.d_change_norm,
                    "b_norm": r.b_norm} for r in rows]
        _emit(render(records, ["layer", "role", "d_change_norm", "b_norm"], a.format), a.out)
    return EXIT_OK


COMMANDS = {"plan": cmd_plan, "table1": cmd_table1, "train": cmd_train, "sweep": cmd_sweep,
            "gradcheck": cmd_gradcheck, "merge": cmd_merge, "inspect": cmd_inspect,
            "magnitude": cmd_magnitude}


def _kind(exc: BaseException) -> str:
    return re.sub(r"(?<!^)(?=[A-Z])", "_", type(exc).__name__).lower()


def _fail(kind: str, reason, code: int) -> int:
    reason = " ".join(str(reason).split())
    print(f"error: {kind}: {reason}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except CheckFailed as exc:
        return _fail("check_failed", exc, EXIT_CHECK)
    except KeyError as exc:  # missing tensor
        return _fail(_kind(exc), exc.args[0] if exc.args else exc, EXIT_INVALID)
    except (ValueError, OSError) as exc:
        return _fail(_kind(exc), exc, EXIT_INVALID)


if __name__ == "__main__":
    sys.exit(main())
