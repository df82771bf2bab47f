"""Command line: ``ipmplan fit | run | bench | trace``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or model
error, 3 safety violation under ``--strict``.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

from . import __version__
from ._accel import USE_NUMBA
from .config import DEFAULTS, apply_overrides, describe
from .ipm import InteractionPair, ModelError, ModelFileError, TrainingError, load_model, save_model
from .planner import VARIANTS

OUT_ENV = "IPMPLAN_OUT"
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_UNSAFE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _out_dir(args) -> Path:
    raw = args.out or os.environ.get(OUT_ENV) or "."
    path = Path(raw)
    if not path.is_dir():
        raise UsageError(f"output directory does not exist: {path}")
    return path


def _header(args, params, extra=()) -> str:
    lines = [f"# ipmplan {__version__} {args.command}", f"# numba: {'on' if USE_NUMBA else 'off'}"]
    for k in sorted(vars(args)):
        if k in ("func", "command"):
            continue
        lines.append(f"# arg {k}={getattr(args, k)!r}")
    lines += [f"# {x}" for x in extra]
    if params is not None:
        lines += [f"# param {x}" for x in describe(params)]
    return "\n".join(lines)


def _params(args):
    try:
        return apply_overrides(DEFAULTS, args.set)
    except (KeyError, ValueError) as exc:
        raise UsageError(str(exc.args[0]) if exc.args else str(exc)) from None


def _model(args):
    if args.model is not None and not Path(args.model).exists():
        raise UsageError(f"model file not found: {args.model}")
    return load_model(args.model)


def _scenarios(names):
    from .sim.scenario import load_scenario
    return [load_scenario(n) for n in names]


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

PAIR_FIELDS = ("delta_v", "delta_theta", "delta_t", "ego_v0", "ego_d", "agent_v0", "agent_d")


def _read_pairs(path: Path) -> list[InteractionPair]:
    if not path.exists():
        raise UsageError(f"pairs file not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        return [InteractionPair(**{k: float(r[k]) for k in PAIR_FIELDS}) for r in rows]
    except (KeyError, ValueError) as exc:
        raise UsageError(f"{path}: bad pairs file ({exc})") from None


def cmd_fit(args) -> int:
    from .ipm import accuracy, fit_protection_model, pair_features, train_classifier
    from .sim.datagen import PairRuleConfig, fit_synthetic

    out = Path(args.out_model)
    if not out.parent.is_dir():
        raise UsageError(f"output directory does not exist: {out.parent}")
    print(_header(args, None))
    if args.pairs:
        pairs = _read_pairs(Path(args.pairs))
        n_val = max(len(pairs) // 3, 1)
        train, val = pairs[n_val:], pairs[:n_val]
        model = fit_protection_model(train, sigma_level=args.sigma)
        clf = train_classifier(train, model, epochs=args.epochs, seed=args.seed)
        acc_t = accuracy(clf, *pair_features(train, model))
        acc_v = accuracy(clf, *pair_features(val, model))
        print(f"pairs: train={len(train)} validation={len(val)} (from {args.pairs})")
        print(f"sigma_level: {args.sigma}")
        for name in ("c1", "c2", "c3", "c4"):
            info = model.fit_info[name]
            print(f"{name}: bins={len(info['x'])} rms_residual={info['rms_residual']:.6f}")
        print(f"train_accuracy: {acc_t:.4f}")
        print(f"validation_accuracy: {acc_v:.4f}")
    else:
        cfg = PairRuleConfig(label_noise=args.noise)
        rep = fit_synthetic(cfg, args.n_train, args.n_val, args.seed, args.sigma, args.epochs)
        model, clf = rep.protection, rep.classifier
        print("\n".join(rep.lines()))
    save_model(out, model, clf)
    print(f"model: {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# run / trace
# ---------------------------------------------------------------------------

def _stem(sc, variant, seed) -> str:
    return f"{sc.name}_{variant}_s{seed}"


def _node_dump(result) -> list[str]:
    lines = []
    for idx, t, traj, res, ctx in result.cycles:
        lines.append(f"cycle {idx} t={t:.2f} ego_s={ctx.ego_s:.4f} ego_v={ctx.ego_v:.4f} "
                     f"selected={traj.provenance.get('selected', '-')} gated={traj.provenance.get('gated', '-')}")
        if res is not None:
            lines.append("layer s v t J parent_id")
            lines.extend(res.trace_lines())
    return lines


def cmd_run(args) -> int:
    from .sim.world import run_scenario

    params = _params(args)
    out = _out_dir(args)
    (sc,) = _scenarios([args.scenario])
    prot, clf = _model(args)
    seed = sc.seed if args.seed is None else args.seed
    print(_header(args, params, [f"scenario {sc.source}", f"seed {seed}"]))
    res = run_scenario(sc, prot, clf, params, args.variant, seed, keep_cycles=args.trace)
    m = res.metrics
    stem = _stem(sc, args.variant, seed)
    (out / f"{stem}_trace.csv").write_text(res.trace_csv())
    line = (f"scenario={sc.name} variant={args.variant} seed={seed} completion={m.completion:.3f} "
            f"collision_count={m.collision_count} avg_speed={m.avg_speed:.3f} reached_goal={int(m.reached_goal)}")
    (out / f"{stem}_metrics.csv").write_text(
        "scenario,variant,seed,completion,collision_count,avg_speed,reached_goal\n"
        f"{sc.name},{args.variant},{seed},{m.completion:.6f},{m.collision_count},{m.avg_speed:.6f},"
        f"{int(m.reached_goal)}\n")
    if args.trace:
        (out / f"{stem}_nodes.txt").write_text("\n".join(_node_dump(res)) + "\n")
    print(line)
    if args.strict and m.collision_count > 0:
        print("strict: collision recorded", file=sys.stderr)
        return EXIT_UNSAFE
    return EXIT_OK


def cmd_trace(args) -> int:
    from .sim.world import run_scenario

    params = _params(args)
    (sc,) = _scenarios([args.scenario])
    prot, clf = _model(args)
    seed = sc.seed if args.seed is None else args.seed
    res = run_scenario(sc, prot, clf, params, args.variant, seed, keep_cycles=True)
    if args.cycle is not None:
        if not 0 <= args.cycle < len(res.cycles):
            raise UsageError(f"cycle {args.cycle} out of range (0..{len(res.cycles) - 1})")
        res.cycles = [res.cycles[args.cycle]]
    text = _header(args, params, [f"scenario {sc.source}", f"seed {seed}"]) + "\n" + "\n".join(_node_dump(res)) + "\n"
    if args.out:
        out = _out_dir(args)
        path = out / f"{_stem(sc, args.variant, seed)}_nodes.txt"
        path.write_text(text)
        print(f"trace: {path}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def cmd_bench(args) -> int:
    from .sim.scenario import SAFETY_SUITE
    from .sim.suite import records_csv, run_suite, table_csv, table_text, timing_text

    params = _params(args)
    out = _out_dir(args)
    names = args.scenario or list(SAFETY_SUITE)
    scenarios = _scenarios(names)
    variants = args.variant or list(VARIANTS)
    seeds = args.seed if args.seed else list(range(args.seeds))
    prot, clf = _model(args)
    header = _header(args, params, [f"scenarios {' '.join(s.name for s in scenarios)}",
                                    f"variants {' '.join(variants)}", f"seeds {' '.join(map(str, seeds))}"])
    print(header)
    rows, records = run_suite(scenarios, variants, seeds, prot, clf, params, workers=args.workers)
    (out / "bench_metrics.csv").write_text(table_csv(rows))
    (out / "bench_runs.csv").write_text(records_csv(records))
    text = table_text(rows)
    (out / "bench_table.txt").write_text(text)
    times = [t for r in records for t in r.planning_times]
    timing = timing_text(times)
    (out / "bench_timing.txt").write_text(timing)
    print(text, end="")
    print("planning-cycle time")
    print(timing, end="")
    unsafe = sum(r.collision_count for r in records)
    if args.strict and unsafe > 0:
        print(f"strict: {unsafe} collisions recorded", file=sys.stderr)
        return EXIT_UNSAFE
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _common(p, model=True):
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a planner parameter (repeatable)")
    if model:
        p.add_argument("--model", default=None, help="model file (default: bundled model)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="ipmplan", description="Interaction-aware speed planning toolkit.")
    ap.add_argument("--version", action="version", version=f"ipmplan {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit protection curves and train the priority classifier")
    p.add_argument("--out", dest="out_model", required=True, help="model file to write")
    p.add_argument("--pairs", default=None, help="CSV of interaction pairs (default: synthetic)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=5000)
    p.add_argument("--n-val", type=int, default=10000)
    p.add_argument("--sigma", type=float, default=3.0, help="envelope width in standard deviations")
    p.add_argument("--epochs", type=int, default=3000)
    p.add_argument("--noise", type=float, default=0.0, help="label noise of the synthetic rule (s)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("run", help="run one closed-loop scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--variant", choices=VARIANTS, default=VARIANTS[0])
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help=f"output directory (or ${OUT_ENV})")
    p.add_argument("--strict", action="store_true", help="exit 3 on any collision")
    p.add_argument("--trace", action="store_true", help="also dump the s-t nodes of every cycle")
    _common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="run scenarios x variants x seeds and tabulate")
    p.add_argument("--scenario", action="append", default=[], help="scenario file or fixture name (repeatable)")
    p.add_argument("--variant", action="append", choices=VARIANTS, default=[])
    p.add_argument("--seed", type=int, action="append", default=[], help="seed (repeatable)")
    p.add_argument("--seeds", type=int, default=5, help="use seeds 0..N-1 when --seed is not given")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None, help=f"output directory (or ${OUT_ENV})")
    p.add_argument("--strict", action="store_true", help="exit 3 on any collision")
    _common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("trace", help="dump planner s-t nodes per cycle")
    p.add_argument("--scenario", required=True)
    p.add_argument("--variant", choices=VARIANTS, default=VARIANTS[0])
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--cycle", type=int, default=None, help="only this planning cycle")
    p.add_argument("--out", default=None, help="write to a file in this directory instead of stdout")
    _common(p)
    p.set_defaults(func=cmd_trace)
    return ap


def main(argv=None) -> int:
    from .sim.scenario import ScenarioError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "seeds", 1) < 1 or getattr(args, "workers", 1) < 1:
            raise UsageError("--seeds and --workers must be positive")
        return args.func(args)
    except UsageError as exc:
        print(f"ipmplan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioError as exc:
        print(f"ipmplan: scenario error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelFileError, ModelError, TrainingError, RuntimeError, ValueError) as exc:
        print(f"ipmplan: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
