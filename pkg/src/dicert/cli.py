"""Command-line entry point.

Subcommands: run, plan, gap, attack, sweep, verify-isometry.  Configs are
UTF-8 JSON with unknown keys rejected; reports are JSON, tabular outputs are
CSV; every command is bit-reproducible under a fixed --seed.  Exit codes:
0 success / CERTIFIED, 2 protocol FAILED, 1 error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from dicert import qcore, stats
from dicert.analysis import (
    bell_extraction_report,
    completeness_sweep,
    extraction_loglog_slope,
    gap_study,
    gap_study_summary,
    gap_study_to_csv,
    soundness_sweep,
    transpose_attack_experiment,
)
from dicert.network import (
    ConfigError,
    NetworkModel,
    model_from_json,
    _reject_unknown,
    _require,
)
from dicert.observables import (
    ExplicitDistribution,
    ObservableSpec,
    WeightingFunction,
    braiding_pair_spec,
    random_basis_overlap_spec,
    shadow_overlap_spec,
)
from dicert.protocol import (
    ProtocolConfig,
    export_counters_csv,
    run_protocol,
    run_state_selftest,
)


def _json_dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1)


def _pure_target_vector(model: NetworkModel) -> np.ndarray:
    ensemble = model.target.eigen_ensemble()
    if len(ensemble) != 1:
        raise ConfigError("key 'observable' of kind 'state_fidelity' needs a pure state")
    return ensemble[0][1]


def observable_spec_from_json(cfg, model: NetworkModel, variant: str):
    """Returns (spec, selftest target vector or None)."""
    if not isinstance(cfg, dict):
        raise ConfigError("'observable' must be an object")
    kind = _require(cfg, "kind", "observable")
    if kind == "state_fidelity":
        _reject_unknown(cfg, {"kind", "psi"}, "observable")
        if "psi" in cfg:
            from dicert.network import target_from_json

            psi = target_from_json(cfg["psi"], model.n).eigen_ensemble()
            if len(psi) != 1:
                raise ConfigError("key 'psi' must describe a pure state")
            vec = psi[0][1]
        else:
            vec = _pure_target_vector(model)
        if variant == "local":
            return random_basis_overlap_spec(vec), vec
        return shadow_overlap_spec(vec), vec
    if kind == "braiding_pair":
        _reject_unknown(cfg, {"kind"}, "observable")
        if model.n != 2:
            raise ConfigError("braiding_pair observable needs exactly two parties")
        return braiding_pair_spec(), None
    if kind == "explicit":
        _reject_unknown(cfg, {"kind", "strings", "probs", "weights", "bound"}, "observable")
        strings = [tuple(s) for s in _require(cfg, "strings", "observable")]
        probs = np.asarray(_require(cfg, "probs", "observable"), dtype=float)
        weights = {
            tuple(s): np.asarray(w, dtype=float)
            for s, w in zip(strings, _require(cfg, "weights", "observable"))
        }
        bound = float(_require(cfg, "bound", "observable"))

        def evaluator(bits, labels):
            idx = 0
            for b in bits:
                idx = (idx << 1) | b
            return float(weights[tuple(labels)][idx])

        dist = ExplicitDistribution(tuple(strings), probs)
        return ObservableSpec(len(strings[0]), dist, WeightingFunction(evaluator, bound)), None
    raise ConfigError(f"unknown observable kind '{kind}'")


def _load_run_config(path: str):
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError("run configuration must be an object")
    _reject_unknown(
        cfg, {"n", "target", "bell_noise", "strategies", "protocol", "seed"}, "run config"
    )
    model_cfg = {k: v for k, v in cfg.items() if k in ("n", "target", "bell_noise", "strategies")}
    if "n" not in model_cfg:
        raise ConfigError("missing required key 'n' in run config")
    model = model_from_json(model_cfg)
    proto = _require(cfg, "protocol", "run config")
    _reject_unknown(
        proto,
        {"variant", "epsilon", "delta", "c", "N", "observable", "selftest", "eps_prime"},
        "protocol",
    )
    variant = _require(proto, "variant", "protocol")
    if variant not in ("local", "shared"):
        raise ConfigError("key 'variant' must be 'local' or 'shared'")
    epsilon = float(_require(proto, "epsilon", "protocol"))
    delta = float(_require(proto, "delta", "protocol"))
    c = float(proto.get("c", 1.0))
    spec, selftest_vec = observable_spec_from_json(
        proto.get("observable", {"kind": "state_fidelity"}), model, variant
    )
    n_rounds = proto.get("N")
    if n_rounds is None:
        n_rounds = stats.plan_N(
            variant,
            stats.PlanInputs(W=spec.weight.bound, n=model.n, epsilon=epsilon, delta=delta, c=c),
        )
    selftest = bool(proto.get("selftest", False))
    if selftest and selftest_vec is None:
        raise ConfigError("key 'selftest' needs a state_fidelity observable")
    return model, variant, epsilon, delta, c, int(n_rounds), spec, selftest, selftest_vec, cfg.get("seed")


def cmd_run(args) -> int:
    try:
        (
            model,
            variant,
            epsilon,
            delta,
            c,
            n_rounds,
            spec,
            selftest,
            selftest_vec,
            cfg_seed,
        ) = _load_run_config(args.config)
    except (ConfigError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    seed = args.seed if args.seed is not None else (cfg_seed if cfg_seed is not None else 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if selftest:
            result = run_state_selftest(
                selftest_vec, variant, epsilon, delta, model, seed, c=c, N=n_rounds
            )
            report = result.protocol_report
            payload = result.to_json_dict()
            verdict = result.verdict
        else:
            config = ProtocolConfig(variant, n_rounds, epsilon, delta, spec, c=c)
            report = run_protocol(model, config, seed)
            payload = report.to_json_dict()
            verdict = report.verdict
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    (out / "report.json").write_text(_json_dump(payload) + "\n", encoding="utf-8")
    export_counters_csv(report.counters, out / "counters.csv")
    print(_json_dump({"verdict": verdict, "out": str(out)}))
    return 0 if verdict == "CERTIFIED" else 2


def cmd_plan(args) -> int:
    try:
        inputs = stats.PlanInputs(
            W=args.W, n=args.n, epsilon=args.eps, delta=args.delta, c=args.c
        )
        n_rounds = stats.plan_N(args.variant, inputs)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(
        _json_dump(
            {
                "variant": args.variant,
                "inputs": {
                    "W": args.W,
                    "n": args.n,
                    "eps": args.eps,
                    "delta": args.delta,
                    "c": args.c,
                },
                "N": n_rounds,
            }
        )
    )
    return 0


def _parse_range(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in text.split(",")]


def cmd_gap(args) -> int:
    rng = np.random.default_rng(args.seed)
    rows = gap_study(
        _parse_range(args.n), args.trials, rng, exact_cap=args.exact_cap, samples=args.samples
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "gap.csv"
    gap_study_to_csv(rows, path, seed=args.seed)
    print(_json_dump({"out": str(path), "summary": gap_study_summary(rows)}))
    return 0


def cmd_attack(args) -> int:
    rng = np.random.default_rng(args.seed)
    try:
        rows = transpose_attack_experiment(
            args.n, set(args.flip or []), args.rounds, rng, noise=args.noise
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "attack.csv"
    with open(path, "w", newline="") as fh:
        fh.write("link,v_II,samples,stderr\n")
        for row in rows:
            fh.write(
                f"{row['link']},{row['v_II']!r},{row['samples']},{row['stderr']!r}\n"
            )
    print(_json_dump({"out": str(path), "links": rows}))
    return 0


def cmd_sweep(args) -> int:
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
        _reject_unknown(
            cfg,
            {"kind", "n", "psi_seed", "grid", "eps_prime", "delta", "repetitions", "rounds", "variant"},
            "sweep config",
        )
        kind = _require(cfg, "kind", "sweep config")
        if kind not in ("completeness", "soundness"):
            raise ConfigError("key 'kind' must be 'completeness' or 'soundness'")
        n = int(_require(cfg, "n", "sweep config"))
        grid = [float(g) for g in _require(cfg, "grid", "sweep config")]
        if not grid:
            raise ConfigError("key 'grid' must be non-empty")
        psi = qcore.haar_random_state(
            n, np.random.default_rng(int(cfg.get("psi_seed", 0)))
        ).amplitudes
        eps_prime = float(_require(cfg, "eps_prime", "sweep config"))
        delta = float(cfg.get("delta", 0.1))
        repetitions = int(cfg.get("repetitions", 10))
        rounds = int(_require(cfg, "rounds", "sweep config"))
    except (ConfigError, OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    threads = _effective_threads(args, adaptive=False)
    fn = completeness_sweep if kind == "completeness" else soundness_sweep
    result = fn(
        psi, grid, eps_prime, delta, repetitions, rounds, seed=args.seed, threads=threads
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    result.to_csv(path)
    print(_json_dump({"out": str(path), "rates": result.rates}))
    return 0


def cmd_verify_isometry(args) -> int:
    if args.grid:
        grid = [float(g) for g in args.grid.split(",")]
        slope = extraction_loglog_slope(grid)
        reports = [bell_extraction_report(p).to_json_dict() for p in grid]
        print(_json_dump({"slope": slope, "grid": reports}))
        return 0
    rep = bell_extraction_report(0.0 if args.ideal else args.noise)
    print(_json_dump(rep.to_json_dict()))
    return 0


def _effective_threads(args, adaptive: bool) -> int:
    threads = args.threads if args.threads else os.cpu_count() or 1
    if adaptive:
        return 1
    return max(1, threads)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dicert",
        description="Certification-protocol simulator for multipartite self-testing networks",
    )
    parser.add_argument("--seed", type=_seed_type, default=None, help="unsigned 64-bit RNG seed")
    parser.add_argument("--threads", type=int, default=None, help="worker threads for sweeps")
    parser.add_argument("--out", default=".", help="output directory for report files")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a certification protocol from a JSON config")
    p_run.add_argument("--config", required=True, help="path to the run configuration JSON")
    p_run.set_defaults(func=cmd_run)

    p_plan = sub.add_parser("plan", help="compute the planned round count")
    p_plan.add_argument("--variant", choices=["local", "shared"], required=True)
    p_plan.add_argument("--W", type=float, required=True, help="weight bound")
    p_plan.add_argument("--n", type=int, required=True, help="party count")
    p_plan.add_argument("--eps", type=float, required=True, help="target precision")
    p_plan.add_argument("--delta", type=float, required=True, help="failure probability")
    p_plan.add_argument("--c", type=float, default=1.0, help="constant multiplier")
    p_plan.set_defaults(func=cmd_plan)

    p_gap = sub.add_parser("gap", help="spectral-gap study over Haar targets")
    p_gap.add_argument("--n", required=True, help="party counts, e.g. 2..6 or 2,4,6")
    p_gap.add_argument("--trials", type=int, default=10)
    p_gap.add_argument("--samples", type=int, default=60, help="basis samples above the exact cap")
    p_gap.add_argument("--exact-cap", type=int, default=4, dest="exact_cap")
    p_gap.set_defaults(func=cmd_gap)

    p_attack = sub.add_parser("attack", help="conjugation-attack detection experiment")
    p_attack.add_argument("--n", type=int, required=True)
    p_attack.add_argument("--flip", type=int, action="append", help="conjugated party (repeatable)")
    p_attack.add_argument("--rounds", type=int, default=None)
    p_attack.add_argument("--noise", type=float, default=0.0)
    p_attack.set_defaults(func=cmd_attack)

    p_sweep = sub.add_parser("sweep", help="completeness/soundness certification sweep")
    p_sweep.add_argument("--config", required=True)
    p_sweep.set_defaults(func=cmd_sweep)

    p_iso = sub.add_parser("verify-isometry", help="Bell-extraction isometry checks")
    p_iso.add_argument("--ideal", action="store_true")
    p_iso.add_argument("--noise", type=float, default=0.0)
    p_iso.add_argument("--grid", default=None, help="comma-separated depolarizing grid")
    p_iso.set_defaults(func=cmd_verify_isometry)
    return parser


def _seed_type(text: str) -> int:
    val = int(text)
    if not 0 <= val < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return val


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.seed is None:
        args.seed = 0
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
