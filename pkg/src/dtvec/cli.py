"""Command line: simulate, train, sweep, cases, report."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, SimConfig, _parse_value, field_types, format_kv, load_config
from . import harness


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("simulation parameters")
    g.add_argument("--config", help="key = value file; flags below override it")
    for name in field_types(SimConfig):
        g.add_argument("--" + name.replace("_", "-"), dest="cfg_" + name, default=argparse.SUPPRESS,
                       metavar="VALUE")


def _config_from(args) -> SimConfig:
    types = field_types(SimConfig)
    overrides = {k[4:]: _parse_value(v, types[k[4:]], k[4:]) for k, v in vars(args).items()
                 if k.startswith("cfg_")}
    if args.config:
        return load_config(args.config, **overrides)
    return SimConfig(**overrides)


def _llm_kwargs(args) -> dict:
    kw = {"backend": args.backend}
    if getattr(args, "cases", None):
        from .llm.cases import CaseSet

        kw["case_set"] = CaseSet.load(args.cases)
    return kw


def cmd_simulate(args) -> int:
    cfg = _config_from(args)
    policy = harness.make_policy(args.policy, cfg, **_llm_kwargs(args))
    res = harness.run_episode(cfg, policy, args.horizon)
    out = Path(args.out)
    paths = res.write(out)
    meta = {"policy": args.policy, "horizon": args.horizon, "backend": args.backend,
            "deterministic": res.deterministic, "fallback_slots": res.fallbacks,
            "stability": res.report.status, "stable": res.report.stable, **res.summary()}
    (out / "config.txt").write_text(format_kv(cfg))
    (out / "summary.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    for k, v in res.summary().items():
        print(f"{k}: {v}")
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from(args)
    res = harness.train_learner(cfg, args.algo, args.episodes, args.slots_per_episode, args.export_slots)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res.learner.save(out / "checkpoint", meta={"episodes": args.episodes, "algo": args.algo})
    np.savetxt(out / "curve.txt", res.curve.mean(axis=1), fmt="%r")
    if res.cases is not None:
        res.cases.save(out / "cases.jsonl")
    print(f"trained {args.algo} for {args.episodes} episodes; plateau at {res.converged_episode}")
    return 0


def cmd_sweep(args) -> int:
    spec_path = Path(args.spec)
    if not spec_path.is_file():
        print(f"error: sweep spec not found: {spec_path}", file=sys.stderr)
        return 2
    spec, cfg_kw = harness.load_sweep_spec(spec_path)
    if args.workers is not None:
        spec.workers = args.workers
    rows = harness.run_sweep(spec, SimConfig(**cfg_kw))
    paths = harness.write_sweep(rows, args.out)
    failed = sum(1 for r in rows if r.get("error"))
    print(f"{len(rows) - failed} cells ok, {failed} failed; wrote {paths['results']}")
    return 1 if failed else 0


def cmd_cases(args) -> int:
    from .llm.cases import CaseSet

    if args.action == "inspect":
        cs = CaseSet.load(args.path)
        shapes = sorted({r.state.shape for r in cs})
        print(f"{len(cs)} cases; state shapes {shapes}")
        if len(cs):
            acts = np.stack([r.action for r in cs if r.action.shape == cs[0].action.shape])
            K = acts.shape[2] // 2
            print(f"mean offloading ratio {acts[..., :K].mean():.4g}; "
                  f"mean resource ratio {acts[..., K:].mean():.4g}")
        return 0
    cfg = _config_from(args)
    if args.policy in ("marl", "sarl"):
        cs = harness.train_learner(cfg, args.policy, args.episodes, export_slots=args.slots).cases
    else:
        cs = harness.collect_cases(cfg, harness.make_policy(args.policy, cfg), args.slots)
    cs.save(args.path)
    print(f"wrote {len(cs)} cases to {args.path}")
    return 0


def cmd_report(args) -> int:
    paths = harness.report(args.results, args.out)
    print(f"wrote {len(paths)} series files to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dtvec", description="Twin-assisted vehicular edge computing simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one episode and write per-slot CSVs")
    _add_config_flags(p)
    p.add_argument("--policy", default="uniform", choices=harness.POLICY_NAMES)
    p.add_argument("--horizon", type=int, default=1000)
    p.add_argument("--backend", choices=["mock", "http"], default="mock")
    p.add_argument("--cases", help="case set (JSONL) for the llm policy")
    p.add_argument("--out", default="out/episode")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train MARL or SARL and export a case set")
    _add_config_flags(p)
    p.add_argument("--algo", choices=["marl", "sarl"], default="marl")
    p.add_argument("--episodes", type=int, default=2000)
    p.add_argument("--slots-per-episode", type=int, default=50)
    p.add_argument("--export-slots", type=int, default=200)
    p.add_argument("--out", default="out/train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="run a sweep described by a key = value file")
    p.add_argument("spec")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", default="out/sweep")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("cases", help="export or inspect case sets")
    p.add_argument("action", choices=["export", "inspect"])
    p.add_argument("path")
    _add_config_flags(p)
    p.add_argument("--policy", default="balanced", choices=harness.POLICY_NAMES)
    p.add_argument("--slots", type=int, default=200)
    p.add_argument("--episodes", type=int, default=2000, help="training episodes for marl/sarl")
    p.set_defaults(func=cmd_cases)

    p = sub.add_parser("report", help="turn results.csv into per-series plot data")
    p.add_argument("results")
    p.add_argument("--out", default="out/report")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
