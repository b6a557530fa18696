"""Episode runner, experiment sweeps and result files."""
from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .config import SimConfig, field_types, parse_kv_text
from .learners.baselines import (BalancedPolicy, DriftPlusPenaltyPolicy, GreedyLocalPolicy, Policy,
                                 RandomPolicy, UniformPolicy)
from .llm.cases import CaseRecord, CaseSet
from .queueing import BacklogHistory, InsufficientHistoryError, StabilityReport, stability_report
from .sim import Simulation, SlotRecord

log = logging.getLogger(__name__)

# case sets for the llm policy are generated on an independent seed stream
CASE_SEED_OFFSET = 10_007

SLOT_COLUMNS = ["slot", "qos_system", "mean_delay_s", "e_local_j", "e_edge_j", "e_system_j",
                "alpha_sum", "omega_mean", "q_total", "p1", "p2", "drift_term", "n_violations"]
TASK_COLUMNS = ["slot", "vehicle", "task_type", "size_bytes", "omega", "alpha", "rate_bps",
                "local_delay_s", "edge_delay_s", "bias_delay_s", "total_delay_s", "qos_task"]
RESULT_COLUMNS = ["policy", "n_vehicles", "bias_ghz", "seed", "mean_energy_j", "mean_delay_s",
                  "mean_qos", "mean_edge_energy_j", "mean_alpha_sum", "stable", "runtime_s"]
METRIC_COLUMNS = ["mean_energy_j", "mean_delay_s", "mean_qos", "mean_edge_energy_j", "mean_alpha_sum"]
# plot-data series: file stem -> results.csv column
SERIES = {
    "energy": "mean_energy_j",
    "delay": "mean_delay_s",
    "qos": "mean_qos",
    "edge_energy": "mean_edge_energy_j",
    "alpha_sum": "mean_alpha_sum",
}


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"refusing to persist non-finite value {x}")
    return repr(x + 0.0)  # folds -0.0 into 0.0


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([row[c] if isinstance(row[c], str) else _fmt(row[c]) for c in columns])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# single episode

@dataclass
class EpisodeResult:
    config: SimConfig
    policy: str
    records: list[SlotRecord] = field(default_factory=list)
    rates: list[np.ndarray] = field(default_factory=list)
    history: BacklogHistory | None = None
    report: StabilityReport | None = None
    runtime_s: float = 0.0
    fallbacks: int = 0
    deterministic: bool = True

    @property
    def horizon(self) -> int:
        return len(self.records)

    def slot_rows(self) -> list[dict]:
        rows = []
        for rec in self.records:
            m, o = rec.metrics, rec.objective
            rows.append({
                "slot": rec.t, "qos_system": m.qos_system, "mean_delay_s": float(m.total_delay.mean()),
                "e_local_j": m.e_local, "e_edge_j": m.e_edge, "e_system_j": m.e_system,
                "alpha_sum": float(rec.actions.alloc_alpha.sum()),
                "omega_mean": float(rec.actions.offload_omega.mean()),
                "q_total": float(rec.q_before.sum()), "p1": o.p1, "p2": o.p2,
                "drift_term": o.drift_penalty_term, "n_violations": len(o.constraint_violations),
            })
        return rows

    def task_rows(self):
        for rec, rates in zip(self.records, self.rates):
            m, a = rec.metrics, rec.actions
            N, K = a.shape
            sizes = rec.sizes
            for n in range(N):
                for k in range(K):
                    yield {
                        "slot": rec.t, "vehicle": n, "task_type": k, "size_bytes": sizes[n, k],
                        "omega": a.offload_omega[n, k], "alpha": a.alloc_alpha[n, k],
                        "rate_bps": rates[n], "local_delay_s": m.local_delay[n, k],
                        "edge_delay_s": m.edge_delay[n, k], "bias_delay_s": m.bias_delay[n, k],
                        "total_delay_s": m.total_delay[n, k], "qos_task": m.qos_task[n, k],
                    }

    def summary(self) -> dict:
        if not self.records:
            return {c: 0.0 for c in METRIC_COLUMNS} | {"stable": False}
        return {
            "mean_energy_j": float(np.mean([r.metrics.e_system for r in self.records])),
            "mean_delay_s": float(np.mean([r.metrics.total_delay.mean() for r in self.records])),
            "mean_qos": float(np.mean([r.metrics.qos_system for r in self.records])),
            "mean_edge_energy_j": float(np.mean([r.metrics.e_edge for r in self.records])),
            "mean_alpha_sum": float(np.mean([r.actions.alloc_alpha.sum() for r in self.records])),
            "stable": bool(self.report is not None and self.report.stable),
        }

    def write(self, outdir) -> dict[str, Path]:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"slots": out / "slots.csv", "tasks": out / "tasks.csv", "backlog": out / "backlog.csv"}
        write_csv(paths["slots"], SLOT_COLUMNS, self.slot_rows())
        write_csv(paths["tasks"], TASK_COLUMNS, self.task_rows())
        self.history.to_csv(paths["backlog"])
        return paths


def _fallback_action(ctx, config):
    return UniformPolicy().decide(ctx, config)


def run_slot(sim: Simulation, policy: Policy) -> tuple[SlotRecord, object]:
    """tasks -> twins -> channel -> decide -> project -> queues -> metrics -> objectives."""
    ctx = sim.begin_slot()
    try:
        raw = policy.decide(ctx, sim.config)
        fell_back = False
    except Exception as exc:  # noqa: BLE001 - any policy failure degrades to the baseline
        log.warning("slot %d: policy %s failed (%s); using uniform fallback", ctx.t, policy.name, exc)
        raw = _fallback_action(ctx, sim.config)
        fell_back = True
    record = sim.finish_slot(ctx, raw)
    record.fell_back = fell_back
    policy.after_slot(ctx, record)
    return record, ctx


def run_episode(config: SimConfig, policy: Policy, horizon: int) -> EpisodeResult:
    start = time.perf_counter()
    sim = Simulation(config)
    policy.reset(config)
    result = EpisodeResult(config, policy.name)
    for _ in range(horizon):
        record, ctx = run_slot(sim, policy)
        result.records.append(record)
        result.rates.append(ctx.rates)
        result.fallbacks += int(record.fell_back)
    result.history = sim.history
    N, K = config.n_vehicles, config.n_task_types
    try:
        result.report = stability_report(
            sim.history, zmax=np.full(K, N * config.max_task_size), fE=config.server_cpu_fE,
            ck=config.cycles_per_byte_ck, dt=config.slot_dt)
    except InsufficientHistoryError:
        result.report = StabilityReport.insufficient()
    backend = getattr(policy, "backend", None)
    result.deterministic = getattr(backend, "deterministic", True)
    result.runtime_s = time.perf_counter() - start
    return result


# ---------------------------------------------------------------------------
# policies by name

BASELINES = {
    "uniform": lambda cfg: UniformPolicy(),
    "uniform_floor": lambda cfg: UniformPolicy(alpha=cfg.alpha_min),
    "greedy": lambda cfg: GreedyLocalPolicy(),
    "greedy_floor": lambda cfg: GreedyLocalPolicy(alpha=cfg.alpha_min),
    "random": lambda cfg: RandomPolicy(seed=cfg.seed),
    "balanced": lambda cfg: BalancedPolicy(),
    "dpp": lambda cfg: DriftPlusPenaltyPolicy(),
}
POLICY_NAMES = sorted([*BASELINES, "llm", "marl", "sarl"])


def collect_cases(config: SimConfig, policy: Policy, slots: int, case_set: CaseSet | None = None) -> CaseSet:
    """Run ``policy`` and record every slot's (state, projected action) pair."""
    case_set = case_set if case_set is not None else CaseSet()
    sim = Simulation(config)
    policy.reset(config)
    for _ in range(slots):
        record, ctx = run_slot(sim, policy)
        case_set.append(CaseRecord(ctx.obs, record.actions.as_rows(), record.metrics.summary(), ctx.t))
    return case_set


def train_learner(config: SimConfig, algo: str, episodes: int, slots_per_episode: int = 50,
                  export_slots: int = 0):
    from .learners.marl import LearnerHyper, marl_train, sarl_hyper

    common = dict(seed=config.seed, gamma=config.gamma, tau=config.soft_update_lambda)
    hyper = LearnerHyper(**common) if algo == "marl" else sarl_hyper(**common)
    return marl_train(config, episodes, slots_per_episode, hyper, centralized=(algo == "marl"),
                      export_slots=export_slots)


def make_policy(name: str, config: SimConfig, *, backend: str = "mock", case_set: CaseSet | None = None,
                case_source: str = "balanced", case_slots: int = 200, marl_episodes: int = 200,
                marl_slots: int = 50, llm_options: dict | None = None) -> Policy:
    if name in BASELINES:
        return BASELINES[name](config)
    if name in ("marl", "sarl"):
        from .learners.marl import LearnedPolicy

        res = train_learner(config, name, marl_episodes, marl_slots)
        return LearnedPolicy(res.learner, config.n_task_types, name=name)
    if name == "llm":
        from .llm.backends import HttpChatBackend, MockBackend
        from .llm.policy import LLMConfig, LLMPolicy

        if case_set is None:
            case_cfg = config.replace(seed=config.seed + CASE_SEED_OFFSET)
            if case_source in ("marl", "sarl"):
                case_set = train_learner(case_cfg, case_source, marl_episodes, marl_slots,
                                         export_slots=case_slots).cases
            else:
                case_set = collect_cases(case_cfg, make_policy(case_source, case_cfg), case_slots)
        be = MockBackend(case_set) if backend == "mock" else HttpChatBackend(**(llm_options or {}))
        return LLMPolicy(case_set, be, LLMConfig())
    raise ValueError(f"unknown policy {name!r}; choose from {', '.join(POLICY_NAMES)}")


# ---------------------------------------------------------------------------
# sweeps

@dataclass
class SweepSpec:
    vehicle_counts: list = field(default_factory=lambda: [2, 4, 6, 8, 10])
    bias_values: list = field(default_factory=lambda: [0.5, -0.5])  # GHz
    policies: list = field(default_factory=lambda: ["llm", "uniform", "greedy"])
    seeds: list = field(default_factory=lambda: [1, 2, 3])
    horizon: int = 1000
    workers: int = 1
    record_runtime: bool = True
    tmax_scale: float = 1.0
    backend: str = "mock"
    case_source: str = "balanced"
    case_slots: int = 200
    marl_episodes: int = 200
    marl_slots: int = 50

    def __post_init__(self):
        self.vehicle_counts = [int(v) for v in self.vehicle_counts]
        self.bias_values = [float(b) for b in self.bias_values]
        self.seeds = [int(s) for s in self.seeds]
        for name in ("vehicle_counts", "bias_values", "policies", "seeds"):
            if not getattr(self, name):
                raise ValueError(f"sweep spec: {name} must be nonempty")
        for p in self.policies:
            if p not in POLICY_NAMES:
                raise ValueError(f"sweep spec: unknown policy {p!r}")

    def cells(self):
        for p in self.policies:
            for n in self.vehicle_counts:
                for b in self.bias_values:
                    for s in self.seeds:
                        yield p, n, b, s


def load_sweep_spec(path) -> tuple[SweepSpec, dict]:
    """Read a sweep file; SimConfig keys found in it are returned as config overrides."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"sweep spec not found: {path}")
    spec_types = {f.name for f in fields(SweepSpec)}
    spec_kw, cfg_lines = {}, []
    for line in path.read_text().splitlines():
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, _, raw = body.partition("=")
        key = key.strip().replace("-", "_")
        if key in spec_types:
            spec_kw[key] = raw.strip()
        else:
            cfg_lines.append(body)
    parsed = {}
    for key, raw in spec_kw.items():
        if key in ("vehicle_counts", "bias_values", "seeds", "policies"):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            parsed[key] = items
        elif key == "record_runtime":
            parsed[key] = raw.lower() in ("1", "true", "yes")
        elif key in ("horizon", "workers", "case_slots", "marl_episodes", "marl_slots"):
            parsed[key] = int(raw)
        elif key == "tmax_scale":
            parsed[key] = float(raw)
        else:
            parsed[key] = raw
    return SweepSpec(**parsed), parse_kv_text("\n".join(cfg_lines))


def cell_config(base: SimConfig, spec: SweepSpec, n: int, bias_ghz: float, seed: int) -> SimConfig:
    tmax = [t * spec.tmax_scale for t in base.max_delay_Tmax]
    return base.replace(n_vehicles=n, est_bias_df=bias_ghz * 1e9, seed=seed, max_delay_Tmax=tmax)


def run_cell(args) -> dict:
    base, spec, (policy_name, n, bias, seed) = args
    row = {"policy": policy_name, "n_vehicles": n, "bias_ghz": bias, "seed": seed}
    try:
        cfg = cell_config(base, spec, n, bias, seed)
        policy = make_policy(policy_name, cfg, backend=spec.backend, case_source=spec.case_source,
                             case_slots=spec.case_slots, marl_episodes=spec.marl_episodes,
                             marl_slots=spec.marl_slots)
        res = run_episode(cfg, policy, spec.horizon)
        row.update(res.summary())
        row["runtime_s"] = res.runtime_s if spec.record_runtime else 0.0
        row["error"] = ""
    except Exception as exc:  # noqa: BLE001 - recorded per cell, sweep continues
        log.exception("cell %s failed", row)
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def run_sweep(spec: SweepSpec, base: SimConfig | None = None) -> list[dict]:
    base = base or SimConfig()
    jobs = [(base, spec, cell) for cell in spec.cells()]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            return list(pool.map(run_cell, jobs))
    return [run_cell(j) for j in jobs]


def aggregate(rows: list[dict]) -> list[dict]:
    """Mean and std over seeds for each (policy, n_vehicles, bias) cell."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        if r.get("error"):
            continue
        key = (r["policy"], int(r["n_vehicles"]), float(r["bias_ghz"]))
        groups.setdefault(key, []).append(r)
    out = []
    for key, members in groups.items():
        members = sorted(members, key=lambda r: int(r["seed"]))
        agg = {"policy": key[0], "n_vehicles": key[1], "bias_ghz": key[2], "n_seeds": len(members)}
        for c in METRIC_COLUMNS:
            vals = np.array([float(r[c]) for r in members])
            agg[f"{c}_mean"] = float(vals.mean())
            agg[f"{c}_std"] = float(vals.std())
        out.append(agg)
    return out


AGG_COLUMNS = ["policy", "n_vehicles", "bias_ghz", "n_seeds"] + [
    f"{c}_{s}" for c in METRIC_COLUMNS for s in ("mean", "std")]


def write_sweep(rows: list[dict], outdir) -> dict[str, Path]:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    ok = [r for r in rows if not r.get("error")]
    bad = [r for r in rows if r.get("error")]
    paths = {"results": out / "results.csv", "aggregate": out / "aggregate.csv"}
    write_csv(paths["results"], RESULT_COLUMNS, ok)
    write_csv(paths["aggregate"], AGG_COLUMNS, aggregate(ok))
    if bad:
        paths["failures"] = out / "failures.csv"
        write_csv(paths["failures"], ["policy", "n_vehicles", "bias_ghz", "seed", "error"], bad)
    return paths


def _bias_tag(b: float) -> str:
    return f"bias{b:+g}"


def report(results_csv, outdir) -> list[Path]:
    """One (x=n_vehicles, y=seed mean) series file per quantity, policy and bias."""
    rows = read_csv(results_csv)
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    series: dict[tuple, dict[int, list[float]]] = {}
    for r in rows:
        key = (r["policy"], float(r["bias_ghz"]))
        for quantity, col in SERIES.items():
            series.setdefault((quantity, *key), {}).setdefault(int(r["n_vehicles"]), []).append(float(r[col]))
    paths = []
    for (quantity, policy, bias), points in sorted(series.items()):
        path = out / f"{quantity}__{policy}__{_bias_tag(bias)}.dat"
        with open(path, "w") as fh:
            fh.write(f"# {quantity}: {SERIES[quantity]} vs n_vehicles, policy={policy}, bias_ghz={bias:g}\n")
            for x in sorted(points):
                fh.write(f"{x} {_fmt(float(np.mean(points[x])))}\n")
        paths.append(path)
    return paths


def sweep_means(rows: list[dict], policy: str, bias: float, column: str, counts) -> list[float]:
    """Seed-averaged ``column`` for each vehicle count (helper for trend checks)."""
    out = []
    for n in counts:
        vals = [float(r[column]) for r in rows if r["policy"] == policy and int(r["n_vehicles"]) == n
                and float(r["bias_ghz"]) == bias and not r.get("error")]
        out.append(float(np.mean(vals)) if vals else float("nan"))
    return out


def config_field_names() -> list[str]:
    return list(field_types(SimConfig))
