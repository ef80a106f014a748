"""Seeded Monte Carlo runner: population -> adversary -> server -> clients."""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .adversary import AttackInfeasible, AttackPlan, optimal_allocation, run_attacks
from .bounds import SQRT_2PI, BoundContext, asymptotic_upper_bound, minimax_lower_bound
from .client import combine_all
from .population import SeparationError, build_mixture, sample_population
from .server import ServerParams, default_backoff, phase_sizes, run_server

SCHEMA_VERSION = 1
THREADS_ENV = "FEDGMM_THREADS"
CSV_HEADER = ("delta", "c_over_k", "lower", "upper_theorem", "upper_tight", "eps_cr")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """One experiment.  ``attacks`` is a list of plan dicts, e.g.

    ``{"kind": "lower_bound", "allocation": "optimal"}``,
    ``{"kind": "lower_bound", "eps_alloc": [...], "params": {"mu_prime": "left"}}``,
    ``{"kind": "cluster_killer", "params": {"targets": [0, 1]}}``,
    ``{"kind": "uniform_spread", "params": {"c": 0.5}}``.
    """

    k: int
    c: float
    m: int
    delta: float = 3.0
    D: float = 27.0
    backoff: float | None = None  # None: max(0.02, m^(-1/3))
    attacks: list[dict] = field(default_factory=list)
    trials: int = 1
    master_seed: int = 0
    threads: int | None = None
    means: list[float] | None = None
    report_path: str | None = None
    schema_version: int = SCHEMA_VERSION

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        if not self.delta > 1.5:
            raise ConfigError(f"delta must satisfy delta > 1.5, got {self.delta:g}")
        if self.D < 9.0 * self.delta:
            raise ConfigError(
                f"separation must satisfy D >= 9*delta, got D={self.D:g} < {9.0 * self.delta:g}"
            )
        if self.k < 1 or self.m < 1 or self.c < 0:
            raise ConfigError(f"need k >= 1, m >= 1, c >= 0; got k={self.k}, m={self.m}, c={self.c}")
        if self.trials < 1:
            raise ConfigError(f"trials must be at least 1, got {self.trials}")
        b = self.effective_backoff
        try:
            params = ServerParams(build_mixture(self.k, self.delta, self.D, self.means).shape, self.k, self.c, b)
            phase_sizes(max(1, round((self.k + self.c) * self.m)), params)
        except SeparationError as exc:
            raise ConfigError(str(exc)) from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for spec in self.attacks:
            if spec.get("kind") not in ("null", "lower_bound", "uniform_spread", "cluster_killer"):
                raise ConfigError(f"unknown attack kind {spec.get('kind')!r}")

    @property
    def effective_backoff(self) -> float:
        return default_backoff(self.m) if self.backoff is None else float(self.backoff)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_plans(config: ExperimentConfig) -> list[AttackPlan]:
    plans = []
    for spec in config.attacks:
        spec = dict(spec)
        kind = spec.pop("kind")
        params = dict(spec.pop("params", {}))
        alloc = spec.pop("eps_alloc", None)
        if spec.pop("allocation", None) == "optimal" or (kind == "lower_bound" and alloc is None):
            alloc = optimal_allocation(config.c, config.k).tolist() if config.c > 0 else [0.0] * config.k
        params.update(spec)
        plans.append(AttackPlan(kind, alloc or [], params))
    return plans


def trial_seed(master_seed: int, trial_index: int) -> int:
    """Counter-based seed for one trial: independent of execution order."""
    ss = np.random.SeedSequence([int(master_seed), int(trial_index)])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class TrialRecord:
    trial: int
    seed: int
    khat: float = math.nan
    fallback_fraction: float = math.nan
    overlap_violations: int = 0
    n_clusters: int = 0
    n_discarded: int = 0
    near_mse: float = math.nan
    near_count: int = 0
    far_mse: float = math.nan
    far_count: int = 0
    per_component: list[dict] = field(default_factory=list)
    attacks: list[dict] = field(default_factory=list)
    aborted: str | None = None


def run_trial(config: ExperimentConfig, seed: int, trial: int = 0) -> TrialRecord:
    """One seeded draw of the whole protocol, scored by the uncorrupted clients' MSE."""
    rec = TrialRecord(trial=trial, seed=int(seed))
    rng = np.random.default_rng(seed)
    model = build_mixture(config.k, config.delta, config.D, config.means)
    ctx = _context(config.delta)
    pop = sample_population(model, config.m, config.c, rng)
    try:
        executed = run_attacks(model, build_plans(config), pop, rng)
    except AttackInfeasible as exc:
        rec.aborted = str(exc)
        return rec
    rec.attacks = [p.to_dict() for p in executed]

    params = ServerParams(model.shape, config.k, config.c, config.effective_backoff)
    out = run_server(pop.values, params, rng)
    genuine = pop.genuine
    x = pop.values[genuine]
    mu = model.as_array()[pop.true_label[genuine]]
    est, used, _ = combine_all(out.clusters, x, ctx)
    err2 = (est - mu) ** 2
    near = np.abs(x - mu) < 1.5 * config.delta

    rec.khat = float(err2.mean()) if err2.size else 0.0
    rec.fallback_fraction = float(np.mean(used < 0)) if used.size else 0.0
    rec.overlap_violations = out.overlap_violations
    rec.n_clusters = len(out.clusters)
    rec.n_discarded = len(out.discarded)
    rec.near_count = int(near.sum())
    rec.far_count = int((~near).sum())
    rec.near_mse = float(err2[near].mean()) if rec.near_count else math.nan
    rec.far_mse = float(err2[~near].mean()) if rec.far_count else math.nan
    rec.per_component = _component_diagnostics(model, out, pop.corrupted, config.delta)
    return rec


def _component_diagnostics(model, out, corrupted, delta) -> list[dict]:
    mus = np.array([c.mu_tilde for c in out.clusters])
    rows = []
    for i, mu in enumerate(model.means):
        row = {"component": i, "true_eps": math.nan, "eps_tilde": math.nan, "abs_error": math.nan}
        dist = np.abs(mus - mu) if mus.size else np.empty(0)
        row["killed"] = not bool(np.any(dist < 3.0 * delta))
        if dist.size and dist.min() < 1.5 * delta:
            j = int(np.argmin(dist))
            row["true_eps"] = float(np.count_nonzero(corrupted[out.members[j]]) / out.sizes.m2)
            row["eps_tilde"] = out.clusters[j].eps_tilde
            row["abs_error"] = float(dist[j])
        rows.append(row)
    return rows


_CTX_CACHE: dict[float, BoundContext] = {}


def _context(delta: float) -> BoundContext:
    ctx = _CTX_CACHE.get(delta)
    if ctx is None:
        ctx = _CTX_CACHE[delta] = BoundContext.for_delta(delta)
    return ctx


@dataclass
class ExperimentReport:
    khat_mean: float
    khat_stderr: float
    per_component: list[dict]
    fallback_fraction: float
    overlap_violations: int
    bound_lower: float
    bound_upper_theorem: float
    bound_upper_tight: float
    eps_cr: float
    trials_completed: int
    trials_aborted: int
    abort_reasons: list[str]
    seeds: list[int]
    config: dict

    def to_dict(self) -> dict:
        return _json_safe(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _json_safe(obj):
    if isinstance(obj, float):
        return None if math.isnan(obj) else obj
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def resolve_threads(threads: int | None) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get(THREADS_ENV)
    return max(1, int(env)) if env else 1


def run_trials(config: ExperimentConfig, threads: int | None = None, progress=None) -> list[TrialRecord]:
    seeds = [trial_seed(config.master_seed, i) for i in range(config.trials)]
    n_workers = resolve_threads(threads if threads is not None else config.threads)

    def one(i: int) -> TrialRecord:
        rec = run_trial(config, seeds[i], trial=i)
        if progress is not None:
            progress(i)
        return rec

    if n_workers == 1:
        return [one(i) for i in range(config.trials)]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(one, range(config.trials)))


def run_experiment(config: ExperimentConfig, threads: int | None = None, progress=None) -> ExperimentReport:
    config.validate()
    records = run_trials(config, threads, progress)
    return summarize(config, records)


def summarize(config: ExperimentConfig, records: Sequence[TrialRecord]) -> ExperimentReport:
    done = [r for r in records if r.aborted is None]
    kh = [r.khat for r in done]
    mean = math.fsum(kh) / len(kh) if kh else math.nan
    if len(kh) > 1:
        var = math.fsum((v - mean) ** 2 for v in kh) / (len(kh) - 1)
        stderr = math.sqrt(var / len(kh))
    else:
        stderr = 0.0 if kh else math.nan

    per_component = []
    for i in range(config.k):
        rows = [r.per_component[i] for r in done]
        per_component.append(
            {
                "component": i,
                "true_eps": _nanmean(r["true_eps"] for r in rows),
                "eps_tilde": _nanmean(r["eps_tilde"] for r in rows),
                "abs_error": _nanmean(r["abs_error"] for r in rows),
                "killed_rate": _nanmean(float(r["killed"]) for r in rows),
            }
        )

    ctx = _context(config.delta)
    ratio = config.c / config.k
    upper = asymptotic_upper_bound(ratio, ctx)
    return ExperimentReport(
        khat_mean=mean,
        khat_stderr=stderr,
        per_component=per_component,
        fallback_fraction=_nanmean(r.fallback_fraction for r in done),
        overlap_violations=sum(r.overlap_violations for r in done),
        bound_lower=minimax_lower_bound(ratio) if ratio < SQRT_2PI else math.nan,
        bound_upper_theorem=upper.theorem,
        bound_upper_tight=upper.tight,
        eps_cr=ctx.eps_cr,
        trials_completed=len(done),
        trials_aborted=len(records) - len(done),
        abort_reasons=sorted({r.aborted for r in records if r.aborted is not None}),
        seeds=[r.seed for r in records],
        # thread count is an execution detail; leaving it out keeps reports byte-identical
        config={k: v for k, v in config.to_dict().items() if k != "threads"},
    )


def _nanmean(values: Iterable[float]) -> float:
    vals = [v for v in values if not math.isnan(v)]
    return math.fsum(vals) / len(vals) if vals else math.nan


# ---------------------------------------------------------------------------
# theory tables
# ---------------------------------------------------------------------------


def bound_table(deltas: Sequence[float], ratios: Sequence[float]) -> list[dict]:
    """Rows (delta, c/k, lower, upper_theorem, upper_tight, eps_cr) behind the bound plots."""
    rows = []
    for d in deltas:
        ctx = _context(float(d))
        for r in ratios:
            if r < 0:
                raise ValueError(f"ratios must be non-negative, got {r}")
            up = asymptotic_upper_bound(r, ctx)
            rows.append(
                {
                    "delta": float(d),
                    "c_over_k": float(r),
                    "lower": minimax_lower_bound(r) if r < SQRT_2PI else math.nan,
                    "upper_theorem": up.theorem,
                    "upper_tight": up.tight,
                    "eps_cr": ctx.eps_cr,
                }
            )
    return rows


def write_csv(rows: Sequence[dict], fh, header: Sequence[str] = CSV_HEADER) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(row[h]) for h in header])


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)
