"""Simulation harness: the four shipped experiments, replication, CSV output.

Each experiment pits the sampler-based test against an oracle that knows
the true data-generating mechanism and redraws the tested data from it
directly. Both see the same observed dataset in every replication, so
their rejection rates are directly comparable.

Replications are seeded counter-style: a SeedSequence built from
(root seed, experiment id, signal index, replication index, attempt)
spawns independent streams for data generation, the sampler run, and the
oracle draws. Results are therefore reproducible rep-by-rep, independent
of execution order, and a multi-process run yields the same records as a
serial one.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import expit

from .api import AcssError, ConfigError, NumericalDomainError
from .estimator import AcssConfig
from .gof import compute_pvalue, normalize_topology, run_acss
from .models import (
    BehrensFisherModel,
    GlmModel,
    MultivariateTModel,
    SpatialModel,
    anisotropic_covariance,
    anisotropy_statistic,
    tail_weight_statistic,
)

CSV_HEADER = "experiment,signal,rep,method,pvalue,ssosp_ok,seed,runtime_ms"


# ---------------------------------------------------------------------------
# Statistics shared by experiments and tests
# ---------------------------------------------------------------------------


def frisch_waugh_abs_coef(y: np.ndarray, Z: np.ndarray, x: np.ndarray) -> float:
    """|OLS coefficient of x| in the regression of y on (x, Z).

    Computed by residualizing both x and y on Z, which equals the joint
    fit's x-coefficient.
    """
    zz = Z.T @ Z
    rx = x - Z @ np.linalg.solve(zz, Z.T @ x)
    ry = y - Z @ np.linalg.solve(zz, Z.T @ y)
    denom = float(rx @ rx)
    if denom <= 0:
        return 0.0
    return float(abs((ry @ rx) / denom))


def mean_difference(n0: int, x: np.ndarray) -> float:
    """|group-1 mean minus group-0 mean| for a concatenated two-group sample."""
    return float(abs(x[n0:].mean() - x[:n0].mean()))


# ---------------------------------------------------------------------------
# Experiment definitions
# ---------------------------------------------------------------------------


class RepPieces(NamedTuple):
    model: object
    x: np.ndarray
    statistic: Callable[[np.ndarray], float]
    oracle_sampler: Callable[[int, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class ExperimentDef:
    name: str
    exp_id: int
    make_rep: Callable[[float, dict, np.random.Generator], RepPieces]
    defaults: dict
    param_defaults: dict


def _logistic_ci_rep(signal: float, params: dict, rng: np.random.Generator) -> RepPieces:
    n, p = int(params["n"]), int(params["n_covariates"])
    Z = rng.standard_normal((n, p))
    probs = expit(Z @ np.full(p, 0.2))
    x = (rng.random(n) < probs).astype(float)
    y = signal * x + 0.1 * Z.sum(axis=1) + rng.standard_normal(n)

    def statistic(data: np.ndarray) -> float:
        return frisch_waugh_abs_coef(y, Z, data)

    def oracle_sampler(M: int, orng: np.random.Generator) -> np.ndarray:
        return (orng.random((M, n)) < probs[None, :]).astype(float)

    return RepPieces(GlmModel(Z), x, statistic, oracle_sampler)


def _behrens_fisher_rep(signal: float, params: dict, rng: np.random.Generator) -> RepPieces:
    n0, n1 = int(params["n0"]), int(params["n1"])
    v0, v1 = float(params["var0"]), float(params["var1"])
    x = np.concatenate([rng.normal(0.0, np.sqrt(v0), n0),
                        rng.normal(signal, np.sqrt(v1), n1)])

    def oracle_sampler(M: int, orng: np.random.Generator) -> np.ndarray:
        return np.concatenate([orng.normal(0.0, np.sqrt(v0), (M, n0)),
                               orng.normal(0.0, np.sqrt(v1), (M, n1))], axis=1)

    return RepPieces(BehrensFisherModel(n0, n1), x, partial(mean_difference, n0),
                     oracle_sampler)


def _spatial_rep(signal: float, params: dict, rng: np.random.Generator) -> RepPieces:
    model = SpatialModel(side=int(params["side"]))
    rate = float(params["rate"])
    L_true = np.linalg.cholesky(anisotropic_covariance(model, signal, rate=rate))
    x = L_true @ rng.standard_normal(model.n)
    L_null = np.linalg.cholesky(model.covariance(rate))

    def oracle_sampler(M: int, orng: np.random.Generator) -> np.ndarray:
        return orng.standard_normal((M, model.n)) @ L_null.T

    return RepPieces(model, x, partial(anisotropy_statistic, model), oracle_sampler)


def _mvt_rep(signal: float, params: dict, rng: np.random.Generator) -> RepPieces:
    n, k = int(params["n"]), int(params["k"])
    gamma = float(params["gamma"])
    theta0 = np.array([[1.0, -0.5], [-0.5, 2.0]]) if k == 2 else np.eye(k)
    L = np.linalg.cholesky(np.linalg.inv(theta0))

    def draw_t(df: float, m: int, n_rows: int, drng: np.random.Generator) -> np.ndarray:
        z = drng.standard_normal((m, n_rows, k)) @ L.T
        u = drng.chisquare(df, (m, n_rows))
        return z / np.sqrt(u / df)[..., None]

    x = draw_t(signal, 1, n, rng)[0]

    def oracle_sampler(M: int, orng: np.random.Generator) -> np.ndarray:
        return draw_t(gamma, M, n, orng)

    return RepPieces(MultivariateTModel(n=n, k=k, gamma=gamma), x,
                     tail_weight_statistic, oracle_sampler)


EXPERIMENTS: dict[str, ExperimentDef] = {
    "logistic-ci": ExperimentDef(
        name="logistic-ci", exp_id=1, make_rep=_logistic_ci_rep,
        defaults=dict(signals=(0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0),
                      reps=500, M=500, sigma2=10.0, topology="hub-and-spoke",
                      proposal="subset", init_radius_rule="default"),
        param_defaults=dict(n=100, n_covariates=5)),
    "behrens-fisher": ExperimentDef(
        name="behrens-fisher", exp_id=2, make_rep=_behrens_fisher_rep,
        defaults=dict(signals=(0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0),
                      reps=500, M=500, sigma2=1.0, topology="hub-and-spoke",
                      proposal="subset", init_radius_rule="default"),
        param_defaults=dict(n0=50, n1=50, var0=1.0, var1=2.0)),
    "spatial": ExperimentDef(
        name="spatial", exp_id=3, make_rep=_spatial_rep,
        defaults=dict(signals=(0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0),
                      reps=500, M=100, sigma2=1.0, topology="hub-and-spoke",
                      proposal="ar", init_radius_rule="max"),
        param_defaults=dict(side=10, rate=0.25)),
    "multivariate-t": ExperimentDef(
        name="multivariate-t", exp_id=4, make_rep=_mvt_rep,
        defaults=dict(signals=(2.0, 4.0, 6.0, 8.0, 10.0),
                      reps=500, M=100, sigma2=1.0, topology="hub-and-spoke",
                      proposal="subset", init_radius_rule="max"),
        param_defaults=dict(n=100, k=2, gamma=2.0)),
}


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    signals: tuple[float, ...]
    reps: int
    M: int
    sigma2: float
    topology: str
    proposal: str
    init_radius_rule: object
    alpha: float = 0.05
    seed: int = 0
    threads: int = 1
    subset_tune_sims: int = 100
    subset_tune_steps: int = 50
    rho_tune_sims: int = 500
    out: str | None = None
    params: tuple[tuple[str, object], ...] = ()

    @property
    def params_dict(self) -> dict:
        return dict(self.params)


_INT_KEYS = {"reps", "M", "seed", "threads",
             "subset_tune_sims", "subset_tune_steps", "rho_tune_sims"}
_FLOAT_KEYS = {"sigma2", "alpha"}
_STR_KEYS = {"experiment", "topology", "proposal", "out"}


def parse_config_text(text: str) -> dict[str, str]:
    """Flat `key = value` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or not key or not val:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = val
    return out


def _parse_radius_rule(val: str):
    if val in ("default", "max"):
        return val
    try:
        return float(val)
    except ValueError:
        raise ConfigError(f"init_radius_rule must be 'default', 'max', or a number, "
                          f"got {val!r}")


def make_experiment_config(raw: dict[str, str], seed: int | None = None,
                           threads: int | None = None) -> ExperimentConfig:
    raw = dict(raw)
    name = raw.pop("experiment", None)
    if name is None:
        raise ConfigError("config is missing the 'experiment' key")
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; "
                          f"expected one of {sorted(EXPERIMENTS)}")
    exp = EXPERIMENTS[name]
    merged = dict(exp.defaults)
    merged.setdefault("alpha", 0.05)
    merged.setdefault("seed", 0)
    merged.setdefault("threads", 1)
    merged.setdefault("subset_tune_sims", 100)
    merged.setdefault("subset_tune_steps", 50)
    merged.setdefault("rho_tune_sims", 500)
    merged.setdefault("out", None)
    params = dict(exp.param_defaults)

    for key, val in raw.items():
        try:
            if key == "signals":
                merged[key] = tuple(float(v) for v in val.split(","))
            elif key in _INT_KEYS:
                merged[key] = int(val)
            elif key in _FLOAT_KEYS:
                merged[key] = float(val)
            elif key in _STR_KEYS:
                merged[key] = val
            elif key == "init_radius_rule":
                merged[key] = _parse_radius_rule(val)
            elif key in params:
                params[key] = type(params[key])(val)
            else:
                raise ConfigError(f"unknown config key {key!r} for experiment {name!r}")
        except (ValueError, TypeError):
            raise ConfigError(f"bad value for {key!r}: {val!r}")

    if seed is not None:
        merged["seed"] = int(seed)
    if threads is not None:
        merged["threads"] = int(threads)
    if merged["reps"] < 1 or merged["M"] < 1:
        raise ConfigError("reps and M must be positive")
    if merged["sigma2"] <= 0:
        raise ConfigError("sigma2 must be positive")
    if not 0 < merged["alpha"] < 1:
        raise ConfigError("alpha must lie strictly between 0 and 1")
    topology = normalize_topology(merged["topology"])
    if merged["proposal"] not in ("subset", "ar", "auto"):
        raise ConfigError(f"proposal must be subset, ar, or auto, "
                          f"got {merged['proposal']!r}")
    return ExperimentConfig(
        experiment=name, signals=tuple(merged["signals"]), reps=merged["reps"],
        M=merged["M"], sigma2=merged["sigma2"], topology=topology,
        proposal=merged["proposal"], init_radius_rule=merged["init_radius_rule"],
        alpha=merged["alpha"], seed=merged["seed"], threads=merged["threads"],
        subset_tune_sims=merged["subset_tune_sims"],
        subset_tune_steps=merged["subset_tune_steps"],
        rho_tune_sims=merged["rho_tune_sims"], out=merged["out"],
        params=tuple(sorted(params.items())))


def load_config(path: str | Path, seed: int | None = None,
                threads: int | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}")
    return make_experiment_config(parse_config_text(text), seed=seed, threads=threads)


# ---------------------------------------------------------------------------
# Replication
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReplicationRecord:
    experiment: str
    signal: float
    rep: int
    method: str          # "acss" or "oracle"
    pvalue: float
    ssosp_ok: bool
    seed: int
    runtime_ms: int


def replication_records(cfg: ExperimentConfig, signal_idx: int,
                        rep: int) -> list[ReplicationRecord]:
    """Run one replication (both methods) with counter-derived seeding."""
    exp = EXPERIMENTS[cfg.experiment]
    signal = cfg.signals[signal_idx]
    acss_cfg = AcssConfig(sigma=float(np.sqrt(cfg.sigma2)),
                          init_radius_rule=cfg.init_radius_rule,
                          subset_tune_sims=cfg.subset_tune_sims,
                          subset_tune_steps=cfg.subset_tune_steps,
                          rho_tune_sims=cfg.rho_tune_sims)
    proposal = None if cfg.proposal == "auto" else cfg.proposal
    last_exc: Exception | None = None
    for attempt in range(5):
        ss = np.random.SeedSequence((cfg.seed, exp.exp_id, signal_idx, rep, attempt))
        seed64 = int(ss.generate_state(1, np.uint64)[0])
        data_rng, acss_rng, oracle_rng = map(np.random.default_rng, ss.spawn(3))
        try:
            pieces = exp.make_rep(signal, cfg.params_dict, data_rng)
            t0 = time.perf_counter()
            res = run_acss(pieces.model, pieces.x, pieces.statistic, acss_cfg,
                           cfg.M, acss_rng, topology=cfg.topology, proposal=proposal)
            t1 = time.perf_counter()
            oracle_copies = pieces.oracle_sampler(cfg.M, oracle_rng)
            t_obs = pieces.statistic(pieces.x)
            t_oracle = np.array([pieces.statistic(c) for c in oracle_copies])
            p_oracle = compute_pvalue(t_obs, t_oracle)
            t2 = time.perf_counter()
        except (np.linalg.LinAlgError, NumericalDomainError) as exc:
            last_exc = exc
            continue
        return [
            ReplicationRecord(cfg.experiment, signal, rep, "acss", res.pvalue,
                              res.ssosp_ok, seed64, int(1000 * (t1 - t0))),
            ReplicationRecord(cfg.experiment, signal, rep, "oracle", p_oracle,
                              True, seed64, int(1000 * (t2 - t1))),
        ]
    raise AcssError(f"replication ({cfg.experiment}, signal={signal}, rep={rep}) "
                    f"failed 5 attempts: {last_exc}")


def _pool_task(cfg: ExperimentConfig, task: tuple[int, int]) -> list[ReplicationRecord]:
    return replication_records(cfg, *task)


def run_experiment(cfg: ExperimentConfig,
                   progress: Callable[[int, int], None] | None = None) -> list[ReplicationRecord]:
    """All replications of all signals, in (signal, rep, method) order."""
    tasks = [(si, rep) for si in range(len(cfg.signals)) for rep in range(cfg.reps)]
    records: list[ReplicationRecord] = []
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            for i, recs in enumerate(pool.map(partial(_pool_task, cfg), tasks,
                                              chunksize=4)):
                records.extend(recs)
                if progress:
                    progress(i + 1, len(tasks))
    else:
        for i, task in enumerate(tasks):
            records.extend(replication_records(cfg, *task))
            if progress:
                progress(i + 1, len(tasks))
    return records


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def format_record(r: ReplicationRecord) -> str:
    return (f"{r.experiment},{r.signal!r},{r.rep},{r.method},{r.pvalue!r},"
            f"{'true' if r.ssosp_ok else 'false'},{r.seed},{r.runtime_ms}")


def write_csv(records: list[ReplicationRecord], path: str | Path) -> None:
    lines = [CSV_HEADER]
    lines.extend(format_record(r) for r in records)
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path: str | Path) -> list[ReplicationRecord]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ConfigError(f"{path}: not a results file (bad header)")
    out = []
    for line in lines[1:]:
        f = line.split(",")
        out.append(ReplicationRecord(f[0], float(f[1]), int(f[2]), f[3], float(f[4]),
                                     f[5] == "true", int(f[6]), int(f[7])))
    return out


def summarize(records: list[ReplicationRecord],
              alpha: float = 0.05) -> dict[tuple[float, str], dict[str, float]]:
    """Rejection and solve-success rates per (signal, method)."""
    groups: dict[tuple[float, str], list[ReplicationRecord]] = {}
    for r in records:
        groups.setdefault((r.signal, r.method), []).append(r)
    out = {}
    for key in sorted(groups):
        rs = groups[key]
        out[key] = {
            "n": len(rs),
            "reject_rate": float(np.mean([r.pvalue <= alpha for r in rs])),
            "ssosp_rate": float(np.mean([r.ssosp_ok for r in rs])),
        }
    return out


def summary_table(records: list[ReplicationRecord], alpha: float = 0.05) -> str:
    summ = summarize(records, alpha=alpha)
    lines = [f"{'signal':>8} {'method':>8} {'n':>6} {'reject':>8} {'solved':>8}"]
    for (signal, method), s in summ.items():
        lines.append(f"{signal:>8g} {method:>8} {s['n']:>6d} "
                     f"{s['reject_rate']:>8.3f} {s['ssosp_rate']:>8.3f}")
    return "\n".join(lines)
