"""Config-driven verification runs.

An experiment pairs a left-hand side estimated by simulation (or computed
exactly, for the deterministic checks) with the matching right-hand side
and produces a :class:`VerificationReport`.  A statistical experiment
passes when the upper end of the bootstrap interval is at most
``rhs * slack`` and no disqualifying flag was raised.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import jsonschema
import numpy as np

from . import bounds, constants, estimators, gronwall_core, models
from .errors import (ConfigError, FiniteDifferenceMismatch, InvalidParameter, NonFiniteState,
                     NotEvaluable, ToleranceNotReached, UnknownModel)
from .simulate import SimConfig, simulate, simulate_coupled, simulate_perturbed

DEFAULT_SEED = 12345

INEQUALITIES = (
    "marginal_moment", "uniform_moment", "exp_marginal", "exp_uniform",
    "poly_from_exp_marginal", "poly_from_exp_uniform", "lipschitz_marginal",
    "lipschitz_uniform", "temporal_regularity", "holder", "perturbation_marginal",
    "perturbation_uniform", "opial_property", "integrating_factor_residual",
    "constants_identity",
)
EXACT_CHECKS = frozenset({"opial_property", "integrating_factor_residual", "constants_identity"})

PASS, FAIL, NOT_EVALUABLE = "PASS", "FAIL", "NOT-EVALUABLE"

CSV_COLUMNS = ("experiment_id", "inequality_id", "model", "p", "q", "lhs", "lhs_ci_hi", "rhs",
               "margin", "verdict", "flags", "paths", "steps", "seed", "wall_ms")


@dataclass(frozen=True)
class ExperimentSpec:
    id: str
    inequality: str
    model: str = "ou"
    model_params: dict = field(default_factory=dict)
    p: Optional[float] = None
    q: Optional[float] = None
    q3: Optional[float] = None
    delta: Optional[float] = None
    eps: Optional[float] = None
    variant: str = "half"
    x: Optional[list] = None
    y: Optional[list] = None
    s: Optional[float] = None
    t1: Optional[float] = None
    t2: Optional[float] = None
    hs: Optional[list] = None
    min_order: float = 0.4
    instances: int = 200
    tol_factor: float = 10.0
    qs: Optional[list] = None
    tol: float = 1e-10
    substeps: int = 4
    sim: dict = field(default_factory=dict)
    level: float = 0.99
    slack: float = 1.05
    n_bootstrap: int = 2000
    kurtosis_threshold: float = 20.0
    seed: Optional[int] = None

    def __post_init__(self):
        if self.inequality not in INEQUALITIES:
            raise ConfigError(f"{self.id}: unknown inequality {self.inequality!r}")
        if not self.slack >= 1.0:
            raise ConfigError(f"{self.id}: slack must be >= 1")
        if not 0.0 < self.level < 1.0:
            raise ConfigError(f"{self.id}: level must lie in (0, 1)")

    @classmethod
    def from_dict(cls, entry: dict, defaults: Optional[dict] = None) -> "ExperimentSpec":
        merged = dict(defaults or {})
        for key, value in entry.items():
            if key in ("sim", "model_params") and isinstance(value, dict):
                merged[key] = {**merged.get(key, {}), **value}
            else:
                merged[key] = value
        known = {f.name for f in fields(cls)}
        unknown = set(merged) - known
        if unknown:
            raise ConfigError(f"{entry.get('id', '?')}: unknown keys {sorted(unknown)}")
        return cls(**merged)

    def sim_config(self) -> SimConfig:
        cfg = dict(self.sim)
        cfg.setdefault("master_seed", self.seed if self.seed is not None else DEFAULT_SEED)
        try:
            return SimConfig(**cfg)
        except TypeError as exc:
            raise ConfigError(f"{self.id}: bad sim block: {exc}") from None


@dataclass(frozen=True)
class VerificationReport:
    experiment_id: str
    inequality_id: str
    model: str
    verdict: str
    lhs: Optional[estimators.MomentEstimate]
    rhs: Optional[bounds.BoundValue]
    p: Optional[float] = None
    q: Optional[float] = None
    flags: tuple = ()
    seed: Optional[int] = None
    n_paths: int = 0
    n_steps: int = 0
    wall_ms: float = 0.0
    message: str = ""
    details: dict = field(default_factory=dict)

    @property
    def margin(self) -> float:
        if self.lhs is None or self.rhs is None:
            return math.nan
        if self.lhs.point == 0.0:
            return math.inf if self.rhs.value > 0 else math.nan
        return self.rhs.value / self.lhs.point

    def to_dict(self) -> dict:
        out = {
            "experiment_id": self.experiment_id,
            "inequality_id": self.inequality_id,
            "model": self.model,
            "p": self.p,
            "q": self.q,
            "verdict": self.verdict,
            "lhs": asdict(self.lhs) if self.lhs else None,
            "rhs": None if self.rhs is None else {
                "value": self.rhs.value, "factors": [list(f) for f in self.rhs.factors],
                "combine": self.rhs.combine, "details": self.rhs.details,
                "assumptions": list(self.rhs.assumptions)},
            "margin": self.margin,
            "flags": list(self.flags),
            "seed": self.seed,
            "paths": self.n_paths,
            "steps": self.n_steps,
            "message": self.message,
            "details": self.details,
            "wall_ms": self.wall_ms,
        }
        return _jsonable(out)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def verdict_for(lhs: estimators.MomentEstimate, rhs: bounds.BoundValue, slack: float,
                exact: bool = False) -> str:
    if any(f.split(" ")[0] in estimators.DISQUALIFYING for f in lhs.flags):
        return FAIL
    limit = rhs.value if exact else rhs.value * slack
    return PASS if lhs.ci_hi <= limit else FAIL


# ------------------------------------------------------------------ runners

def _require(spec, *names):
    missing = [n for n in names if getattr(spec, n) is None]
    if missing:
        raise InvalidParameter(f"{spec.inequality} needs {', '.join(missing)}")


def _est_kw(spec, seed):
    return dict(level=spec.level, n_bootstrap=spec.n_bootstrap, seed=seed)


def _cert_or_raise(result: models.CheckResult, kind: str):
    if not result.ok:
        raise NotEvaluable(f"{kind} certificate violated by {result.worst_violation:.3e} "
                           f"at {np.array2string(result.worst_state, precision=4)} "
                           f"({result.part})")


def _x0_norm(model):
    return float(np.linalg.norm(model.x0))


def _run_moment(spec, model, cfg, seed):
    _require(spec, "p")
    cert = models.growth_certificate(model, spec.p)
    _cert_or_raise(models.check_growth_certificate(model, cert, _sampler(cfg)), "growth")
    if spec.inequality == "uniform_moment":
        _require(spec, "q")
        rhs = bounds.uniform_moment_bound(cert, _x0_norm(model), cfg.T, spec.q, spec.variant)
        other = "full" if spec.variant == "half" else "half"
        alt = bounds.uniform_moment_bound(cert, _x0_norm(model), cfg.T, spec.q, other)
        batch = simulate(model, cfg)
        lhs = estimators.sup_lp_estimate(batch, spec.q, **_est_kw(spec, seed))
        return lhs, rhs, {f"rhs_{other}": alt.value}
    rhs = bounds.marginal_moment_bound(cert, _x0_norm(model), cfg.T)
    batch = simulate(model, cfg)
    lhs = estimators.terminal_lp_estimate(batch, spec.p, **_est_kw(spec, seed))
    details = {}
    if model.oracles.pth_moment is not None:
        details["exact_lhs"] = model.oracles.pth_moment(cfg.T, spec.p) ** (1.0 / spec.p)
    return lhs, rhs, details


def _sampler(cfg):
    return models.StateSampler(T=cfg.T)


def _run_exp(spec, model, cfg, seed):
    cert = models.lyapunov_certificate(model, "exponential")
    _cert_or_raise(models.check_lyapunov_certificate(model, cert, "exponential", _sampler(cfg)),
                   "Lyapunov (exponential form)")
    mode = "uniform" if spec.inequality == "exp_uniform" else "marginal"
    if mode == "uniform":
        _require(spec, "q")
    rhs = bounds.exp_moment_bound(cert, model.x0, mode, spec.q)
    batch = simulate(model, cfg, observers={"z": estimators.exp_observer(cert, mode, spec.q)})
    z = batch.observations["z"][batch.valid()]
    lhs = estimators.exp_functional_estimate(z, spec.level, spec.n_bootstrap, seed,
                                             spec.kurtosis_threshold)
    return lhs, rhs, {}


def _poly_observer(cert, p, mode, q):
    def observe(times, traj, dws, exits):
        n, K1, _ = traj.shape
        last = np.minimum(exits, K1) - 1
        vals = np.empty((n, K1))
        for k in range(K1):
            vals[:, k] = np.abs(p + math.exp(-cert.alpha * times[k])
                                * cert.U.value(times[k], traj[:, k]))
        if mode == "marginal":
            return vals[np.arange(n), last] ** p
        mask = np.arange(K1)[None, :] <= last[:, None]
        return np.where(mask, vals, -np.inf).max(axis=1) ** q
    return observe


def _run_poly(spec, model, cfg, seed):
    _require(spec, "p")
    cert = models.lyapunov_certificate(model, "moment")
    _cert_or_raise(models.check_lyapunov_certificate(model, cert, "moment", _sampler(cfg)),
                   "Lyapunov (moment form)")
    mode = "uniform" if spec.inequality.endswith("uniform") else "marginal"
    if mode == "uniform":
        _require(spec, "q")
    rhs = bounds.poly_from_exp_bound(cert, model.x0, spec.p, cfg.T, mode, spec.q)
    batch = simulate(model, cfg, observers={"v": _poly_observer(cert, spec.p, mode, spec.q)})
    samples = batch.observations["v"][batch.valid()]
    lhs = estimators.lp_norm_estimate(samples, 1.0, **_est_kw(spec, seed))
    return lhs, rhs, {"scale": "expectation"}


def _coupling(spec, model, cfg, envelope):
    _require(spec, "p", "q")
    cert = models.coupling_certificate(model, spec.p, spec.q, T=cfg.T, envelope=envelope)
    _cert_or_raise(models.check_coupling_certificate(model, cert, _sampler(cfg)), "coupling")
    return cert


def _run_lipschitz(spec, model, cfg, seed):
    _require(spec, "x", "y")
    cert = _coupling(spec, model, cfg, envelope=False)
    batch = simulate_coupled(model, cfg, spec.x, spec.y)
    if spec.inequality == "lipschitz_uniform":
        _require(spec, "delta")
        rhs = bounds.lipschitz_bound(cert, spec.x, spec.y, cfg.T, "uniform", spec.delta)
        samples = batch.diff_sup
    else:
        rhs = bounds.lipschitz_bound(cert, spec.x, spec.y, cfg.T, "marginal")
        samples = batch.diff_terminal
    index = rhs.details["norm_index"]
    lhs = estimators.lp_norm_estimate(samples, index, **_est_kw(spec, seed))
    details = {}
    if model.name == "gbm":
        ratio = float(np.linalg.norm(np.asarray(spec.x, float) - np.asarray(spec.y, float)))
        ident = np.abs(batch.diff_terminal - ratio / float(np.linalg.norm(spec.x))
                       * np.linalg.norm(batch.first.terminal_states, axis=1))
        details["linearity_max_abs_error"] = float(ident.max())
    return lhs, rhs, details


def _grid_index(cfg, t, name):
    k = t / cfg.h
    idx = int(round(k))
    if abs(k - idx) > 1e-9 * max(1.0, k) or not 0 <= idx <= cfg.n_steps:
        raise InvalidParameter(f"{name}={t} is not a grid node of the simulation")
    return idx


def _run_temporal(spec, model, cfg, seed):
    _require(spec, "s")
    cert = _coupling(spec, model, cfg, envelope=True)
    ks = _grid_index(cfg, spec.s, "s")

    def observe(times, traj, dws, exits):
        n, K1, _ = traj.shape
        last = np.minimum(exits, K1) - 1
        anchor = traj[np.arange(n), np.minimum(ks, last)]
        dist = np.linalg.norm(traj - anchor[:, None, :], axis=2)
        mask = (np.arange(K1)[None, :] >= ks) & (np.arange(K1)[None, :] <= last[:, None])
        return np.where(mask, dist, 0.0).max(axis=1)

    rhs = bounds.temporal_regularity_bound(cert, model.x0, spec.s, cfg.T)
    batch = simulate(model, cfg, observers={"w": observe})
    lhs = estimators.lp_norm_estimate(batch.observations["w"][batch.valid()], cert.p,
                                      **_est_kw(spec, seed))
    return lhs, rhs, {}


def _run_holder(spec, model, cfg, seed):
    _require(spec, "x", "y", "t1", "t2")
    cert = _coupling(spec, model, cfg, envelope=True)
    k1 = _grid_index(cfg, spec.t1, "t1")
    k2 = _grid_index(cfg, spec.t2, "t2")

    def observe(times, tx, ty, stop):
        return np.linalg.norm(tx[:, k1] - ty[:, k2], axis=1)

    rhs = bounds.holder_bound(cert, spec.x, spec.y, spec.t1, spec.t2)
    batch = simulate_coupled(model, cfg, spec.x, spec.y, observers={"d": observe})
    lhs = estimators.lp_norm_estimate(batch.first.observations["d"], rhs.details["norm_index"],
                                      **_est_kw(spec, seed))
    return lhs, rhs, {}


def _run_perturbation(spec, model, cfg, seed):
    _require(spec, "p")
    env = model.lipschitz
    if env is None:
        raise NotEvaluable("model declares no Lipschitz envelope for the exponential factor")
    _cert_or_raise(models.check_lipschitz_envelope(model, env, _sampler(cfg)), "Lipschitz envelope")
    eps = spec.eps if spec.eps is not None else (math.inf if env.diffusion == 0 else 1.0)
    if spec.inequality == "perturbation_uniform":
        _require(spec, "q3")
        if not 0.0 < spec.q3 < spec.p:
            raise InvalidParameter(f"need 0 < q3 < p = {spec.p}, got q3 = {spec.q3}")
    batch = simulate_perturbed(model, cfg, spec.substeps, powers=(spec.p,))
    drift, diffusion = estimators.mismatch_integrals(batch, spec.p)
    data = bounds.MismatchData(spec.p, drift, diffusion, batch.drift_mismatch_integral,
                               batch.diffusion_mismatch_integral)
    if spec.inequality == "perturbation_uniform":
        rhs = bounds.perturbation_bound(env, data, cfg.T, eps, spec.delta, "uniform", spec.q3)
        lhs = estimators.lp_norm_estimate(batch.diff_sup, spec.q3, **_est_kw(spec, seed))
        flags = (estimators.GRID_SUP_FLAG,)
    else:
        rhs = bounds.perturbation_bound(env, data, cfg.T, eps, spec.delta, "marginal")
        lhs = estimators.lp_norm_estimate(batch.diff_terminal, spec.p, **_est_kw(spec, seed))
        flags = ()
    return lhs.scaled(1.0, flags), rhs, {"delta": rhs.details.get("delta")}


def random_opial_instance(rng: np.random.Generator):
    """Equality instance from a random nonnegative piecewise-linear forcing.

    Returns ``(instance, h)``.
    """
    T = rng.uniform(0.5, 2.0)
    n = int(rng.integers(50, 400))
    times = np.linspace(0.0, T, n + 1)
    knots = np.sort(np.concatenate([[0.0, T], rng.uniform(0.0, T, int(rng.integers(1, 8)))]))
    heights = rng.uniform(0.0, 5.0, knots.size) * (rng.uniform(size=knots.size) > 0.2)
    beta = gronwall_core.GridFunction(times, np.interp(times, knots, heights))
    p = rng.uniform(1.0, 5.0)
    p = p if p > 1.0 else 5.0  # the open end of (1, 5]
    x0 = rng.uniform(0.0, 10.0)
    return gronwall_core.equality_instance(p, x0, beta), T / n


def _run_opial(spec, seed):
    rng = np.random.default_rng([seed, 0x0910])
    worst = 0.0
    failures = 0
    for _ in range(spec.instances):
        inst, h = random_opial_instance(rng)
        tol = spec.tol_factor * h
        res = gronwall_core.opial_check(inst, tol)
        if not (res.hypothesis_ok and res.conclusion_ok):
            failures += 1
        worst = max(worst, max(res.max_violation, 0.0) / tol)
    lhs = _exact(worst)
    rhs = bounds.BoundValue(1.0, (("unit", 1.0),), "opial_property")
    return lhs, rhs, {"instances": spec.instances, "failures": failures,
                      "worst_violation_over_tol": worst}


def _run_residual(spec, model, seed):
    hs = spec.hs or [2.0 ** -6, 2.0 ** -8, 2.0 ** -10]
    sim = dict(spec.sim)
    T = float(sim.get("T", 1.0))
    V = models.TestFunction.quadratic(1.0)
    residuals = []
    for h in hs:
        n_steps = int(round(T / h))
        cfg = SimConfig(T=T, n_steps=n_steps, n_paths=int(sim.get("n_paths", 2000)),
                        master_seed=seed, scheme=sim.get("scheme", "euler"),
                        record_paths=True, record_increments=True)
        batch = simulate(model, cfg)
        chi = gronwall_core.GridFunction(cfg.times, np.zeros(n_steps + 1))
        residuals.append(gronwall_core.integrating_factor_residual(model, V, chi, batch))
    slope = gronwall_core.loglog_slope(hs, residuals)
    ratio = spec.min_order / slope if slope > 0 else math.inf
    return (_exact(ratio), bounds.BoundValue(1.0, (("unit", 1.0),), "integrating_factor_residual"),
            {"hs": list(hs), "residuals": residuals, "observed_order": slope})


def _run_constants(spec):
    qs = spec.qs or [round(0.1 * i, 10) for i in range(1, 10)]
    gaps = {f"burkholder q={q:g}": constants.burkholder_identity_gap(q, spec.tol) for q in qs}
    for r in qs:
        val = constants.tail_integral(constants.TailIntegralSpec(r, 0.0), spec.tol).value
        gaps[f"beta r={r:g}"] = abs(val - math.pi * r / math.sin(math.pi * r))
    worst = max(gaps.values())
    return (_exact(worst),
            bounds.BoundValue(2.0 * spec.tol, (("two_tol", 2.0 * spec.tol),), "constants_identity"),
            {"gaps": gaps})


def _exact(value: float) -> estimators.MomentEstimate:
    return estimators.MomentEstimate(1.0, value, value, value, 1.0, 1)


_STATISTICAL = {
    "marginal_moment": _run_moment, "uniform_moment": _run_moment,
    "exp_marginal": _run_exp, "exp_uniform": _run_exp,
    "poly_from_exp_marginal": _run_poly, "poly_from_exp_uniform": _run_poly,
    "lipschitz_marginal": _run_lipschitz, "lipschitz_uniform": _run_lipschitz,
    "temporal_regularity": _run_temporal, "holder": _run_holder,
    "perturbation_marginal": _run_perturbation, "perturbation_uniform": _run_perturbation,
}


def run_experiment(spec: ExperimentSpec) -> VerificationReport:
    """Run one experiment; errors become NOT-EVALUABLE reports with a message."""
    start = time.perf_counter()
    seed = spec.seed if spec.seed is not None else DEFAULT_SEED
    base = dict(experiment_id=spec.id, inequality_id=spec.inequality, model=spec.model,
                p=spec.p, q=spec.q if spec.q is not None else spec.q3, seed=seed)
    n_paths = n_steps = 0
    try:
        if spec.inequality == "opial_property":
            lhs, rhs, details = _run_opial(spec, seed)
        elif spec.inequality == "constants_identity":
            lhs, rhs, details = _run_constants(spec)
        else:
            model = models.catalog_get(spec.model, **spec.model_params)
            if spec.inequality == "integrating_factor_residual":
                lhs, rhs, details = _run_residual(spec, model, seed)
            else:
                cfg = spec.sim_config()
                n_paths, n_steps = cfg.n_paths, cfg.n_steps
                lhs, rhs, details = _STATISTICAL[spec.inequality](spec, model, cfg, seed)
    except (NotEvaluable, InvalidParameter, UnknownModel, ConfigError, FiniteDifferenceMismatch,
            NonFiniteState, ToleranceNotReached) as exc:
        return VerificationReport(**base, verdict=NOT_EVALUABLE, lhs=None, rhs=None,
                                  message=f"{type(exc).__name__}: {exc}",
                                  wall_ms=_ms(start))
    exact = spec.inequality in EXACT_CHECKS
    verdict = verdict_for(lhs, rhs, spec.slack, exact)
    return VerificationReport(**base, verdict=verdict, lhs=lhs, rhs=rhs, flags=tuple(lhs.flags),
                              n_paths=n_paths, n_steps=n_steps, wall_ms=_ms(start),
                              details=details)


def _ms(start):
    return round(1e3 * (time.perf_counter() - start), 1)


# -------------------------------------------------------------------- suites

def load_schema() -> dict:
    return json.loads(resources.files("stochgronwall").joinpath("schema.json").read_text())


def default_suite_path() -> Path:
    return Path(str(resources.files("stochgronwall").joinpath("suites/default.json")))


def parse_config(text: str, source: str = "<config>") -> list[ExperimentSpec]:
    """Validate a config document and expand it into experiment specs.

    Per-experiment seeds default to a hash of the top-level seed and the
    experiment's position, so adding an experiment never changes the others'
    randomness unless it is inserted before them.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{source}: /{'/'.join(map(str, e.absolute_path))}: {e.message}" for e in errors]
        raise ConfigError("\n".join(lines))
    top_seed = int(doc.get("seed", DEFAULT_SEED))
    defaults = doc.get("defaults", {})
    specs = []
    for i, entry in enumerate(doc.get("experiments", [])):
        entry = dict(entry)
        entry.setdefault("seed", derive_seed(top_seed, i))
        specs.append(ExperimentSpec.from_dict(entry, defaults))
    ids = [s.id for s in specs]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"{source}: experiment ids must be unique")
    return specs


def derive_seed(top_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([top_seed, index]).generate_state(1, np.uint32)[0])


def run_suite(specs, jobs: int = 1) -> list[VerificationReport]:
    if jobs <= 1 or len(specs) <= 1:
        return [run_experiment(s) for s in specs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_experiment, specs))


def exit_code(reports) -> int:
    return 0 if all(r.verdict == PASS for r in reports) else 1


def reports_to_json(reports, include_wall_time: bool = True) -> str:
    rows = [r.to_dict() for r in reports]
    if not include_wall_time:
        for row in rows:
            row.pop("wall_ms", None)
    return json.dumps(rows, indent=2, sort_keys=True) + "\n"


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in reports:
        writer.writerow([
            r.experiment_id, r.inequality_id, r.model, _fmt(r.p), _fmt(r.q),
            _fmt(r.lhs.point if r.lhs else None), _fmt(r.lhs.ci_hi if r.lhs else None),
            _fmt(r.rhs.value if r.rhs else None), _fmt(r.margin), r.verdict,
            ";".join(r.flags), r.n_paths, r.n_steps, r.seed, r.wall_ms,
        ])
    return buf.getvalue()


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    return repr(float(v))
