"""Path generation for Ito models on a uniform grid.

Every path draws its Gaussians from its own Philox stream keyed by
``(master_seed, path_index)``; independent streams for the same path are
separated through the high word of the counter.  A path's randomness is
therefore a function of its index alone, and results do not depend on how
paths are chunked or how many worker threads run.

Paths stop at the first grid node that leaves the model's domain: the state
is frozen at the last in-domain node and ``exit_step`` records the index of
the offending node (``n_steps + 1`` when the path never leaves).
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Literal, Mapping, Optional

import numpy as np

from .errors import InvalidParameter, NonFiniteState, NotEvaluable
from .models import ItoModel

Scheme = Literal["euler", "tamed"]

STREAM_INCREMENTS = 0
STREAM_AUX = 1
STREAM_BRIDGE = 2

_U64 = (1 << 64) - 1


def path_normals(master_seed: int, path_ids, stream: int, count: int) -> np.ndarray:
    """Standard normals of shape ``(len(path_ids), count)``, one Philox stream per path."""
    out = np.empty((len(path_ids), count))
    key0 = int(master_seed) & _U64
    counter = np.array([0, 0, 0, stream], dtype=np.uint64)
    for row, idx in enumerate(path_ids):
        bitgen = np.random.Philox(key=np.array([key0, int(idx)], dtype=np.uint64),
                                  counter=counter)
        out[row] = np.random.Generator(bitgen).standard_normal(count)
    return out


@dataclass(frozen=True)
class SimConfig:
    T: float = 1.0
    n_steps: int = 1000
    n_paths: int = 10_000
    master_seed: int = 0
    scheme: Scheme = "euler"
    record_increments: bool = False
    record_paths: bool = False
    chunk_size: int = 4096
    workers: int = 1
    on_nonfinite: Literal["abort", "flag"] = "abort"

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise InvalidParameter("T must be positive and finite")
        if self.n_steps < 1 or self.n_paths < 1:
            raise InvalidParameter("n_steps and n_paths must be >= 1")
        if self.scheme not in ("euler", "tamed"):
            raise InvalidParameter(f"unknown scheme {self.scheme!r}")
        if self.chunk_size < 1 or self.workers < 1:
            raise InvalidParameter("chunk_size and workers must be >= 1")
        if self.on_nonfinite not in ("abort", "flag"):
            raise InvalidParameter(f"unknown on_nonfinite policy {self.on_nonfinite!r}")

    @property
    def h(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)


@dataclass(frozen=True)
class PathBatch:
    times: np.ndarray
    terminal_states: np.ndarray
    sup_norms: np.ndarray
    exit_steps: np.ndarray
    nonfinite: np.ndarray
    trajectories: Optional[np.ndarray] = None
    increments: Optional[np.ndarray] = None
    observations: Mapping[str, np.ndarray] = field(default_factory=dict)
    flags: tuple = ()

    @property
    def n_paths(self) -> int:
        return self.terminal_states.shape[0]

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def valid(self) -> np.ndarray:
        return ~self.nonfinite


@dataclass(frozen=True)
class CoupledBatch:
    first: PathBatch
    second: PathBatch
    stop_steps: np.ndarray
    diff_terminal: np.ndarray
    diff_sup: np.ndarray


@dataclass(frozen=True)
class PerturbedBatch:
    """Exact path X and scheme path Y on shared noise.

    ``mismatch_means[r]`` holds, per step ``k`` and sub-node ``j`` (time
    ``t_k + j h / substeps``), path means of ``|mu(t, Y_t) - a_t|^r`` and
    ``|sigma(t, Y_t) - b_t|_F^r`` as arrays of shape ``(2, n_steps, substeps + 1)``;
    ``a_t, b_t`` are the coefficients the scheme froze at ``t_k``.
    """

    times: np.ndarray
    substeps: int
    diff_terminal: np.ndarray
    diff_sup: np.ndarray
    drift_mismatch_integral: np.ndarray
    diffusion_mismatch_integral: np.ndarray
    mismatch_means: Mapping[float, np.ndarray]
    stop_steps: np.ndarray
    exact_terminal: np.ndarray
    scheme_terminal: np.ndarray


# ----------------------------------------------------------------- stepping

def scheme_coefficients(model: ItoModel, scheme: Scheme, t: float, x: np.ndarray, h: float):
    """Drift and diffusion the scheme applies on ``[t, t + h)`` from state ``x``."""
    mu = model.mu(t, x)
    if scheme == "tamed":
        mu = mu / (1.0 + h * np.linalg.norm(mu, axis=1))[:, None]
    return mu, model.sigma(t, x)


def scheme_step(model: ItoModel, scheme: Scheme, t: float, x: np.ndarray, h: float,
                dw: np.ndarray) -> np.ndarray:
    """One Euler (or norm-tamed Euler) step for a batch of states."""
    a, b = scheme_coefficients(model, scheme, t, x, h)
    return x + a * h + np.einsum("nij,nj->ni", b, dw)


def _advance(step, x0s, dws, times, domain):
    """Shared time loop: apply ``step(k, x, dw)`` with freezing on exit.

    Returns trajectories ``(n, K+1, d)``, exit steps and a non-finite mask.
    """
    n, K = dws.shape[0], dws.shape[1]
    traj = np.empty((n, K + 1, x0s.shape[1]))
    traj[:, 0] = x0s
    exit_steps = np.full(n, K + 1, dtype=np.int64)
    nonfinite = np.zeros(n, dtype=bool)
    for k in range(K):
        cur = traj[:, k]
        nxt = cur.copy()
        alive = exit_steps == K + 1
        if alive.any():
            idx = np.flatnonzero(alive)
            new = step(k, cur[idx], dws[idx, k], idx)
            # a state whose squared norm overflows counts as blown up
            with np.errstate(over="ignore", invalid="ignore"):
                finite = np.isfinite(np.einsum("ni,ni->n", new, new))
            if not finite.all():
                nonfinite[idx[~finite]] = True
                exit_steps[idx[~finite]] = k + 1
            ok = idx[finite]
            inside = domain(new[finite])
            exit_steps[ok[~inside]] = k + 1
            nxt[ok[inside]] = new[finite][inside]
        traj[:, k + 1] = nxt
    return traj, exit_steps, nonfinite


def _chunks(n_paths, size):
    return [(lo, min(lo + size, n_paths)) for lo in range(0, n_paths, size)]


def _map_chunks(fn, cfg: SimConfig):
    spans = _chunks(cfg.n_paths, cfg.chunk_size)
    if cfg.workers == 1 or len(spans) == 1:
        return [fn(lo, hi) for lo, hi in spans]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(lambda span: fn(*span), spans))


def _increments(cfg: SimConfig, m: int, lo: int, hi: int) -> np.ndarray:
    z = path_normals(cfg.master_seed, range(lo, hi), STREAM_INCREMENTS, cfg.n_steps * m)
    return math.sqrt(cfg.h) * z.reshape(hi - lo, cfg.n_steps, m)


def _start(model: ItoModel, x0) -> np.ndarray:
    x0 = model.x0 if x0 is None else np.asarray(x0, dtype=float).reshape(model.d)
    if not bool(model.domain(x0[None])[0]):
        raise InvalidParameter(f"start {x0} outside the domain")
    return x0


def _check_nonfinite(cfg, nonfinite, lo=0):
    if cfg.on_nonfinite == "abort" and nonfinite.any():
        bad = lo + np.flatnonzero(nonfinite)
        raise NonFiniteState(f"{bad.size} path(s) produced non-finite states, first {bad[:5]}",
                             paths=bad)


Observer = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def simulate(model: ItoModel, cfg: SimConfig, x0=None,
             observers: Optional[Mapping[str, Observer]] = None) -> PathBatch:
    """Simulate ``cfg.n_paths`` paths of ``model`` with the configured scheme.

    ``observers`` map a name to ``f(times, trajectories, increments, exit_steps)``
    evaluated per chunk; each must return an array whose first axis indexes the
    chunk's paths.  This allows path functionals without storing every path.
    """
    x0 = _start(model, x0)
    times = cfg.times
    observers = dict(observers or {})

    def run(lo, hi):
        dws = _increments(cfg, model.m, lo, hi)

        def step(k, x, dw, idx):
            return scheme_step(model, cfg.scheme, times[k], x, cfg.h, dw)

        traj, exits, nonfinite = _advance(step, np.tile(x0, (hi - lo, 1)), dws, times,
                                          model.domain)
        _check_nonfinite(cfg, nonfinite, lo)
        obs = {name: np.asarray(f(times, traj, dws, exits)) for name, f in observers.items()}
        return dict(
            terminal=traj[:, -1].copy(),
            sup=np.linalg.norm(traj, axis=2).max(axis=1),
            exits=exits,
            nonfinite=nonfinite,
            traj=traj if cfg.record_paths else None,
            dws=dws if cfg.record_increments else None,
            obs=obs,
        )

    parts = _map_chunks(run, cfg)
    cat = lambda key: np.concatenate([p[key] for p in parts])  # noqa: E731
    nonfinite = cat("nonfinite")
    flags = ("grid-sup (downward-biased)",)
    if nonfinite.any():
        flags += (f"non-finite paths: {int(nonfinite.sum())}",)
    return PathBatch(
        times=times,
        terminal_states=cat("terminal"),
        sup_norms=cat("sup"),
        exit_steps=cat("exits"),
        nonfinite=nonfinite,
        trajectories=cat("traj") if cfg.record_paths else None,
        increments=cat("dws") if cfg.record_increments else None,
        observations={name: np.concatenate([p["obs"][name] for p in parts])
                      for name in observers},
        flags=flags,
    )


CoupledObserver = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def simulate_coupled(model: ItoModel, cfg: SimConfig, x, y,
                     observers: Optional[Mapping[str, CoupledObserver]] = None) -> CoupledBatch:
    """Two starts driven by the same increments, stopped at the first exit of either.

    Coupled observers receive ``(times, traj_x, traj_y, stop_steps)`` with both
    trajectories already frozen after the common stopping node.
    """
    x = _start(model, x)
    y = _start(model, y)
    times = cfg.times
    observers = dict(observers or {})

    def run(lo, hi):
        dws = _increments(cfg, model.m, lo, hi)

        def step(k, s, dw, idx):
            return scheme_step(model, cfg.scheme, times[k], s, cfg.h, dw)

        n = hi - lo
        tx, ex, nfx = _advance(step, np.tile(x, (n, 1)), dws, times, model.domain)
        ty, ey, nfy = _advance(step, np.tile(y, (n, 1)), dws, times, model.domain)
        _check_nonfinite(cfg, nfx | nfy, lo)
        stop = np.minimum(ex, ey)
        sx, sy = _freeze(tx, stop), _freeze(ty, stop)
        diff = np.linalg.norm(sx - sy, axis=2)
        obs = {name: np.asarray(f(times, sx, sy, stop)) for name, f in observers.items()}
        return dict(
            first=_summary(tx, ex, nfx, dws, cfg),
            second=_summary(ty, ey, nfy, dws, cfg),
            stop=stop, diff_terminal=diff[:, -1], diff_sup=diff.max(axis=1), obs=obs,
        )

    parts = _map_chunks(run, cfg)
    cat = lambda key: np.concatenate([p[key] for p in parts])  # noqa: E731
    first = _merge_summaries([p["first"] for p in parts], times)
    second = _merge_summaries([p["second"] for p in parts], times)
    if observers:
        obs = {name: np.concatenate([p["obs"][name] for p in parts]) for name in observers}
        first = PathBatch(**{**first.__dict__, "observations": obs})
    return CoupledBatch(first, second, cat("stop"), cat("diff_terminal"), cat("diff_sup"))


def _freeze(traj, stop):
    """Hold each path at node ``stop - 1`` from then on."""
    K1 = traj.shape[1]
    nodes = np.arange(K1)[None, :]
    last = np.minimum(stop, K1) - 1
    idx = np.where(nodes <= last[:, None], nodes, last[:, None])
    return np.take_along_axis(traj, idx[:, :, None], axis=1)


def _summary(traj, exits, nonfinite, dws, cfg):
    return dict(terminal=traj[:, -1].copy(), sup=np.linalg.norm(traj, axis=2).max(axis=1),
                exits=exits, nonfinite=nonfinite,
                traj=traj if cfg.record_paths else None,
                dws=dws if cfg.record_increments else None)


def _merge_summaries(parts, times):
    def cat(key):
        if parts[0][key] is None:
            return None
        return np.concatenate([p[key] for p in parts])
    return PathBatch(times=times, terminal_states=cat("terminal"), sup_norms=cat("sup"),
                     exit_steps=cat("exits"), nonfinite=cat("nonfinite"),
                     trajectories=cat("traj"), increments=cat("dws"),
                     flags=("grid-sup (downward-biased)",))


def simulate_perturbed(model: ItoModel, cfg: SimConfig, substeps: int = 4,
                       powers=(2.0,)) -> PerturbedBatch:
    """Exact-transition path against the scheme path on the same Brownian motion.

    The scheme is read as the Ito process ``dY = a_t dt + b_t dW`` with
    coefficients frozen at the left grid node.  Between nodes ``Y`` is
    evaluated on ``substeps`` equal sub-intervals by sampling the Brownian
    bridge, because the coefficient mismatch vanishes at the nodes themselves.
    """
    transition = model.oracles.exact_transition
    if transition is None:
        raise NotEvaluable(f"model {model.name} has no exact transition sampler")
    if substeps < 1:
        raise InvalidParameter("substeps must be >= 1")
    powers = tuple(float(r) for r in powers)
    x0 = _start(model, None)
    times = cfg.times
    h, K, m, d = cfg.h, cfg.n_steps, model.m, model.d
    fracs = np.linspace(0.0, 1.0, substeps + 1)
    dt_sub = h / substeps

    def run(lo, hi):
        n = hi - lo
        ids = range(lo, hi)
        dws = _increments(cfg, m, lo, hi)
        aux = path_normals(cfg.master_seed, ids, STREAM_AUX, K * m).reshape(n, K, m)
        bridge = path_normals(cfg.master_seed, ids, STREAM_BRIDGE,
                              K * max(substeps - 1, 0) * m).reshape(n, K, max(substeps - 1, 0), m)
        X = np.tile(x0, (n, 1))
        Y = X.copy()
        stop = np.full(n, K + 1, dtype=np.int64)
        diff_sup = np.zeros(n)
        int_a = np.zeros(n)
        int_b = np.zeros(n)
        sums = {r: np.zeros((2, K, substeps + 1)) for r in powers}
        for k in range(K):
            alive = stop == K + 1
            t = times[k]
            a, b = scheme_coefficients(model, cfg.scheme, t, Y, h)
            # Brownian path at the sub-nodes, conditioned on the step increment
            w = np.zeros((n, substeps + 1, m))
            w[:, -1] = dws[:, k]
            for j in range(1, substeps):
                u, s = fracs[j - 1] * h, fracs[j] * h
                frac = (s - u) / (h - u)
                sd = math.sqrt((s - u) * (h - s) / (h - u))
                w[:, j] = w[:, j - 1] + frac * (dws[:, k] - w[:, j - 1]) + sd * bridge[:, k, j - 1]
            A = np.empty((n, substeps + 1))
            B = np.empty((n, substeps + 1))
            for j in range(substeps + 1):
                ts = t + fracs[j] * h
                Ys = Y + a * (fracs[j] * h) + np.einsum("nij,nj->ni", b, w[:, j])
                A[:, j] = np.linalg.norm(model.mu(ts, Ys) - a, axis=1)
                db = model.sigma(ts, Ys) - b
                B[:, j] = np.sqrt(np.einsum("nij,nij->n", db, db))
            A[~alive] = 0.0
            B[~alive] = 0.0
            int_a += np.trapezoid(A ** 2, dx=dt_sub, axis=1)
            int_b += np.trapezoid(B ** 2, dx=dt_sub, axis=1)
            for r in powers:
                sums[r][0, k] = (A ** r).sum(axis=0)
                sums[r][1, k] = (B ** r).sum(axis=0)
            Y_new = Y + a * h + np.einsum("nij,nj->ni", b, dws[:, k])
            X_new = transition(t, h, X, dws[:, k], aux[:, k])
            finite = np.all(np.isfinite(Y_new), axis=1) & np.all(np.isfinite(X_new), axis=1)
            if not finite[alive].all():
                _check_nonfinite(cfg, alive & ~finite, lo)
            inside = finite & model.domain(np.where(finite[:, None], Y_new, 0.0)) \
                & model.domain(np.where(finite[:, None], X_new, 0.0))
            leaving = alive & ~inside
            stop[leaving] = k + 1
            moving = alive & inside
            X[moving] = X_new[moving]
            Y[moving] = Y_new[moving]
            diff_sup = np.maximum(diff_sup, np.linalg.norm(X - Y, axis=1))
        return dict(diff_terminal=np.linalg.norm(X - Y, axis=1), diff_sup=diff_sup,
                    int_a=int_a, int_b=int_b, sums=sums, stop=stop, X=X, Y=Y)

    parts = _map_chunks(run, cfg)
    cat = lambda key: np.concatenate([p[key] for p in parts])  # noqa: E731
    means = {r: sum(p["sums"][r] for p in parts) / cfg.n_paths for r in powers}
    return PerturbedBatch(
        times=times, substeps=substeps,
        diff_terminal=cat("diff_terminal"), diff_sup=cat("diff_sup"),
        drift_mismatch_integral=cat("int_a"), diffusion_mismatch_integral=cat("int_b"),
        mismatch_means=means, stop_steps=cat("stop"),
        exact_terminal=cat("X"), scheme_terminal=cat("Y"),
    )


def dump_trajectories(batch: PathBatch, path) -> None:
    """Write recorded trajectories as CSV rows ``path, step, t, x_1..x_d``.

    Output grows as ``n_paths * (n_steps + 1)`` rows; use on small batches.
    """
    if batch.trajectories is None:
        raise InvalidParameter("batch has no recorded trajectories (set record_paths)")
    traj = batch.trajectories
    d = traj.shape[2]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "step", "t"] + [f"x_{i + 1}" for i in range(d)])
        for i in range(traj.shape[0]):
            for k, t in enumerate(batch.times):
                writer.writerow([i, k, repr(float(t))] + [repr(float(v)) for v in traj[i, k]])
