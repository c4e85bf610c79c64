"""One-step strong Taylor steppers (orders 0.5..3.0, both calculi) and
path/ensemble simulation drivers.

A step adds, to the current state, every printed term of the selected
scheme: compiled coefficient fields evaluated at (y, t) times per-term
combinations of iterated-integral values and powers of dt.  Truncation
levels are selected once per run (dt is fixed); one Gaussian draw matrix per
step feeds every integral; paths evolve in parallel as (paths, n) arrays
with per-path random streams.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import accuracy, integrals, operators
from .integrals import build_integral_set, draw
from .rng import GAMMA, NormalStreams

__all__ = [
    "SchemeConfig",
    "Trajectory",
    "EnsembleResult",
    "StrongErrorReport",
    "SchemeError",
    "SchemeDivergenceError",
    "step",
    "simulate_path",
    "simulate_ensemble",
    "strong_error_study",
    "order_sweep_errors",
]


class SchemeError(Exception):
    pass


class SchemeDivergenceError(SchemeError):
    def __init__(self, t, step_index):
        super().__init__(f"non-finite state at t={t} (step {step_index})")
        self.t = t
        self.step_index = step_index


@dataclass(frozen=True)
class SchemeConfig:
    order: float
    calculus: str
    dt: float
    T: float
    accuracy_constant: float = 1.0
    seed: int = 0
    paths: int = 1

    def __post_init__(self):
        if self.order not in operators.SUPPORTED_ORDERS:
            raise SchemeError(f"unsupported order {self.order}")
        if self.calculus not in ("ito", "stratonovich"):
            raise SchemeError(f"unsupported calculus {self.calculus!r}")
        if self.calculus == "stratonovich" and self.order < 1.0:
            raise SchemeError("stratonovich schemes start at order 1.0")
        if self.dt <= 0 or self.T <= 0:
            raise SchemeError("dt and T must be positive")
        n = self.T / self.dt
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise SchemeError("T must be a positive integer multiple of dt")
        if self.paths < 1:
            raise SchemeError("paths must be >= 1")

    @property
    def steps(self):
        return int(round(self.T / self.dt))


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (steps + 1, n)


@dataclass
class EnsembleResult:
    times: np.ndarray
    mean: np.ndarray       # (steps + 1, n), over non-diverged paths
    variance: np.ndarray   # sample variance, same shape
    diverged: int
    qset: accuracy.QSet
    trajectories: list = field(default_factory=list)


def step(fields, y, t, iset, delta):
    """Advance all paths one step; pure function of the integral set."""
    cols = tuple(y[:, j] for j in range(y.shape[1]))
    out = y.copy()
    for word, coef, dpow in fields.tails:
        out += float(coef) * delta**dpow * fields.eval(word, (), cols, t)
    m = fields.model.m
    for term in fields.terms:
        for ituple in itertools.product(range(1, m + 1), repeat=term.arity):
            factor = None
            for weights, coef, dpow in term.parts:
                part = float(coef) * delta**dpow * iset.get(weights, ituple)
                factor = part if factor is None else factor + part
            out += fields.eval(term.word, ituple, cols, t) * factor[:, None]
    return out


def _draw_jmax(qset, m):
    """Largest basis degree any series needs; the (0,0) series is skipped
    entirely when there is a single noise component (closed diagonal form)."""
    jmax = 2
    for w, q in qset.levels.items():
        if w == (0, 0) and m == 1:
            continue
        jmax = max(jmax, q)
    return jmax


class _Run:
    def __init__(self, model, config, store):
        self.model = model
        self.config = config
        self.store = store
        self.fields = operators.build_scheme_fields(model, config.order, config.calculus)
        self.qset = accuracy.select_q(
            config.order, config.calculus, config.dt, config.accuracy_constant, store
        )
        self.jmax = _draw_jmax(self.qset, model.m)
        self.tensors = integrals._TensorCache(store)

    def integral_set(self, draws):
        return build_integral_set(
            self.config.order,
            self.config.calculus,
            draws,
            self.config.dt,
            self.qset,
            self.store,
            _tensors=self.tensors,
        )


def simulate_path(model, config, store, path_index=0):
    """Simulate a single trajectory; raises on divergence.

    The result is bit-identical to path `path_index` of an ensemble with the
    same seed, whatever the ensemble size.
    """
    run = _Run(model, config, store)
    streams = NormalStreams(config.seed, 1, first_path=path_index)
    n = model.n
    y = np.tile(np.asarray(model.x0, dtype=float), (1, 1)).reshape(1, n)
    states = np.empty((config.steps + 1, n))
    states[0] = y[0]
    for p in range(config.steps):
        t = p * config.dt
        draws = draw(streams, model.m, run.jmax)
        iset = run.integral_set(draws)
        y = step(run.fields, y, t, iset, config.dt)
        if not np.all(np.isfinite(y)):
            raise SchemeDivergenceError(t + config.dt, p)
        states[p + 1] = y[0]
    times = np.arange(config.steps + 1) * config.dt
    return Trajectory(times, states)


def simulate_ensemble(model, config, store, keep_trajectories=0):
    """Simulate config.paths independent trajectories in parallel.

    Diverged paths are frozen at their last finite state, excluded from the
    reported moments, and counted.  Moments are per-time, per-component mean
    and sample variance over the surviving paths.
    """
    run = _Run(model, config, store)
    streams = NormalStreams(config.seed, config.paths)
    n, paths = model.n, config.paths
    y = np.tile(np.asarray(model.x0, dtype=float), (paths, 1))
    alive = np.ones(paths, dtype=bool)
    nt = config.steps + 1
    mean = np.empty((nt, n))
    var = np.empty((nt, n))
    keep = min(keep_trajectories, paths)
    kept = np.empty((nt, keep, n)) if keep else None

    def record(idx, states):
        live = states[alive]
        if live.size:
            mean[idx] = live.mean(axis=0)
            var[idx] = live.var(axis=0, ddof=1) if live.shape[0] > 1 else 0.0
        else:
            mean[idx] = np.nan
            var[idx] = np.nan
        if keep:
            kept[idx] = states[:keep]

    record(0, y)
    for p in range(config.steps):
        t = p * config.dt
        draws = draw(streams, model.m, run.jmax)
        iset = run.integral_set(draws)
        ynext = step(run.fields, y, t, iset, config.dt)
        finite = np.isfinite(ynext).all(axis=1)
        if not np.all(finite):
            ynext[~finite] = y[~finite]
            alive &= finite
        y = ynext
        record(p + 1, y)
    times = np.arange(nt) * config.dt
    trajectories = []
    if keep:
        for i in range(keep):
            trajectories.append(Trajectory(times, kept[:, i, :].copy()))
    return EnsembleResult(
        times=times,
        mean=mean,
        variance=var,
        diverged=int(paths - alive.sum()),
        qset=run.qset,
        trajectories=trajectories,
    )


@dataclass
class StrongErrorReport:
    dts: list
    errors: list          # mean Euclidean terminal error per dt
    slope: float
    ref_dt: float
    ref_order: float
    per_path: dict = field(default_factory=dict)  # dt -> (paths,) errors


def _coupled_coarse_draws(zeta0_fine, substream, chunk, jmax, ratio):
    """ζ0 aggregated from the fine Brownian increments of one coarse cell,
    higher degrees drawn fresh from the coarse substream."""
    paths, m = zeta0_fine.shape[1], zeta0_fine.shape[2]
    z0 = zeta0_fine[chunk].sum(axis=0) / math.sqrt(ratio)
    higher = substream.normals(m * jmax).reshape(paths, m, jmax)
    zeta = np.concatenate([z0[:, :, None], higher], axis=2)
    return integrals.GaussianDraws(zeta)


def strong_error_study(
    model,
    config,
    dt_list,
    ref_dt,
    store,
    ref_order=1.0,
    ref_accuracy_constant=None,
):
    """Terminal strong errors against a fine-grid reference, plus the fitted
    log-log slope.

    One Brownian path per sample is shared across grids through its fine
    increments: each coarse cell's ζ0 is the normalized increment sum, while
    higher-degree ζ are independent between grids (and independent of the
    reference's).  All orders of accuracy beyond the increment coupling ride
    on the reference being much finer than every tested dt.
    """
    orders = [config.order]
    per_order = order_sweep_errors(
        model, orders, config, dt_list, ref_dt, store, ref_order, ref_accuracy_constant
    )
    errors = [float(np.mean(per_order[config.order][dt])) for dt in dt_list]
    slope = _fit_slope(dt_list, errors)
    report = StrongErrorReport(
        dts=list(dt_list),
        errors=errors,
        slope=slope,
        ref_dt=ref_dt,
        ref_order=ref_order,
        per_path={dt: per_order[config.order][dt] for dt in dt_list},
    )
    return report


def order_sweep_errors(
    model,
    orders,
    config,
    dt_list,
    ref_dt,
    store,
    ref_order=1.0,
    ref_accuracy_constant=None,
):
    """Per-path terminal errors for several scheme orders under common random
    numbers: every order sees identical coarse draws, and every grid shares
    the reference path's Brownian increments through ζ0 aggregation.

    Returns {order: {dt: (paths,) array of |x_ref(T) - y(T)|}}.
    """
    for dt in dt_list:
        ratio = dt / ref_dt
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise SchemeError(f"ref_dt must divide dt={dt}")
    n_ref = round(config.T / ref_dt)
    if abs(config.T / ref_dt - n_ref) > 1e-9:
        raise SchemeError("T must be an integer multiple of ref_dt")
    paths = config.paths
    ref_c = ref_accuracy_constant or config.accuracy_constant

    # reference pass, recording every fine step's zeta0 plane
    ref_config = SchemeConfig(
        order=ref_order,
        calculus=config.calculus,
        dt=ref_dt,
        T=config.T,
        accuracy_constant=ref_c,
        seed=config.seed,
        paths=paths,
    )
    ref_run = _Run(model, ref_config, store)
    streams = NormalStreams(config.seed, paths)
    y_ref = np.tile(np.asarray(model.x0, dtype=float), (paths, 1))
    zeta0_fine = np.empty((n_ref, paths, model.m))
    for p in range(n_ref):
        draws = draw(streams, model.m, ref_run.jmax)
        zeta0_fine[p] = draws.zeta[:, :, 0]
        iset = ref_run.integral_set(draws)
        y_ref = step(ref_run.fields, y_ref, p * ref_dt, iset, ref_dt)
    if not np.all(np.isfinite(y_ref)):
        raise SchemeDivergenceError(config.T, n_ref - 1)

    out = {order: {} for order in orders}
    for dt_index, dt in enumerate(dt_list):
        ratio = round(dt / ref_dt)
        n_coarse = round(config.T / dt)
        runs = {}
        states = {}
        jmax = 2
        for order in orders:
            cfg = SchemeConfig(
                order=order,
                calculus=config.calculus,
                dt=dt,
                T=config.T,
                accuracy_constant=config.accuracy_constant,
                seed=config.seed,
                paths=paths,
            )
            runs[order] = _Run(model, cfg, store)
            states[order] = np.tile(np.asarray(model.x0, dtype=float), (paths, 1))
            jmax = max(jmax, runs[order].jmax)
        sub_seed = (config.seed ^ int(GAMMA)) + 7919 * (dt_index + 1)
        substream = NormalStreams(sub_seed & 0xFFFFFFFFFFFFFFFF, paths)
        for p in range(n_coarse):
            chunk = slice(p * ratio, (p + 1) * ratio)
            draws = _coupled_coarse_draws(zeta0_fine, substream, chunk, jmax, ratio)
            t = p * dt
            for order in orders:
                iset = runs[order].integral_set(draws)
                states[order] = step(runs[order].fields, states[order], t, iset, dt)
        for order in orders:
            err = np.linalg.norm(states[order] - y_ref, axis=1)
            out[order][dt] = err
    return out


def _fit_slope(dts, errors):
    x = np.log(np.asarray(dts, dtype=float))
    y = np.log(np.asarray(errors, dtype=float))
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)
