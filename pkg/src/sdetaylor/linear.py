"""Exact-distribution one-step simulation of linear stationary systems

    dx = (A x + B u(t)) dt + F dw,   y = H x,

via x' = e^(A dt) x + A^{-1}(e^(A dt) - I) B u + M xi, where M M^T equals the
one-step noise covariance D_f(dt) (the solution of dD/dt = A D + D A^T + F F^T,
D(0) = 0) and xi is standard normal.  D_f comes from the Van Loan
augmented-exponential construction; M from a cyclic Jacobi eigendecomposition
with eigenvalue clamping at -1e-12.  The input u is held constant over each
step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from . import expr
from .rng import NormalStreams

__all__ = [
    "LinearModel",
    "LinearPrecomp",
    "LinearError",
    "mat_exp",
    "input_matrix",
    "covariance_Df",
    "jacobi_eigh",
    "noise_factor",
    "precompute",
    "step_linear",
    "simulate_linear",
    "LinearEnsembleResult",
]

_CLAMP = -1e-12


class LinearError(Exception):
    pass


@dataclass(frozen=True)
class LinearModel:
    A: tuple
    B: tuple
    F: tuple
    H: tuple
    u: tuple       # k expressions over the symbol t
    x0: tuple

    @classmethod
    def from_data(cls, A, B, F, H, u, x0):
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        F = np.asarray(F, dtype=float)
        H = np.asarray(H, dtype=float).reshape(-1)
        n = A.shape[0]
        if A.shape != (n, n):
            raise LinearError("A must be square")
        if B.ndim != 2 or B.shape[0] != n:
            raise LinearError("B must be n x k")
        if F.ndim != 2 or F.shape[0] != n:
            raise LinearError("F must be n x m")
        if H.shape[0] != n:
            raise LinearError("H must have n entries")
        if len(x0) != n:
            raise LinearError("x0 must have n entries")
        if len(u) != B.shape[1]:
            raise LinearError("u must have one component per column of B")
        u_exprs = tuple(expr.parse(s, ["t"]) if isinstance(s, str) else s for s in u)
        return cls(
            A=tuple(map(tuple, A)),
            B=tuple(map(tuple, B)),
            F=tuple(map(tuple, F)),
            H=tuple(H),
            u=u_exprs,
            x0=tuple(float(v) for v in x0),
        )

    @property
    def n(self):
        return len(self.A)

    @property
    def m(self):
        return len(self.F[0])

    @property
    def k(self):
        return len(self.B[0])

    def arrays(self):
        return (
            np.asarray(self.A, dtype=float),
            np.asarray(self.B, dtype=float),
            np.asarray(self.F, dtype=float),
            np.asarray(self.H, dtype=float),
        )

    def input_at(self, t):
        return np.array([expr.evaluate(e, {"t": t}) for e in self.u])


def mat_exp(A, delta):
    """Matrix exponential e^(A delta) (scaling-and-squaring Pade)."""
    A = np.asarray(A, dtype=float)
    out = expm(A * delta)
    if not np.all(np.isfinite(out)):
        raise LinearError("matrix exponential overflowed")
    return out


def input_matrix(A, B, delta):
    """A^{-1}(e^(A delta) - I) B, with the convergent series
    delta (I + A delta/2! + A^2 delta^2/3! + ...) B when A is singular."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n = A.shape[0]
    try:
        cond_ok = np.linalg.cond(A) < 1e12
    except np.linalg.LinAlgError:
        cond_ok = False
    if cond_ok:
        return np.linalg.solve(A, mat_exp(A, delta) - np.eye(n)) @ B
    total = np.eye(n)
    term = np.eye(n)
    for j in range(2, 60):
        term = term @ (A * delta) / j
        total = total + term
        if np.max(np.abs(term)) < 1e-18:
            break
    return delta * total @ B


def covariance_Df(A, F, delta):
    """One-step noise covariance by the Van Loan augmented exponential."""
    A = np.asarray(A, dtype=float)
    F = np.asarray(F, dtype=float)
    n = A.shape[0]
    Q = F @ F.T
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = -A
    M[:n, n:] = Q
    M[n:, n:] = A.T
    E = expm(M * delta)
    F3 = E[n:, n:]
    G1 = E[:n, n:]
    D = F3.T @ G1
    return 0.5 * (D + D.T)


def jacobi_eigh(D, tol_factor=1e-13, max_sweeps=64):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Sweeps stop once the off-diagonal Frobenius norm drops below
    tol_factor * ||D||_F.  Returns (eigenvalues, column eigenvectors).
    """
    A = np.array(D, dtype=float, copy=True)
    n = A.shape[0]
    V = np.eye(n)
    norm = np.linalg.norm(A)
    if norm == 0.0:
        return np.zeros(n), V
    for _ in range(max_sweeps):
        off = math.sqrt(max(0.0, np.sum(A * A) - np.sum(np.diag(A) ** 2)))
        if off <= tol_factor * norm:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(1.0, theta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                rot = np.array([[c, s], [-s, c]])
                idx = [p, q]
                A[idx, :] = rot.T @ A[idx, :]
                A[:, idx] = A[:, idx] @ rot
                V[:, idx] = V[:, idx] @ rot
    return np.diag(A).copy(), V


def noise_factor(D):
    """Factor M with M M^T = D from the spectral decomposition of D.

    Eigenvalues in [-1e-12, 0) are clamped to zero; anything lower, or a
    visibly asymmetric input, is an error.
    """
    D = np.asarray(D, dtype=float)
    scale = max(1.0, float(np.max(np.abs(D))))
    if np.max(np.abs(D - D.T)) > 1e-10 * scale:
        raise LinearError("covariance matrix is not symmetric")
    lam, S = jacobi_eigh(0.5 * (D + D.T))
    if np.any(lam < _CLAMP * scale):
        raise LinearError(f"covariance has negative eigenvalue {lam.min():.3e}")
    lam = np.clip(lam, 0.0, None)
    return S @ np.diag(np.sqrt(lam))


@dataclass
class LinearPrecomp:
    delta: float
    phi: np.ndarray      # e^(A dt)
    gamma: np.ndarray    # A^{-1}(e^(A dt) - I) B
    Df: np.ndarray
    M: np.ndarray

    def __post_init__(self):
        resid = np.max(np.abs(self.M @ self.M.T - self.Df))
        if resid > 1e-10 * max(1.0, float(np.max(np.abs(self.Df)))):
            raise LinearError("noise factor does not reproduce the covariance")


def precompute(model, delta):
    A, B, F, _ = model.arrays()
    Df = covariance_Df(A, F, delta)
    return LinearPrecomp(
        delta=delta,
        phi=mat_exp(A, delta),
        gamma=input_matrix(A, B, delta),
        Df=Df,
        M=noise_factor(Df),
    )


def step_linear(precomp, x, u_p, normals):
    """x' = Phi x + Gamma u_p + M xi for (paths, n) states."""
    x = np.atleast_2d(x)
    out = x @ precomp.phi.T + precomp.gamma @ np.asarray(u_p)
    return out + np.atleast_2d(normals) @ precomp.M.T


@dataclass
class LinearEnsembleResult:
    times: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    output_mean: np.ndarray
    output_variance: np.ndarray
    trajectories: list = field(default_factory=list)


def simulate_linear(model, delta, n_steps, paths, seed, keep_trajectories=0):
    """Iterate the exact one-step recursion; u is held over each step.

    Returns per-time mean/sample-variance of the state and of the scalar
    output y = H x, plus optionally the first few trajectories.
    """
    if delta <= 0 or n_steps < 1 or paths < 1:
        raise LinearError("need delta > 0, n_steps >= 1, paths >= 1")
    pre = precompute(model, delta)
    _, _, _, H = model.arrays()
    n = model.n
    streams = NormalStreams(seed, paths)
    x = np.tile(np.asarray(model.x0, dtype=float), (paths, 1))
    nt = n_steps + 1
    mean = np.empty((nt, n))
    var = np.empty((nt, n))
    ymean = np.empty(nt)
    yvar = np.empty(nt)
    keep = min(keep_trajectories, paths)
    kept = np.empty((nt, keep, n)) if keep else None

    def record(idx, states):
        mean[idx] = states.mean(axis=0)
        var[idx] = states.var(axis=0, ddof=1) if paths > 1 else 0.0
        y = states @ H
        ymean[idx] = y.mean()
        yvar[idx] = y.var(ddof=1) if paths > 1 else 0.0
        if keep:
            kept[idx] = states[:keep]

    record(0, x)
    for p in range(n_steps):
        u_p = model.input_at(p * delta)
        xi = streams.normals(n)
        x = step_linear(pre, x, u_p, xi)
        record(p + 1, x)
    times = np.arange(nt) * delta
    trajectories = []
    if keep:
        for i in range(keep):
            trajectories.append((times, kept[:, i, :].copy()))
    return LinearEnsembleResult(
        times=times,
        mean=mean,
        variance=var,
        output_mean=ymean,
        output_variance=yvar,
        trajectories=trajectories,
    )
