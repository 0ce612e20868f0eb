"""Proximal operators and exact subproblem solvers composed by the alternating solvers.

Hot kernels exist twice: a fused-loop numba version and a vectorized numpy
version. ``rbdg._accel.NUMBA_ENABLED`` decides which one the public functions
dispatch to.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla

from ._accel import njit, pick

RIDGE = 1e-10
_SINGULAR_PIVOT = 1e-13


class SingularSystemError(np.linalg.LinAlgError):
    pass


class DivergenceError(FloatingPointError):
    pass


# ---------------------------------------------------------------------------
# entrywise shrinkage
# ---------------------------------------------------------------------------


def soft_threshold(v, t, weights=None):
    """Entrywise ``sign(v) * max(|v| - t*w, 0)``."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("threshold must be nonnegative")
    v = np.asarray(v, dtype=float)
    thr = t if weights is None else t * np.asarray(weights, dtype=float)
    if weights is not None and np.shape(weights) != v.shape:
        raise ValueError(f"weights shape {np.shape(weights)} != value shape {v.shape}")
    return np.sign(v) * np.maximum(np.abs(v) - thr, 0.0)


def _dprox_np(v, a, b, anchor):
    # kinks at 0 (weight a) and anchor (weight b), sorted as p1 <= p2
    lo_is_zero = anchor >= 0
    p1 = np.where(lo_is_zero, 0.0, anchor)
    p2 = np.where(lo_is_zero, anchor, 0.0)
    w1 = np.where(lo_is_zero, a, b)
    w2 = np.where(lo_is_zero, b, a)
    below = v + w1 + w2
    above = v - w1 - w2
    inner = np.minimum(np.maximum(v - w1 + w2, p1), p2)
    return np.where(above > p2, above, np.where(below < p1, below, inner))


@njit
def _dprox_scalar(v, a, b, anchor):
    if anchor >= 0.0:
        p1, p2, w1, w2 = 0.0, anchor, a, b
    else:
        p1, p2, w1, w2 = anchor, 0.0, b, a
    above = v - w1 - w2
    if above > p2:
        return above
    below = v + w1 + w2
    if below < p1:
        return below
    inner = v - w1 + w2
    if inner < p1:
        return p1
    if inner > p2:
        return p2
    return inner


@njit
def _dprox_nb(v, a, b, anchor):
    out = np.empty_like(v)
    fv, fa, fb, fc, fo = v.ravel(), a.ravel(), b.ravel(), anchor.ravel(), out.ravel()
    for i in range(fv.size):
        fo[i] = _dprox_scalar(fv[i], fa[i], fb[i], fc[i])
    return out


def double_l1_prox(v, a, b, anchor):
    """Entrywise ``argmin_s a|s| + b|s - anchor| + (s - v)^2 / 2``.

    Closed form of a two-kink shrinkage with breakpoints at 0 and ``anchor``.
    Scalars and arrays broadcast against each other.
    """
    if np.any(np.asarray(a) < 0) or np.any(np.asarray(b) < 0):
        raise ValueError("prox weights must be nonnegative")
    if np.ndim(v) == 0 and np.ndim(a) == 0 and np.ndim(b) == 0 and np.ndim(anchor) == 0:
        return float(_dprox_scalar(float(v), float(a), float(b), float(anchor)))
    arrs = np.broadcast_arrays(*(np.asarray(z, dtype=float) for z in (v, a, b, anchor)))
    return pick(_dprox_nb, _dprox_np)(*(np.ascontiguousarray(z) for z in arrs))


# ---------------------------------------------------------------------------
# reweighting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReweightState:
    weights: np.ndarray | None = None
    epsilon: float = 1e-3
    rounds: int = 3

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("reweighting epsilon must be positive")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if not np.all(np.isfinite(w)) or np.any(w < 0):
                raise ValueError("weights must be finite and nonnegative")


def update_reweights(current, state: ReweightState) -> ReweightState:
    w = 1.0 / (np.abs(np.asarray(current, dtype=float)) + state.epsilon)
    return replace(state, weights=w)


# ---------------------------------------------------------------------------
# G block: equality-constrained least squares
# ---------------------------------------------------------------------------


def commutator_gram(s) -> np.ndarray:
    """Gram matrix ``A^T A`` of the row-major vectorized map ``G -> G S - S G``."""
    s = np.asarray(s, dtype=float)
    eye = np.eye(s.shape[0])
    return np.kron(eye, s @ s.T) - np.kron(s, s) - np.kron(s.T, s.T) + np.kron(s.T @ s, eye)


class GSubproblem:
    """Factorized KKT system of ``min ||G Y - X||^2 + gamma ||G S - S G||^2  s.t. Tr(G) = 1``.

    The system matrix depends only on ``(Y, S, gamma)``, so one factorization
    serves every X-update of a block-descent sweep.
    """

    def __init__(self, y, s, gamma: float):
        if gamma < 0:
            raise ValueError("gamma must be nonnegative")
        y = np.asarray(y, dtype=float)
        s = np.asarray(s, dtype=float)
        n = s.shape[0]
        if y.shape[0] != n or s.shape != (n, n):
            raise ValueError(f"Y {y.shape} does not conform with S {s.shape}")
        self.n = n
        self.y = y
        self.gamma = gamma
        nn = n * n
        self.comm = gamma * commutator_gram(s) if gamma else np.zeros((nn, nn))
        quad = np.kron(np.eye(n), y @ y.T) + self.comm
        kkt = np.zeros((nn + 1, nn + 1))
        kkt[:nn, :nn] = quad
        trace_row = np.eye(n).ravel()
        kkt[nn, :nn] = kkt[:nn, nn] = trace_row
        self.ridged = False
        self._lu = self._factor(kkt)
        if self._lu is None:
            kkt[:nn, :nn] += RIDGE * np.eye(nn)
            self.ridged = True
            self._lu = self._factor(kkt)
            if self._lu is None:
                raise SingularSystemError("KKT system singular even after ridge regularization")
        self.kkt = kkt

    @staticmethod
    def _factor(kkt):
        with warnings.catch_warnings():
            # singularity is detected from the pivots below
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu, piv = sla.lu_factor(kkt, check_finite=False)
        d = np.abs(np.diag(lu))
        if not np.all(np.isfinite(d)) or d.min() <= _SINGULAR_PIVOT * d.max():
            return None
        return lu, piv

    def rhs(self, x) -> np.ndarray:
        b = np.empty(self.n * self.n + 1)
        b[:-1] = (np.asarray(x) @ self.y.T).ravel()
        b[-1] = 1.0
        return b

    def solve(self, x) -> np.ndarray:
        sol = sla.lu_solve(self._lu, self.rhs(x), check_finite=False)
        self.multiplier = -sol[-1]
        return sol[:-1].reshape(self.n, self.n)

    def kkt_residual(self, g, x) -> float:
        """Max-abs residual of stationarity and trace feasibility at ``g``."""
        nn = self.n * self.n
        stat = self.kkt[:nn, :nn] @ np.ravel(g) - self.rhs(x)[:-1]
        t = np.eye(self.n).ravel()
        # least-squares multiplier for the trace constraint
        nu = -(t @ stat) / self.n
        return max(np.abs(stat + nu * t).max(), abs(np.trace(g) - 1.0))


def solve_g_subproblem(y, x, s, gamma: float) -> np.ndarray:
    """Exact minimizer of ``||G Y - X||^2 + gamma ||G S - S G||^2`` subject to ``Tr(G) = 1``."""
    x = np.asarray(x, dtype=float)
    if x.shape != np.shape(y):
        raise ValueError(f"X {x.shape} and Y {np.shape(y)} differ in shape")
    return GSubproblem(y, s, gamma).solve(x)


# ---------------------------------------------------------------------------
# S block: proximal gradient on  beta||W.S||_1 + lambda||S - Sbar||_1 + gamma||G S - S G||^2
# ---------------------------------------------------------------------------


def step2_objective(s, g, s_bar, beta, lam, gamma, weights=None) -> float:
    s = np.asarray(s)
    c = g @ s - s @ g
    l1 = np.abs(s) if weights is None else weights * np.abs(s)
    return float(beta * l1.sum() + lam * np.abs(s - s_bar).sum() + gamma * np.sum(c * c))


def _power_iter_np(g, sym, iters):
    n = g.shape[0]
    v = np.sin(1.0 + np.arange(n * n, dtype=np.float64)).reshape(n, n)
    if sym:
        v = v + v.T
        np.fill_diagonal(v, 0.0)
    v /= np.linalg.norm(v)
    gt = g.T.copy()
    est = 0.0
    for _ in range(iters):
        c = g @ v - v @ g
        w = gt @ c - c @ gt
        if sym:
            w = 0.5 * (w + w.T)
            np.fill_diagonal(w, 0.0)
        est = np.linalg.norm(w)
        if est == 0.0:
            return 0.0
        v = w / est
    return est


@njit
def _power_iter_nb(g, sym, iters):
    n = g.shape[0]
    v = np.sin(1.0 + np.arange(n * n, dtype=np.float64)).reshape(n, n)
    if sym:
        v = v + v.T
        for i in range(n):
            v[i, i] = 0.0
    v /= np.sqrt(np.sum(v * v))
    gt = np.ascontiguousarray(g.T)
    est = 0.0
    for _ in range(iters):
        c = g @ v - v @ g
        w = gt @ c - c @ gt
        if sym:
            for i in range(n):
                w[i, i] = 0.0
                for j in range(i + 1, n):
                    m = 0.5 * (w[i, j] + w[j, i])
                    w[i, j] = m
                    w[j, i] = m
        est = np.sqrt(np.sum(w * w))
        if est == 0.0:
            return 0.0
        v = w / est
    return est


def commutator_lipschitz(g, symmetric: bool = False, iters: int = 60) -> float:
    """Power-iteration estimate of the largest eigenvalue of ``S -> G^T C - C G^T``, ``C = GS - SG``.

    With ``symmetric=True`` the iteration is restricted to hollow symmetric S.
    """
    g = np.ascontiguousarray(g, dtype=float)
    return float(pick(_power_iter_nb, _power_iter_np)(g, bool(symmetric), iters))


def _s_objective_np(s, g, s_bar, wb, lam, gamma):
    c = g @ s - s @ g
    return np.sum(wb * np.abs(s)) + lam * np.sum(np.abs(s - s_bar)) + gamma * np.sum(c * c)


def _s_loop_np(s, g, s_bar, wb, lam, gamma, sym, step, max_iter, tol, trace):
    # monotone FISTA: momentum is dropped (restart) whenever the prox point
    # fails to decrease the objective; a failure right after a restart halves
    # the step instead.
    n = s.shape[0]
    gt = g.T.copy()
    x = s.copy()
    fx = _s_objective_np(x, g, s_bar, wb, lam, gamma)
    trace[0] = fx
    yk = x.copy()
    t = 1.0
    restarted = True
    quiet = 0
    it = 0
    while it < max_iter:
        c = g @ yk - yk @ g
        v = yk - step * (2.0 * gamma) * (gt @ c - c @ gt)
        if sym:
            v = 0.5 * (v + v.T)
        z = _dprox_np(v, step * wb, step * lam, s_bar)
        if sym:
            z[np.diag_indices(n)] = 0.0
        fz = _s_objective_np(z, g, s_bar, wb, lam, gamma)
        if not np.isfinite(fz):
            return x, it, -1.0
        if fz > fx:
            if restarted:
                step *= 0.5
                if step == 0.0:
                    break
            yk = x.copy()
            t = 1.0
            restarted = True
            continue
        tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        yk = z + ((t - 1.0) / tn) * (z - x)
        rel = (fx - fz) / max(fx, 1e-300)
        x, fx, t = z, fz, tn
        restarted = False
        it += 1
        trace[it] = fx
        quiet = quiet + 1 if rel < tol else 0
        if quiet >= 3:
            break
    return x, it, step


@njit
def _s_objective_nb(s, g, s_bar, wb, lam, gamma):
    c = g @ s - s @ g
    n = s.shape[0]
    out = 0.0
    for i in range(n):
        for j in range(n):
            out += wb[i, j] * abs(s[i, j]) + lam * abs(s[i, j] - s_bar[i, j]) + gamma * c[i, j] * c[i, j]
    return out


@njit
def _s_loop_nb(s, g, s_bar, wb, lam, gamma, sym, step, max_iter, tol, trace):
    n = s.shape[0]
    gt = np.ascontiguousarray(g.T)
    x = s.copy()
    fx = _s_objective_nb(x, g, s_bar, wb, lam, gamma)
    trace[0] = fx
    yk = x.copy()
    z = np.empty_like(x)
    t = 1.0
    restarted = True
    quiet = 0
    it = 0
    while it < max_iter:
        c = g @ yk - yk @ g
        grad = gt @ c - c @ gt
        tau = step * 2.0 * gamma
        for i in range(n):
            for j in range(n):
                if sym:
                    if i == j:
                        z[i, j] = 0.0
                        continue
                    if j < i:
                        z[i, j] = z[j, i]
                        continue
                    vv = 0.5 * (yk[i, j] + yk[j, i] - tau * (grad[i, j] + grad[j, i]))
                else:
                    vv = yk[i, j] - tau * grad[i, j]
                z[i, j] = _dprox_scalar(vv, step * wb[i, j], step * lam, s_bar[i, j])
        fz = _s_objective_nb(z, g, s_bar, wb, lam, gamma)
        if not np.isfinite(fz):
            return x, it, -1.0
        if fz > fx:
            if restarted:
                step *= 0.5
                if step == 0.0:
                    break
            yk[:, :] = x
            t = 1.0
            restarted = True
            continue
        tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        mom = (t - 1.0) / tn
        for i in range(n):
            for j in range(n):
                yk[i, j] = z[i, j] + mom * (z[i, j] - x[i, j])
        rel = (fx - fz) / max(fx, 1e-300)
        x[:, :] = z
        fx = fz
        t = tn
        restarted = False
        it += 1
        trace[it] = fx
        if rel < tol:
            quiet += 1
        else:
            quiet = 0
        if quiet >= 3:
            break
    return x, it, step


@dataclass(frozen=True)
class ProxGradInfo:
    objective: np.ndarray
    iterations: int
    step: float


def prox_gradient_s(s0, g, s_bar, beta: float, lam: float, gamma: float, weights_s=None,
                    max_iter: int = 2000, tol: float = 1e-10, symmetric: bool = True,
                    return_info: bool = False):
    """Minimize ``beta||W.S||_1 + lam||S - S_bar||_1 + gamma||G S - S G||_F^2``.

    Accelerated proximal gradient in its monotone form: the smooth commutator
    term takes steps of length ``1/L`` (``L`` from power iteration, halved if a
    plain step ever fails to descend), the two l1 terms are handled exactly by
    :func:`double_l1_prox`, and momentum restarts whenever the objective would
    increase. The recorded objective sequence is therefore nonincreasing.
    Stops after three consecutive relative decreases below ``tol``.

    With ``symmetric=True`` iterates stay hollow and symmetric: the prox is
    applied to the symmetrized gradient step, which is the exact projected
    step on that subspace.
    """
    if min(beta, lam, gamma) < 0:
        raise ValueError("regularization weights must be nonnegative")
    s0 = np.array(s0, dtype=float)
    if not np.all(np.isfinite(s0)):
        raise ValueError("initial S must be finite")
    g = np.ascontiguousarray(g, dtype=float)
    s_bar = np.ascontiguousarray(s_bar, dtype=float)
    wb = beta * (np.ones_like(s0) if weights_s is None else np.asarray(weights_s, dtype=float))
    if symmetric:
        wb = 0.5 * (wb + wb.T)
        s0 = 0.5 * (s0 + s0.T)
        np.fill_diagonal(s0, 0.0)
    wb = np.ascontiguousarray(wb)

    lip = 2.0 * gamma * commutator_lipschitz(g, symmetric) * 1.02
    if lip <= 0.0:
        # no smooth part: the infinite-step prox is the exact minimizer
        out = _exact_separable(s0, s_bar, wb, lam)
        if symmetric:
            np.fill_diagonal(out, 0.0)
        trace = np.array([step2_objective(s0, g, s_bar, 1.0, lam, 0.0, wb),
                          step2_objective(out, g, s_bar, 1.0, lam, 0.0, wb)])
        info = ProxGradInfo(trace, 1, np.inf)
        return (out, info) if return_info else out

    trace = np.empty(max_iter + 1)
    loop = pick(_s_loop_nb, _s_loop_np)
    s, it, step = loop(np.ascontiguousarray(s0), g, s_bar, wb, float(lam), float(gamma),
                       bool(symmetric), 1.0 / lip, int(max_iter), float(tol), trace)
    if step < 0:
        raise DivergenceError("non-finite objective in S proximal-gradient loop")
    info = ProxGradInfo(trace[: it + 1].copy(), it, step)
    return (s, info) if return_info else s


def _exact_separable(s0, s_bar, wb, lam):
    """Minimizer of ``sum wb|s| + lam|s - s_bar|`` entrywise (ties broken toward ``s0``)."""
    keep_anchor = lam >= wb
    at_anchor = np.where(lam > wb, s_bar, np.clip(s0, np.minimum(0, s_bar), np.maximum(0, s_bar)))
    return np.where(keep_anchor, at_anchor, 0.0)
