"""Ground-truth graphs, perturbed observations and polynomial graph filters."""

from __future__ import annotations

from dataclasses import dataclass

import networkx as nx
import numpy as np

MAX_GRAPH_TRIES = 100
MAX_FILTER_TRIES = 200
TRACE_FLOOR = 1e-3


class GraphModelError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class Gso:
    """Symmetric, hollow, nonnegative adjacency matrix used as graph shift operator."""

    entries: np.ndarray
    kind: str = "adjacency"

    def __post_init__(self):
        a = _frozen(self.entries)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise GraphModelError(f"GSO must be square, got shape {a.shape}")
        if not np.array_equal(a, a.T):
            raise GraphModelError("GSO must be symmetric")
        if np.any(np.diag(a) != 0):
            raise GraphModelError("GSO must be hollow")
        if np.any(a < 0):
            raise GraphModelError("GSO entries must be nonnegative")
        if self.kind != "adjacency":
            raise GraphModelError(f"unsupported GSO kind {self.kind!r}")
        object.__setattr__(self, "entries", a)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def n_edges(self) -> int:
        return int(np.count_nonzero(np.triu(self.entries, 1)))

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


@dataclass(frozen=True)
class PerturbationSpec:
    ratio: float
    seed: object = None
    kind: str = "rewire"

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise GraphModelError(f"perturbation ratio must lie in [0, 1], got {self.ratio}")
        if self.kind != "rewire":
            raise GraphModelError(f"unsupported perturbation kind {self.kind!r}")


@dataclass(frozen=True)
class FilterPair:
    """Polynomial graph filter ``H = sum_r h_r S^r`` together with its inverse.

    ``inverse`` is the raw ``H^{-1}``; ``trace_scale`` is ``Tr(H^{-1})`` and
    ``inverse_normalized`` the unit-trace inverse used as reference for the
    solvers.
    """

    coeffs: np.ndarray
    forward: np.ndarray
    inverse: np.ndarray
    trace_scale: float

    def __post_init__(self):
        for name in ("coeffs", "forward", "inverse"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def inverse_normalized(self) -> np.ndarray:
        return self.inverse / self.trace_scale

    @classmethod
    def from_coeffs(cls, s, coeffs) -> "FilterPair":
        forward = filter_matrix(s, coeffs)
        inverse = np.linalg.inv(forward)
        return cls(np.asarray(coeffs, dtype=float), forward, inverse, float(np.trace(inverse)))


def generate_small_world(n: int, mean_degree: int = 4, rewire_prob: float = 0.2, seed=None) -> Gso:
    """Sample a connected Watts-Strogatz graph as a 0/1 adjacency matrix.

    Disconnected draws are discarded and regenerated from the next seed of the
    stream; after ``MAX_GRAPH_TRIES`` failures a ``GraphModelError`` is raised.
    """
    if n < 3:
        raise GraphModelError("small-world graphs need n >= 3")
    if not 0 < mean_degree < n or mean_degree % 2:
        raise GraphModelError(f"mean_degree must be even and in (0, n), got {mean_degree}")
    if not 0.0 <= rewire_prob <= 1.0:
        raise GraphModelError(f"rewire_prob must lie in [0, 1], got {rewire_prob}")

    rng = _rng(seed)
    for _ in range(MAX_GRAPH_TRIES):
        g = nx.watts_strogatz_graph(n, mean_degree, rewire_prob, seed=int(rng.integers(2**31)))
        if nx.is_connected(g):
            a = nx.to_numpy_array(g, nodelist=range(n), dtype=float)
            return Gso(a)
    raise GraphModelError(f"no connected small-world graph after {MAX_GRAPH_TRIES} draws")


def perturb_rewire(s: Gso, spec: PerturbationSpec) -> Gso:
    """Delete ``round(ratio * E)`` existing edges and add as many absent ones.

    Deleted and added pairs are sampled uniformly without replacement from the
    upper triangle of the input, so the edge count is preserved and a deleted
    edge is never re-added.
    """
    a = np.asarray(s.entries)
    n = a.shape[0]
    iu, ju = np.triu_indices(n, 1)
    present = a[iu, ju] != 0
    n_edges = int(present.sum())
    n_absent = present.size - n_edges
    if n_edges == 0:
        raise GraphModelError("cannot rewire an empty graph")
    if n_absent == 0:
        raise GraphModelError("cannot rewire a complete graph")

    p = int(np.floor(spec.ratio * n_edges + 0.5))
    if p == 0:
        return s
    if p > n_absent:
        raise GraphModelError(f"need {p} absent pairs to add, graph has only {n_absent}")

    rng = _rng(spec.seed)
    drop = rng.choice(np.flatnonzero(present), size=p, replace=False)
    add = rng.choice(np.flatnonzero(~present), size=p, replace=False)

    out = a.copy()
    out[iu[drop], ju[drop]] = out[ju[drop], iu[drop]] = 0.0
    out[iu[add], ju[add]] = out[ju[add], iu[add]] = 1.0
    return Gso(out)


def filter_matrix(s, coeffs) -> np.ndarray:
    """Horner evaluation of ``sum_r coeffs[r] * S^r``."""
    s = np.asarray(s, dtype=float)
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.ndim != 1 or coeffs.size == 0:
        raise GraphModelError("filter needs at least one coefficient")
    eye = np.eye(s.shape[0])
    h = coeffs[-1] * eye
    for c in coeffs[-2::-1]:
        h = h @ s + c * eye
    return h


def synthesize_filter(s: Gso, order: int = 3, seed=None, cond_limit: float = 1e4) -> FilterPair:
    """Draw filter taps uniformly on [0, 1] until the filter is safely invertible.

    ``order`` is the number of taps (degrees 0 .. order-1).
    """
    n = s.n
    if not 1 <= order <= n:
        raise GraphModelError(f"filter order must lie in [1, {n}], got {order}")
    if cond_limit <= 1:
        raise GraphModelError("cond_limit must exceed 1")

    rng = _rng(seed)
    for _ in range(MAX_FILTER_TRIES):
        coeffs = rng.uniform(0.0, 1.0, size=order)
        forward = filter_matrix(s.entries, coeffs)
        if np.linalg.cond(forward) > cond_limit:
            continue
        inverse = np.linalg.inv(forward)
        trace = float(np.trace(inverse))
        if abs(trace) < TRACE_FLOOR:
            continue
        return FilterPair(coeffs, forward, inverse, trace)
    raise GraphModelError(f"no filter with cond <= {cond_limit:g} after {MAX_FILTER_TRIES} draws")


def commutator(a, b) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape != b.shape:
        raise ValueError(f"commutator needs equal square matrices, got {a.shape} and {b.shape}")
    return a @ b - b @ a
