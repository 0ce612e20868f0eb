"""Monte-Carlo sweeps, grid search and CSV output.

Every realization is identified by ``(master_seed, sweep_index,
realization_index)``; the instance it generates does not depend on the method,
so all methods are compared on the same draws.
"""

from __future__ import annotations

import csv
import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .diffusion import GenerationConfig, diffuse, generate_sources
from .graph_model import (
    GraphModelError,
    PerturbationSpec,
    generate_small_world,
    perturb_rewire,
    synthesize_filter,
)
from .solver import Hyperparams, SolverError, normalize_ground_truth, rbdg_run, rbdh_run

log = logging.getLogger(__name__)

METHODS = ("RBD-G-rew", "RBD-G", "RBD-H-rew", "RBD-H")
METRICS = ("G", "X", "S")
FAILURE_FLAG = 0.2

# test case -> (csv axis name, BaseConfig field swept, default grid)
TEST_CASES = {
    "pert_sweep": ("Eps", "pert_ratio", (0.0, 0.05, 0.1, 0.15, 0.2, 0.25)),
    "sparsity_sweep": ("S", "k_sparsity", (2, 3, 4, 5, 6)),
    "samples_sweep": ("M", "n_samples", (15, 30, 50, 100)),
}
CASE_BY_NUMBER = {1: "pert_sweep", 2: "sparsity_sweep", 3: "samples_sweep"}
CASE_OUTPUT = {
    "pert_sweep": ("G", "err_G_pert.csv"),
    "sparsity_sweep": ("X", "err_X_sparsity.csv"),
    "samples_sweep": ("S", "err_S_samp.csv"),
}


class ExperimentError(ValueError):
    pass


@dataclass(frozen=True)
class BaseConfig:
    n_nodes: int = 20
    n_samples: int = 50
    k_sparsity: int = 2
    mean_degree: int = 4
    rewire_prob: float = 0.2
    filter_order: int = 3
    cond_limit: float = 1e4
    pert_ratio: float = 0.1
    noise_power: float = 0.0

    @classmethod
    def keys(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


@dataclass(frozen=True)
class ExperimentSpec:
    test_case: str = "pert_sweep"
    sweep_values: tuple = (0.0, 0.05, 0.1, 0.15, 0.2, 0.25)
    n_realizations: int = 25
    base: BaseConfig = field(default_factory=BaseConfig)
    methods: tuple = METHODS
    hp: dict = field(default_factory=dict)
    master_seed: int = 0
    sweep_key: str | None = None

    def __post_init__(self):
        if self.test_case not in TEST_CASES and self.test_case != "custom":
            raise ExperimentError(f"unknown test case {self.test_case!r}")
        key = self.axis_key
        if key not in BaseConfig.keys():
            raise ExperimentError(f"cannot sweep over {key!r}")
        values = tuple(self.sweep_values)
        if not values:
            raise ExperimentError("sweep_values must be nonempty")
        if list(values) != sorted(values):
            raise ExperimentError("sweep_values must be sorted")
        if self.n_realizations < 1:
            raise ExperimentError("n_realizations must be >= 1")
        if not self.methods:
            raise ExperimentError("at least one method is required")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ExperimentError(f"unknown methods {unknown}")
        object.__setattr__(self, "sweep_values", values)
        object.__setattr__(self, "methods", tuple(self.methods))

    @property
    def axis_key(self) -> str:
        if self.test_case == "custom":
            if self.sweep_key is None:
                raise ExperimentError("custom sweeps need sweep_key")
            return self.sweep_key
        return TEST_CASES[self.test_case][1]

    @property
    def axis_name(self) -> str:
        if self.test_case == "custom":
            return self.axis_key
        return TEST_CASES[self.test_case][0]

    def point(self, sweep_index: int) -> BaseConfig:
        value = self.sweep_values[sweep_index]
        kind = type(getattr(self.base, self.axis_key))
        return replace(self.base, **{self.axis_key: kind(value)})

    def hyperparams(self, method: str) -> Hyperparams:
        hp = self.hp.get(method, Hyperparams())
        return hp.with_(reweight=method.endswith("-rew"))


@dataclass(frozen=True)
class Instance:
    s: np.ndarray
    s_bar: np.ndarray
    g_ref: np.ndarray
    x_ref: np.ndarray
    y: np.ndarray


@dataclass
class SweepResult:
    """``raw[p, m, r, k]``: error of metric ``k`` (G, X, S) at sweep point ``p``
    for method ``m`` and realization ``r``; NaN marks a failed run."""

    axis: str
    x_values: tuple
    methods: tuple
    raw: np.ndarray

    def median(self, metric: str) -> np.ndarray:
        return self._reduce(metric, 50)

    def quartiles(self, metric: str) -> np.ndarray:
        """Array of shape (points, methods, 3) with the 25/50/75 percentiles."""
        return np.stack([self._reduce(metric, q) for q in (25, 50, 75)], axis=-1)

    def failures(self) -> np.ndarray:
        return np.isnan(self.raw).any(axis=-1).sum(axis=-1)

    def flagged(self) -> np.ndarray:
        return self.failures() > FAILURE_FLAG * self.raw.shape[2]

    def _reduce(self, metric, q):
        k = METRICS.index(metric)
        vals = self.raw[..., k]
        out = np.full(vals.shape[:2], np.nan)
        for p, m in np.ndindex(*out.shape):
            v = vals[p, m]
            v = v[np.isfinite(v)]
            if v.size:
                out[p, m] = np.percentile(v, q)
        return out


def normalized_error(truth, estimate) -> float:
    truth = np.asarray(truth, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if truth.shape != estimate.shape:
        raise ValueError(f"shape mismatch {truth.shape} vs {estimate.shape}")
    ref = np.linalg.norm(truth)
    if ref == 0:
        raise ValueError("truth has zero norm")
    return float(np.linalg.norm(truth - estimate) / ref)


def realization_seed(master_seed: int, sweep_index: int, realization_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), int(sweep_index), int(realization_index)])


def make_instance(cfg: BaseConfig, seed: np.random.SeedSequence) -> Instance:
    ss_graph, ss_pert, ss_filt, ss_src, ss_noise = seed.spawn(5)
    s = generate_small_world(cfg.n_nodes, cfg.mean_degree, cfg.rewire_prob, ss_graph)
    s_bar = perturb_rewire(s, PerturbationSpec(cfg.pert_ratio, ss_pert))
    filt = synthesize_filter(s, cfg.filter_order, ss_filt, cfg.cond_limit)
    x = generate_sources(cfg.n_nodes, cfg.n_samples, GenerationConfig(cfg.k_sparsity, seed=ss_src))
    y = diffuse(filt, x, cfg.noise_power, ss_noise)
    g_ref, x_ref = normalize_ground_truth(filt, x)
    return Instance(s.entries, s_bar.entries, g_ref, x_ref, y)


def run_method(inst: Instance, method: str, hp: Hyperparams):
    if method.startswith("RBD-G"):
        return rbdg_run(inst.y, inst.s_bar, hp)
    return rbdh_run(inst.y, inst.s_bar, hp)


def errors_of(inst: Instance, res) -> tuple[float, float, float]:
    return (
        normalized_error(inst.g_ref, res.g_hat),
        normalized_error(inst.x_ref, res.x_hat),
        normalized_error(inst.s, res.s_hat),
    )


def run_realization(spec: ExperimentSpec, method: str, sweep_index: int, realization_index: int):
    """Error triple ``(err_G, err_X, err_S)``; NaNs if instance or solver fail."""
    return _run_task((spec, (method,), sweep_index, realization_index))[0]


def _run_task(task):
    spec, methods, p, r = task
    nan = (np.nan, np.nan, np.nan)
    try:
        inst = make_instance(spec.point(p), realization_seed(spec.master_seed, p, r))
    except (GraphModelError, ValueError) as exc:
        log.warning("instance (%d, %d) could not be generated: %s", p, r, exc)
        return [nan] * len(methods)
    out = []
    for m in methods:
        try:
            errs = errors_of(inst, run_method(inst, m, spec.hyperparams(m)))
        except (SolverError, np.linalg.LinAlgError, FloatingPointError) as exc:
            log.warning("%s failed at point %d realization %d: %s", m, p, r, exc)
            errs = nan
        out.append(errs)
    return out


def _map(fn, tasks, parallelism: int):
    if parallelism <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        # map keeps submission order, so the reduce below is order independent
        return list(pool.map(fn, tasks, chunksize=1))


def run_sweep(spec: ExperimentSpec, parallelism: int = 1) -> SweepResult:
    n_pts, n_meth, n_real = len(spec.sweep_values), len(spec.methods), spec.n_realizations
    tasks = [(spec, spec.methods, p, r) for p in range(n_pts) for r in range(n_real)]
    results = _map(_run_task, tasks, parallelism)
    raw = np.empty((n_pts, n_meth, n_real, 3))
    for (_, _, p, r), errs in zip(tasks, results):
        raw[p, :, r, :] = errs
    res = SweepResult(spec.axis_name, spec.sweep_values, spec.methods, raw)
    fails = res.failures()
    for p, m in zip(*np.nonzero(fails)):
        level = logging.WARNING if res.flagged()[p, m] else logging.INFO
        log.log(level, "%s at %s=%s: %d/%d realizations failed", spec.methods[m],
                spec.axis_name, spec.sweep_values[p], fails[p, m], n_real)
    return res


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".q.csv")


def _write_rows(path: Path, rows):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def emit_csv(result: SweepResult, path, metric: str = "G") -> Path:
    """Write per-method medians of ``metric`` plus the quartile sidecar."""
    path = Path(path)
    med = result.median(metric)
    rows = [[result.axis, *result.methods]]
    rows += [[_fmt(x), *(_fmt(v) for v in med[p])] for p, x in enumerate(result.x_values)]
    _write_rows(path, rows)

    q = result.quartiles(metric)
    head = [result.axis] + [f"{m}:{s}" for m in result.methods for s in ("q25", "q50", "q75")]
    qrows = [head] + [[_fmt(x), *(_fmt(v) for v in q[p].ravel())] for p, x in enumerate(result.x_values)]
    _write_rows(sidecar_path(path), qrows)
    return path


def read_csv(path):
    """Parse a file written by ``emit_csv``: ``(axis, methods, x_values, values)``."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    axis, *methods = rows[0]
    x = np.array([float(r[0]) for r in rows[1:]])
    vals = np.array([[float(v) for v in r[1:]] for r in rows[1:]]).reshape(len(rows) - 1, len(methods))
    return axis, tuple(methods), x, vals


# ---------------------------------------------------------------------------
# grid search
# ---------------------------------------------------------------------------

GRID_KEYS = ("alpha", "beta", "gamma", "lam")
SCORE_HEADER = ("method", *GRID_KEYS, "err_G", "err_X", "err_S", "failed")


@dataclass
class GridResult:
    best: dict
    table: list


def grid_search(spec: ExperimentSpec, grids: dict, n_realizations: int = 5,
                parallelism: int = 1, table_path=None) -> GridResult:
    """Exhaustive search over ``grids`` on the first point of ``spec``.

    Rows are scored by median err_G with median err_X breaking ties. When
    ``table_path`` is given every row is flushed as soon as it is scored and
    an interrupted search leaves a ``# partial`` trailer.
    """
    unknown = set(grids) - set(GRID_KEYS)
    if unknown:
        raise ExperimentError(f"unknown grid keys {sorted(unknown)}")
    for k, v in grids.items():
        if len(v) == 0:
            raise ExperimentError(f"grid for {k} is empty")
    val_spec = replace(spec, sweep_values=spec.sweep_values[:1], n_realizations=n_realizations)
    combos = list(itertools.product(*(grids.get(k, (None,)) for k in GRID_KEYS)))

    fh = writer = None
    if table_path is not None:
        fh = open(table_path, "w", encoding="utf-8", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SCORE_HEADER)
        fh.flush()

    table, best, best_score = [], {}, {}
    done = False
    try:
        for method in spec.methods:
            base = spec.hyperparams(method)
            for combo in combos:
                hp = base.with_(**{k: float(v) for k, v in zip(GRID_KEYS, combo) if v is not None})
                one = replace(val_spec, methods=(method,), hp={method: hp})
                res = run_sweep(one, parallelism)
                eg, ex, es = (res.median(m)[0, 0] for m in METRICS)
                row = (method, hp.alpha, hp.beta, hp.gamma, hp.lam, eg, ex, es, int(res.failures()[0, 0]))
                table.append(row)
                if writer is not None:
                    writer.writerow([row[0], *(_fmt(v) for v in row[1:])])
                    fh.flush()
                score = (np.inf if np.isnan(eg) else eg, np.inf if np.isnan(ex) else ex)
                if method not in best or score < best_score[method]:
                    best[method], best_score[method] = hp, score
        done = True
    finally:
        if fh is not None:
            if not done:
                fh.write("# partial\n")
            fh.close()
    return GridResult(best, table)
