import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rbdg import experiments as ex
from rbdg.experiments import (
    BaseConfig,
    ExperimentError,
    ExperimentSpec,
    SweepResult,
    emit_csv,
    grid_search,
    make_instance,
    normalized_error,
    read_csv,
    realization_seed,
    run_realization,
    run_sweep,
    sidecar_path,
)
from rbdg.solver import Hyperparams

FAST = Hyperparams(alpha=1e-3, gamma=1.0, lam=1e-2, beta=1e-3, outer_iters=2, newton_iters=10, s_iters=200)
SMALL = BaseConfig(n_nodes=10, n_samples=20)


def small_spec(**kw):
    base = dict(test_case="pert_sweep", sweep_values=(0.0, 0.1), n_realizations=3, base=SMALL,
                methods=("RBD-G-rew", "RBD-H"), hp={"RBD-G-rew": FAST, "RBD-H": FAST}, master_seed=7)
    base.update(kw)
    return ExperimentSpec(**base)


def test_normalized_error_examples():
    a = np.arange(1.0, 7.0).reshape(2, 3)
    assert normalized_error(a, a) == 0.0
    assert normalized_error(a, 0 * a) == 1.0
    assert normalized_error(a, 2 * a) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        normalized_error(np.zeros(3), np.ones(3))
    with pytest.raises(ValueError):
        normalized_error(np.ones(3), np.ones(4))


def test_spec_validation():
    with pytest.raises(ExperimentError):
        small_spec(sweep_values=())
    with pytest.raises(ExperimentError):
        small_spec(sweep_values=(0.2, 0.1))
    with pytest.raises(ExperimentError):
        small_spec(n_realizations=0)
    with pytest.raises(ExperimentError):
        small_spec(methods=())
    with pytest.raises(ExperimentError):
        small_spec(methods=("Ye",))
    with pytest.raises(ExperimentError):
        small_spec(test_case="custom")
    with pytest.raises(ExperimentError):
        small_spec(test_case="custom", sweep_key="nope")


def test_default_axes():
    for case, name in [("pert_sweep", "Eps"), ("sparsity_sweep", "S"), ("samples_sweep", "M")]:
        grid = ex.TEST_CASES[case][2]
        spec = small_spec(test_case=case, sweep_values=grid)
        assert spec.axis_name == name
    assert ex.TEST_CASES["pert_sweep"][2] == (0.0, 0.05, 0.1, 0.15, 0.2, 0.25)
    assert ex.TEST_CASES["sparsity_sweep"][2] == (2, 3, 4, 5, 6)
    assert ex.TEST_CASES["samples_sweep"][2] == (15, 30, 50, 100)


def test_point_casts_to_field_type():
    spec = small_spec(test_case="sparsity_sweep", sweep_values=(2, 3))
    assert spec.point(1).k_sparsity == 3 and isinstance(spec.point(1).k_sparsity, int)


def test_method_flags_reweighting():
    spec = small_spec()
    assert spec.hyperparams("RBD-G-rew").reweight
    assert not spec.hyperparams("RBD-H").reweight


def test_instances_are_method_independent_and_deterministic():
    cfg = BaseConfig(pert_ratio=0.1)
    a = make_instance(cfg, realization_seed(1, 2, 3))
    b = make_instance(cfg, realization_seed(1, 2, 3))
    c = make_instance(cfg, realization_seed(1, 2, 4))
    np.testing.assert_array_equal(a.y, b.y)
    assert not np.array_equal(a.y, c.y)


def test_raw_observation_error_at_ten_percent():
    # 4 of 40 edges rewired: 16 wrong entries out of 80 -> sqrt(16/80)
    inst = make_instance(BaseConfig(pert_ratio=0.1), realization_seed(0, 0, 0))
    assert normalized_error(inst.s, inst.s_bar) == pytest.approx(np.sqrt(16 / 80))


def test_run_realization_deterministic():
    spec = small_spec()
    a = run_realization(spec, "RBD-G-rew", 1, 0)
    b = run_realization(spec, "RBD-G-rew", 1, 0)
    assert a == b and all(np.isfinite(a))


def test_run_realization_records_failure(monkeypatch):
    from rbdg.solver import SolverError

    def boom(*a, **k):
        raise SolverError("forced", 1)

    monkeypatch.setattr(ex, "rbdg_run", boom)
    errs = run_realization(small_spec(), "RBD-G-rew", 0, 0)
    assert all(np.isnan(errs))


def test_sweep_shapes_and_parallel_equivalence():
    spec = small_spec()
    serial = run_sweep(spec, parallelism=1)
    para = run_sweep(spec, parallelism=2)
    assert serial.raw.shape == (2, 2, 3, 3)
    np.testing.assert_array_equal(serial.raw, para.raw)
    assert serial.median("G").shape == (2, 2)
    assert np.all(serial.raw >= 0)


def _result(raw=None):
    rng = np.random.default_rng(0)
    if raw is None:
        raw = rng.random((3, 2, 5, 3))
    return SweepResult("Eps", (0.0, 0.05, 0.1), ("RBD-G-rew", "RBD-G"), raw)


@given(st.permutations(range(5)))
def test_medians_permutation_invariant(perm):
    res = _result()
    shuffled = _result(res.raw[:, :, list(perm), :])
    for m in ex.METRICS:
        np.testing.assert_array_equal(res.median(m), shuffled.median(m))


def test_failures_excluded_and_flagged():
    raw = np.ones((1, 1, 10, 3))
    raw[0, 0, :3] = np.nan
    raw[0, 0, 3] = 5.0
    res = SweepResult("Eps", (0.1,), ("RBD-G",), raw)
    assert res.failures()[0, 0] == 3
    assert res.flagged()[0, 0]
    assert res.median("G")[0, 0] == 1.0
    raw[0, 0, :3] = 1.0
    raw[0, 0, 0] = np.nan
    assert not SweepResult("Eps", (0.1,), ("RBD-G",), raw).flagged()[0, 0]


def test_emit_csv_format_and_round_trip(tmp_path):
    res = _result()
    path = emit_csv(res, tmp_path / "err_G_pert.csv", "G")
    text = path.read_bytes()
    assert b"\r" not in text
    lines = text.decode("utf-8").splitlines()
    assert lines[0] == "Eps,RBD-G-rew,RBD-G"
    assert len(lines) == 4
    axis, methods, x, vals = read_csv(path)
    assert axis == "Eps" and methods == res.methods
    np.testing.assert_array_equal(x, res.x_values)
    np.testing.assert_array_equal(vals, res.median("G"))
    q = sidecar_path(path)
    assert q.name == "err_G_pert.q.csv"
    head = q.read_text().splitlines()[0].split(",")
    assert head[:4] == ["Eps", "RBD-G-rew:q25", "RBD-G-rew:q50", "RBD-G-rew:q75"]


def test_emit_csv_integer_axis(tmp_path):
    res = SweepResult("S", (2, 3), ("RBD-G",), np.ones((2, 1, 2, 3)))
    path = emit_csv(res, tmp_path / "err_X_sparsity.csv", "X")
    assert path.read_text().splitlines()[1] == "2,1.0"


def test_emit_csv_io_error(tmp_path):
    with pytest.raises(OSError, match="cannot write"):
        emit_csv(_result(), tmp_path / "missing" / "x.csv")


def test_grid_search_singleton():
    spec = small_spec(methods=("RBD-G",), hp={"RBD-G": FAST})
    res = grid_search(spec, {"alpha": [1e-3], "gamma": [1.0]}, n_realizations=2)
    assert len(res.table) == 1
    assert res.best["RBD-G"].alpha == 1e-3 and res.best["RBD-G"].gamma == 1.0


def test_grid_search_picks_argmin(tmp_path):
    spec = small_spec(methods=("RBD-G",), hp={"RBD-G": FAST})
    res = grid_search(spec, {"alpha": [1e-3, 10.0], "lam": [1e-2, 1e-1]}, n_realizations=2,
                      table_path=tmp_path / "scores.csv")
    assert len(res.table) == 4
    best = min(res.table, key=lambda r: (r[5], r[6]))
    assert (res.best["RBD-G"].alpha, res.best["RBD-G"].lam) == (best[1], best[4])
    lines = (tmp_path / "scores.csv").read_text().splitlines()
    assert lines[0].startswith("method,alpha") and len(lines) == 5


def test_grid_search_partial_trailer(tmp_path, monkeypatch):
    calls = []
    real = ex.run_sweep

    def flaky(spec, parallelism=1):
        calls.append(1)
        if len(calls) == 2:
            raise KeyboardInterrupt
        return real(spec, parallelism)

    monkeypatch.setattr(ex, "run_sweep", flaky)
    spec = small_spec(methods=("RBD-G",), hp={"RBD-G": FAST})
    with pytest.raises(KeyboardInterrupt):
        grid_search(spec, {"alpha": [1e-3, 1e-2, 1e-1]}, n_realizations=1, table_path=tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[-1] == "# partial"


def test_grid_search_rejects_bad_grids():
    spec = small_spec()
    with pytest.raises(ExperimentError):
        grid_search(spec, {"alpha": []})
    with pytest.raises(ExperimentError):
        grid_search(spec, {"mu": [1.0]})
