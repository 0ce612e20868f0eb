"""End-to-end acceptance suite.

Each test checks one numbered criterion at its stated tolerance and prints a
single ``ACCEPTANCE <n> PASS|FAIL`` line. Sweeps use 25 realizations and the
bundled profiles: ``unperturbed`` for criterion 1, ``default`` (tuned on 10%
rewiring) for the rest. Worker count comes from
``RBDG_ACCEPT_PARALLELISM`` (default: all cores, at most 8).

Run alone with ``pytest -m acceptance -s``.
"""

import os
import time

import numpy as np
import pytest

from rbdg import cli
from rbdg.config import load_config
from rbdg.experiments import (
    TEST_CASES,
    BaseConfig,
    ExperimentSpec,
    make_instance,
    normalized_error,
    realization_seed,
    run_sweep,
)
from rbdg.graph_model import commutator, generate_small_world, synthesize_filter
from rbdg.prox import double_l1_prox, solve_g_subproblem
from rbdg.solver import rbdg_run, step1_filter_source, step1_objective

from oracles import g_qp_oracle, grid_prox, step1_cvx

pytestmark = pytest.mark.acceptance

CFG = load_config()
EXACT = load_config(profile="unperturbed")
N_REAL = 25
PAR = int(os.environ.get("RBDG_ACCEPT_PARALLELISM", min(8, os.cpu_count() or 1)))


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return emit


def sweep(case, values, methods, key=None, base=None, cfg=CFG):
    spec = ExperimentSpec(test_case=case, sweep_values=values, n_realizations=N_REAL, base=base or cfg.base,
                          methods=methods, hp=cfg.hp, master_seed=cfg.seed, sweep_key=key)
    t0 = time.perf_counter()
    res = run_sweep(spec, PAR)
    return res, time.perf_counter() - t0


def fmt(a):
    return "[" + ", ".join(f"{v:.2e}" for v in np.ravel(a)) + "]"


def test_1_unperturbed_recovery(report):
    base = BaseConfig(**{**EXACT.base.__dict__, "pert_ratio": 0.0, "noise_power": 0.0})
    res, dt = sweep("custom", (0.0,), ("RBD-G-rew",), key="pert_ratio", base=base, cfg=EXACT)
    med = res.median("G")[0, 0]
    report(1, med <= 1e-3 and dt <= 120.0, f"median err_G {med:.2e} (<= 1e-3), {dt:.0f}s (<= 120s)")


def test_2_perturbation_sweep(report):
    values = tuple(v for v in TEST_CASES["pert_sweep"][2] if v > 0)
    methods = ("RBD-G-rew", "RBD-G", "RBD-H-rew")
    res, dt = sweep("pert_sweep", values, methods)
    med = res.median("G")
    rew, plain, hrew = med[:, 0], med[:, 1], med[:, 2]
    # wall time at PAR workers scaled to the budget's 8 workers
    scaled = dt * PAR / 8
    ok = (np.all((rew >= 1e-5) & (rew <= 1e-3)) and np.all((plain >= 1e-2) & (plain <= 1.0))
          and np.all(rew < hrew) and scaled <= 1800.0)
    report(2, ok, f"RBD-G-rew {fmt(rew)} in [1e-5,1e-3]; RBD-G {fmt(plain)} in [1e-2,1]; "
                  f"RBD-H-rew {fmt(hrew)}; {scaled:.0f}s at 8 workers (<= 1800s)")


def test_3_sparsity_sweep(report):
    base = BaseConfig(**{**CFG.base.__dict__, "pert_ratio": 0.1})
    res, _ = sweep("sparsity_sweep", TEST_CASES["sparsity_sweep"][2], ("RBD-G-rew",), base=base)
    med = res.median("X")[:, 0]
    ok = np.all(med[:3] <= 1e-3) and med[3] >= med[2] and med[4] >= med[3]
    report(3, ok, f"median err_X over K=2..6 {fmt(med)}: <= 1e-3 for K<5, nondecreasing for K=5,6")


def test_4_samples_sweep(report):
    values = tuple(sorted({20, *TEST_CASES["samples_sweep"][2]}))
    res, _ = sweep("samples_sweep", values, ("RBD-G-rew",))
    med = res.median("S")[:, 0]
    raw = []
    for p, m in enumerate(values):
        cfg = BaseConfig(**{**CFG.base.__dict__, "n_samples": m})
        errs = [normalized_error(inst.s, inst.s_bar)
                for inst in (make_instance(cfg, realization_seed(CFG.seed, p, r)) for r in range(N_REAL))]
        raw.append(np.median(errs))
    raw = np.array(raw)
    grid = [values.index(m) for m in TEST_CASES["samples_sweep"][2]]
    at20 = med[values.index(20)]
    ok = at20 <= 0.2 and np.all(np.diff(med[grid]) <= 0) and np.all(med <= raw)
    report(4, ok, f"median err_S over M={values} {fmt(med)}; raw {fmt(raw)}; "
                  f"M=20 {at20:.3f} (<= 0.2), nonincreasing over {TEST_CASES['samples_sweep'][2]}, <= raw")


def test_5_kernel_oracles(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)

    v = rng.normal(0, 2, 10_000)
    a, b = rng.uniform(0, 2, 10_000), rng.uniform(0, 2, 10_000)
    anchor = rng.normal(0, 2, 10_000)
    ref, h = grid_prox(v, a, b, anchor)
    prox_err = np.max(np.abs(double_l1_prox(v, a, b, anchor) - ref) / h)

    qp_err = 0.0
    for _ in range(100):
        s = generate_small_world(6, 2, 0.3, rng).entries
        y, x = rng.normal(size=(6, 9)), rng.normal(size=(6, 9))
        gamma = 10 ** rng.uniform(-2, 2)
        g_ref = g_qp_oracle(y, x, s, gamma)
        qp_err = max(qp_err, np.linalg.norm(solve_g_subproblem(y, x, s, gamma) - g_ref) / np.linalg.norm(g_ref))

    from rbdg.solver import Hyperparams
    st_err = 0.0
    for i in range(20):
        s = generate_small_world(6, 2, 0.3, rng).entries
        y = rng.normal(size=(6, 8))
        hp = Hyperparams(alpha=10 ** rng.uniform(-2, -0.5), gamma=10 ** rng.uniform(-1, 1), newton_iters=100)
        g, x, _ = step1_filter_source(y, s, hp)
        val, _, _ = step1_cvx(y, s, hp.alpha, hp.gamma, None)
        st_err = max(st_err, abs(step1_objective(g, x, y, s, hp) - val) / abs(val))
    dt = time.perf_counter() - t0
    ok = prox_err <= 1.0 and qp_err <= 1e-8 and st_err <= 1e-6 and dt <= 60.0
    report(5, ok, f"prox off-grid {prox_err:.2f} spacings (<= 1); QP rel {qp_err:.1e} (<= 1e-8); "
                  f"step1 vs convex solver rel {st_err:.1e} (<= 1e-6); {dt:.0f}s (<= 60s)")


def test_6_monotone_objective(report):
    hp = CFG.hyperparams("RBD-G").with_(outer_tol=0.0, outer_iters=10)
    worst, bad = -np.inf, 0
    for r in range(100):
        cfg = BaseConfig(**{**CFG.base.__dict__, "pert_ratio": (0.0, 0.05, 0.1, 0.2)[r % 4]})
        inst = make_instance(cfg, realization_seed(CFG.seed + 1, 0, r))
        tr = rbdg_run(inst.y, inst.s_bar, hp).objective_trace
        rise = np.max(np.diff(tr) / np.abs(tr[:-1]))
        worst = max(worst, rise)
        bad += rise > 1e-9
    report(6, bad == 0, f"{bad}/100 traces with a relative increase > 1e-9 (largest step {worst:.1e})")


def test_7_commutativity(report):
    rng = np.random.default_rng(7)
    worst_h = worst_g = 0.0
    for _ in range(200):
        s = generate_small_world(20, 4, 0.2, rng)
        f = synthesize_filter(s, 3, rng)
        sm = s.entries
        for mat, which in ((f.forward, "h"), (f.inverse_normalized, "g")):
            rel = np.linalg.norm(commutator(mat, sm)) / (np.linalg.norm(mat) * np.linalg.norm(sm))
            if which == "h":
                worst_h = max(worst_h, rel)
            else:
                worst_g = max(worst_g, rel)
    report(7, max(worst_h, worst_g) <= 1e-10,
           f"max relative ||HS-SH|| {worst_h:.1e}, ||GS-SG|| {worst_g:.1e} over 200 filters (<= 1e-10)")


def test_8_parallel_byte_identical(report, tmp_path):
    over = ["n_realizations=3", "methods=RBD-G-rew,RBD-H", "RBD-G-rew.outer_iters=4", "RBD-H.outer_iters=4"]
    blobs = {}
    for par in (1, 2, 4):
        out = tmp_path / f"p{par}"
        code = cli.main(["experiment", "--test-case", "1", "--out", str(out), "--parallelism", str(par),
                         "--seed", "11", "--override", *over])
        assert code == 0
        blobs[par] = ((out / "err_G_pert.csv").read_bytes(), (out / "err_G_pert.q.csv").read_bytes())
    ok = blobs[1] == blobs[2] == blobs[4]
    report(8, ok, "err_G_pert.csv and sidecar byte-identical at parallelism 1, 2, 4")
