import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coarsespace.errors import PreconditionError
from coarsespace.optimizer import (
    TRACE_HEADER,
    OptimizerConfig,
    dense_objective,
    objective,
    objective_and_gradient,
    optimize,
    rademacher_probes,
    smoothed,
)
from coarsespace.two_level import CoarseSpace, assemble_T, spectral_coarse_space, spectral_radius

from conftest import setup


def central_differences(p, s, P, Z, k, d=1e-4):
    fd = np.zeros_like(P)
    for idx in np.ndindex(*P.shape):
        E = np.zeros_like(P)
        E[idx] = d
        fd[idx] = (objective(p, s, P + E, Z, k) - objective(p, s, P - E, Z, k)) / (2 * d)
    return fd


def test_probes_are_signs_and_reproducible():
    Z = rademacher_probes(50, 400, seed=3)
    assert set(np.unique(Z)) == {-1.0, 1.0}
    assert Z.shape == (50, 400)
    np.testing.assert_array_equal(Z, rademacher_probes(50, 400, seed=3))
    assert abs(Z.mean()) < 0.05
    with pytest.raises(PreconditionError):
        rademacher_probes(5, 0)


@pytest.mark.parametrize("c", [0.0, 10.0])
def test_objective_matches_dense(c):
    p, s, _ = setup("1/10", c, 1.0)
    rng = np.random.default_rng(0)
    Z = rademacher_probes(p.n, 30, 1)
    for _ in range(5):
        P = rng.standard_normal((p.n, 4))
        dense = dense_objective(assemble_T(p, s, CoarseSpace(P)).T, Z, 10)
        assert objective(p, s, P, Z, 10) == pytest.approx(dense, rel=1e-10)


def test_objective_vanishes_for_full_space():
    p, s, e = setup("1/5", 0.0, 1.0)
    Z = rademacher_probes(p.n, p.n, 0)
    J, g = objective_and_gradient(p, s, e.vectors, Z, 3)
    assert J < 1e-20 and np.abs(g).max() < 1e-9


def test_objective_singular_coarse_matrix_is_inf():
    p, s, _ = setup("1/5", 0.0, 1.0)
    assert objective(p, s, np.zeros((p.n, 1)), rademacher_probes(p.n, 3, 0), 2) == np.inf


def test_hutchinson_estimates_frobenius_norm():
    p, s, e = setup("1/6", 0.0, 1.0)
    k = 3
    Tk = np.linalg.matrix_power(assemble_T(p, s, spectral_coarse_space(e, 2)).T, k)
    Z = rademacher_probes(p.n, 20000, 5)
    samples = np.sum((Tk @ Z) ** 2, axis=0)
    se = samples.std(ddof=1) / np.sqrt(samples.size)
    assert abs(samples.mean() - np.linalg.norm(Tk, "fro") ** 2) <= 3 * se


@pytest.mark.parametrize("h,m,k,c,omega", [("1/5", 2, 3, 0.0, 1.0), ("1/7", 3, 2, 0.0, 1.0),
                                           ("1/5", 2, 3, 5.0, 1.0), ("1/7", 3, 2, 10.0, 0.5)])
def test_gradient_matches_finite_differences(h, m, k, c, omega):
    p, s, _ = setup(h, c, omega)
    P = np.random.default_rng(0).standard_normal((p.n, m))
    Z = rademacher_probes(p.n, p.n, 1)
    _, g = objective_and_gradient(p, s, P, Z, k)
    fd = central_differences(p, s, P, Z, k)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_gradient_orthogonal_to_basis_changes(seed):
    # J(P C) = J(P), so the gradient has no component along P B
    p, s, _ = setup("1/6", 10.0, 1.0)
    rng = np.random.default_rng(seed)
    P = rng.standard_normal((p.n, 3))
    B = rng.standard_normal((3, 3))
    _, g = objective_and_gradient(p, s, P, rademacher_probes(p.n, 10, seed), 4)
    assert abs(np.sum(g * (P @ B))) <= 1e-9 * np.linalg.norm(g) * np.linalg.norm(P @ B)


def test_objective_invariant_under_orthonormalization():
    p, s, _ = setup("1/10", 0.0, 1.0)
    P = np.random.default_rng(4).standard_normal((p.n, 5))
    Q, _ = np.linalg.qr(P)
    Z = rademacher_probes(p.n, 20, 0)
    assert objective(p, s, P, Z, 5) == pytest.approx(objective(p, s, Q, Z, 5), rel=1e-9)


def test_config_validation():
    with pytest.raises(PreconditionError):
        OptimizerConfig(m=0).resolved(81)
    with pytest.raises(PreconditionError):
        OptimizerConfig(m=1, learning_rate=0).resolved(81)
    with pytest.raises(PreconditionError):
        OptimizerConfig(m=1, num_samples=10, batch_size=20).resolved(81)
    cfg = OptimizerConfig(m=3).resolved(81)
    assert cfg.num_samples == 81 and cfg.batch_size == 81 and cfg.k == 10 and cfg.learning_rate == 0.1


def test_smoothed_is_exponential_average():
    v = [4.0, 0.0, 0.0]
    np.testing.assert_allclose(smoothed(v, 3), [4.0, 2.0, 1.0])


def test_short_run_trace(tmp_path):
    p, s, e = setup("1/10", 0.0, 1.0)
    trace = optimize(p, s, OptimizerConfig(m=2, iterations=120, probe_every=40))
    assert len(trace.objective) == 121
    assert sorted(trace.rho_probe) == [0, 40, 80, 120]
    assert trace.best_rho == min(trace.rho_probe.values())
    sm = smoothed(trace.objective, 50)
    assert sm[-1] < sm[0]
    assert trace.report.rho == pytest.approx(trace.best_rho, abs=1e-12)
    assert trace.report.rho == pytest.approx(
        spectral_radius(assemble_T(p, s, CoarseSpace(trace.P_best))), abs=1e-12)
    path = tmp_path / "trace.csv"
    trace.write_csv(path)
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == TRACE_HEADER
    assert len(rows) == 122 and rows[41][3] != "" and rows[2][3] == ""


def test_run_is_deterministic():
    p, s, _ = setup("1/6", 0.0, 1.0)
    cfg = OptimizerConfig(m=2, iterations=30, seed=11)
    a, b = optimize(p, s, cfg), optimize(p, s, cfg)
    np.testing.assert_array_equal(a.P_final, b.P_final)
    assert a.objective == b.objective


def test_minibatch_and_resampling_run():
    p, s, _ = setup("1/6", 0.0, 1.0)
    for cfg in (OptimizerConfig(m=2, iterations=20, batch_size=5),
                OptimizerConfig(m=2, iterations=20, resample=True, batch_size=5)):
        trace = optimize(p, s, cfg)
        assert len(trace.objective) == 21 and np.all(np.isfinite(trace.objective))


def test_early_stop_on_plateau():
    # the full coarse space has J = 0 from the start
    p, s, _ = setup("1/4", 0.0, 1.0)
    trace = optimize(p, s, OptimizerConfig(m=p.n, iterations=1000, early_stop_window=20))
    assert trace.stopped_early and len(trace.objective) < 100


def test_damped_case_stays_near_spectral():
    # for (c=0, omega=1/2) the spectral space is already near optimal
    p, s, e = setup("1/11", 0.0, 0.5)
    trace = optimize(p, s, OptimizerConfig(m=1, iterations=400))
    assert trace.best_rho <= abs(e.values_G[1]) + 0.01
