"""Subspace-residual metric tests against dense linear-algebra oracles."""
import numpy as np
import pytest

from phasorwatch import feeders
from phasorwatch.grid import assemble_system
from phasorwatch.metrics import (DoublePmuMetric, MetricError, MultiPmuMetric,
                                 SinglePmuMetric, correlation,
                                 double_pmu_metric, single_pmu_metric,
                                 subspace_residual)


def rand_c(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


# ---------------------------------------------------------------------------
# subspace residual
# ---------------------------------------------------------------------------

def test_subspace_residual_matches_eigendecomposition_oracle():
    # oracle: residual of R R^H outside its top eigendirection, computed
    # with a dense eigendecomposition and an explicit projector
    rng = np.random.default_rng(0)
    shapes = [(6, 3), (12, 6), (8, 5), (5, 8), (4, 4)]
    for i in range(100):
        r = rand_c(rng, *shapes[i % len(shapes)])
        a = r @ r.conj().T
        w, vecs = np.linalg.eigh(a)
        u = vecs[:, np.argmax(w)][:, None]
        oracle = np.linalg.norm((np.eye(a.shape[0]) - u @ u.conj().T) @ a)
        assert abs(subspace_residual(r) - oracle) < 1e-10


def test_subspace_residual_edge_cases():
    assert subspace_residual(np.zeros((4, 3))) == 0.0
    assert subspace_residual(np.ones((1, 5))) == 0.0  # single direction
    rng = np.random.default_rng(1)
    u, v = rand_c(rng, 6), rand_c(rng, 4)
    assert subspace_residual(np.outer(u, v)) < 1e-12  # exactly rank one
    with pytest.raises(MetricError):
        subspace_residual(np.ones(3))


def test_correlation_normalization():
    x = np.array([[1.0 + 0j], [1.0]])
    assert abs(correlation(x, x)[0, 0] - 2.0) < 1e-15  # sum / (M - 1)
    rng = np.random.default_rng(2)
    x, y = rand_c(rng, 5, 3), rand_c(rng, 5, 2)
    r = correlation(x, y)
    assert r.shape == (3, 2)
    assert np.allclose(r, x.T @ y.conj() / 4)
    with pytest.raises(MetricError):
        correlation(x, y[:4])
    with pytest.raises(MetricError):
        correlation(x[:1], y[:1])


# ---------------------------------------------------------------------------
# line metrics
# ---------------------------------------------------------------------------

def quasi_steady_line(rng, m, ticks=1):
    """Windows of a constant line state under a common per-tick rotation."""
    y = rand_c(rng, 3, 3)
    y = y + y.T + 3 * np.eye(3)
    v_i = np.array([1.0, np.exp(-2j * np.pi / 3), np.exp(2j * np.pi / 3)])
    v_j = v_i * (1 - 0.01 * rng.random())
    i_ij = y @ (v_i - v_j)
    i_ji = -i_ij
    rot = np.exp(1j * np.cumsum(rng.uniform(-0.02, 0.02, m + ticks)))
    stack = lambda vec: rot[:, None] * vec[None, :]
    return stack(i_ij), stack(i_ji), stack(v_i), stack(v_j)


def test_quasi_steady_metrics_are_tiny():
    rng = np.random.default_rng(3)
    i_ij, i_ji, v_i, v_j = quasi_steady_line(rng, 8)
    assert double_pmu_metric(i_ij, i_ji, v_i, v_j) < 1e-12
    assert single_pmu_metric(i_ij, v_i) < 1e-12


def test_metric_window_minimums():
    rng = np.random.default_rng(4)
    i_ij, i_ji, v_i, v_j = quasi_steady_line(rng, 4)
    with pytest.raises(MetricError):
        double_pmu_metric(i_ij, i_ji, v_i, v_j)  # needs M >= 6
    with pytest.raises(MetricError):
        single_pmu_metric(i_ij[:1], v_i[:1])
    with pytest.raises(MetricError):
        DoublePmuMetric("l", m=5)
    with pytest.raises(MetricError):
        SinglePmuMetric(1, "l", m=1)


def test_single_metric_finite_on_single_phase_lateral():
    # absent phases come in as zeros; the metric must stay finite
    rng = np.random.default_rng(5)
    i = np.zeros((6, 3), dtype=complex)
    v = np.zeros((6, 3), dtype=complex)
    i[:, 2] = rand_c(rng, 6)
    v[:, 2] = 1.0 + 0.01 * rand_c(rng, 6)
    x = single_pmu_metric(i, v)
    assert np.isfinite(x) and x >= 0.0


def test_streaming_window_fills_and_gap_resets():
    rng = np.random.default_rng(6)
    i_ij, _, v_i, _ = quasi_steady_line(rng, 6, ticks=10)
    m = SinglePmuMetric(9, "9-13", m=3)
    assert m.update(0, i_ij[0], v_i[0]) is None
    assert m.update(1, i_ij[1], v_i[1]) is None
    assert m.update(2, i_ij[2], v_i[2]) is not None
    # a missing tick clears the window; it must refill before emitting
    assert m.update(4, i_ij[4], v_i[4]) is None
    assert m.update(5, i_ij[5], v_i[5]) is None
    assert m.update(6, i_ij[6], v_i[6]) is not None

    d = DoublePmuMetric("3-8", m=6)
    vals = [d.update(k, i_ij[k], -i_ij[k], v_i[k], v_i[k] * 0.99) for k in range(8)]
    assert all(v is None for v in vals[:5]) and all(v is not None for v in vals[5:])


# ---------------------------------------------------------------------------
# grid-wide metric
# ---------------------------------------------------------------------------

def test_multi_metric_auto_mode_selection():
    top, _ = feeders.ieee34_like()
    m = MultiPmuMetric(assemble_system(top))
    # H_u has full row rank here, so the orthogonal projector vanishes
    assert m.mode == "min-singular"
    assert m.projector_norm < 1e-8

    top2, _ = feeders.twelve_bus(metered=tuple(range(2, 12)))
    m2 = MultiPmuMetric(assemble_system(top2))
    assert m2.mode == "projector"
    assert m2.projector_norm > 1e-3


def test_multi_metric_all_buses_metered():
    top, _ = feeders.twelve_bus(metered=tuple(range(1, 13)))
    sys = assemble_system(top)
    assert sys.h_u.shape[1] == 0
    m = MultiPmuMetric(sys)  # falls back to the plain residual
    assert m.mode == "projector"
    with pytest.raises(MetricError):
        MultiPmuMetric(sys, mode="min-singular")
    with pytest.raises(MetricError):
        MultiPmuMetric(sys, mode="sideways")


def test_multi_metric_scale_invariance():
    top, _ = feeders.ieee34_like()
    m = MultiPmuMetric(assemble_system(top))
    rng = np.random.default_rng(7)
    d_a = rand_c(rng, 18)
    base = m.evaluate(d_a)
    for _ in range(20):
        c = rand_c(rng)
        assert abs(m.evaluate(c * d_a) - base) <= 1e-12 * abs(base)


def test_projector_mode_annihilates_consistent_states():
    # for an exact network state H_a d_a = -H_u d_u lies in range(H_u),
    # so the orthogonal-projector residual is zero
    top, _ = feeders.twelve_bus(metered=tuple(range(2, 12)))
    sys = assemble_system(top)
    m = MultiPmuMetric(sys, mode="projector")
    rng = np.random.default_rng(8)
    v = rand_c(rng, 36)
    inj = sys.ybus @ v
    injections = {b: inj[3 * i:3 * i + 3] for i, b in enumerate(sys.bus_order)}
    voltages = {b: v[3 * i:3 * i + 3] for i, b in enumerate(sys.bus_order)}
    x = m.update(0, injections, voltages)
    assert x < 1e-20
    # a random (inconsistent) measurement scores far above that
    assert m.evaluate(rand_c(rng, sys.h_a.shape[1])) > 1e-3

    # dropping a required stream skips the tick instead of failing
    assert m.update(1, {}, voltages) is None


def test_min_singular_mode_matches_hand_formula():
    from phasorwatch.grid import smallest_left_singular_direction

    top, _ = feeders.ieee34_like()
    sys = assemble_system(top)
    m = MultiPmuMetric(sys, mode="min-singular")
    u = smallest_left_singular_direction(sys.h_u)
    rng = np.random.default_rng(9)
    for _ in range(10):
        d_a = rand_c(rng, 18)
        oracle = abs(u.conj() @ sys.h_a @ d_a) ** 2 / np.vdot(d_a, d_a).real
        assert abs(m.evaluate(d_a) - oracle) < 1e-12 * oracle


def test_multi_metric_rejects_zero_vector():
    top, _ = feeders.ieee34_like()
    m = MultiPmuMetric(assemble_system(top))
    with pytest.raises(MetricError):
        m.evaluate(np.zeros(18))
