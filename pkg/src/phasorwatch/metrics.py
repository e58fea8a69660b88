"""Subspace-residual anomaly metrics on synchrophasor streams.

In quasi-steady operation the windowed correlation matrices built from
line currents and bus voltages are rank one (every sample is a common
complex rotation of one steady vector), so the energy outside the top
singular direction is a sensitive change indicator.  Three flavors:

* double: one line, both ends metered (12x6 stacked correlation)
* single: one line, one metered end (6x3 stacked correlation)
* multi:  all metered buses at once, checked against the network model
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .grid import SystemMatrices, smallest_left_singular_direction

PROJECTOR_TOL = 1e-8


class MetricError(ValueError):
    pass


def subspace_residual(r: np.ndarray) -> float:
    """Energy of R R^H outside its principal direction.

    min over unit u of || (I - u u^H) R R^H ||_F, which equals
    sqrt(sum of sigma_i(R)^4 for i >= 2).
    """
    r = np.asarray(r, dtype=complex)
    if r.ndim != 2:
        raise MetricError("expected a matrix")
    s = np.linalg.svd(r, compute_uv=False)
    if s.size <= 1:
        return 0.0
    return float(np.sqrt(np.sum(s[1:] ** 4)))


def correlation(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Windowed sample correlation sum_m x_m y_m^H / (M - 1).

    x, y are (M, p) and (M, q) arrays of stacked window samples.
    """
    x = np.asarray(x, dtype=complex)
    y = np.asarray(y, dtype=complex)
    if x.shape[0] != y.shape[0] or x.shape[0] < 2:
        raise MetricError("windows must share M >= 2 samples")
    return np.einsum("mi,mj->ij", x, y.conj()) / (x.shape[0] - 1)


def double_pmu_metric(i_ij: np.ndarray, i_ji: np.ndarray, v_i: np.ndarray, v_j: np.ndarray) -> float:
    """Two-ended line metric from (M, 3) windows of currents and voltages."""
    m = np.asarray(i_ij).shape[0]
    if m < 6:
        raise MetricError(f"double metric needs M >= 6 samples, got {m}")
    i6 = np.hstack([i_ij, i_ji])
    v6 = np.hstack([v_i, v_j])
    r_iv = correlation(i6, v6)
    r_vv = correlation(v6, v6)
    return subspace_residual(np.vstack([r_iv, r_vv]))


def single_pmu_metric(i_ij: np.ndarray, v_i: np.ndarray) -> float:
    """One-ended line metric from (M, 3) windows at the metered end."""
    m = np.asarray(i_ij).shape[0]
    if m < 2:
        raise MetricError(f"single metric needs M >= 2 samples, got {m}")
    r_iv = correlation(i_ij, v_i)
    r_vv = correlation(v_i, v_i)
    return subspace_residual(np.vstack([r_iv, r_vv]))


class _WindowPair:
    """Ring buffer of the last M aligned sample pairs; tolerates gaps."""

    def __init__(self, m: int):
        self.m = m
        self.buf: deque = deque(maxlen=m)
        self.last_tick: int | None = None

    def push(self, tick: int, *vecs: np.ndarray) -> bool:
        if self.last_tick is not None and tick != self.last_tick + 1:
            self.buf.clear()  # gap: restart the window
        self.last_tick = tick
        self.buf.append(tuple(np.asarray(v, dtype=complex) for v in vecs))
        return len(self.buf) == self.m

    def stacked(self, slot: int) -> np.ndarray:
        return np.vstack([entry[slot] for entry in self.buf])


class DoublePmuMetric:
    """Streaming evaluator for a line metered at both ends."""

    def __init__(self, line_id: str, m: int = 32):
        if m < 6:
            raise MetricError("double metric needs M >= 6")
        self.metric_id = f"double:{line_id}"
        self.window = _WindowPair(m)

    def update(self, tick: int, i_ij, i_ji, v_i, v_j) -> float | None:
        if not self.window.push(tick, i_ij, i_ji, v_i, v_j):
            return None
        return double_pmu_metric(
            self.window.stacked(0), self.window.stacked(1),
            self.window.stacked(2), self.window.stacked(3),
        )


class SinglePmuMetric:
    """Streaming evaluator for a line metered at one end only."""

    def __init__(self, bus: int, line_id: str, m: int = 6):
        if m < 2:
            raise MetricError("single metric needs M >= 2")
        self.metric_id = f"single:{bus}:{line_id}"
        self.window = _WindowPair(m)

    def update(self, tick: int, i_ij, v_i) -> float | None:
        if not self.window.push(tick, i_ij, v_i):
            return None
        return single_pmu_metric(self.window.stacked(0), self.window.stacked(1))


class MultiPmuMetric:
    """Grid-wide residual of the metered measurements against the model.

    projector mode:     x = || (I - H_u H_u^+) H_a d_a ||^2 / || d_a ||^2
    min-singular mode:  x = |  u_min^H        H_a d_a  |^2 / || d_a ||^2
    where u_min is the left singular direction of the smallest singular
    value of H_u.  ``auto`` picks min-singular when H_u has full row rank
    (the orthogonal projector vanishes), which is the usual case when
    fewer than half the buses are metered.
    """

    def __init__(self, system: SystemMatrices, mode: str = "auto", tol: float = PROJECTOR_TOL):
        if mode not in ("auto", "projector", "min-singular"):
            raise MetricError(f"unknown mode {mode!r}")
        self.metric_id = "multi"
        self.system = system
        h_u, h_a = system.h_u, system.h_a
        if h_u.shape[1] == 0:
            projector_norm = np.inf  # nothing unmetered: plain ||H d||
            self._proj_ha = h_a
            if mode == "min-singular":
                raise MetricError("min-singular mode undefined when every bus is metered")
            self.mode = "projector"
        else:
            proj = np.eye(h_u.shape[0]) - h_u @ np.linalg.pinv(h_u)
            projector_norm = float(np.linalg.norm(proj))
            if mode == "auto":
                mode = "min-singular" if projector_norm < tol else "projector"
            self.mode = mode
            if self.mode == "projector":
                self._proj_ha = proj @ h_a
            else:
                u_min = smallest_left_singular_direction(h_u)
                self._row = u_min.conj() @ h_a
        self.projector_norm = projector_norm

    def evaluate(self, d_a: np.ndarray) -> float:
        d_a = np.asarray(d_a, dtype=complex)
        denom = float(np.vdot(d_a, d_a).real)
        if denom == 0.0:
            raise MetricError("zero measurement vector")
        if self.mode == "projector":
            num = float(np.linalg.norm(self._proj_ha @ d_a) ** 2)
        else:
            num = float(np.abs(self._row @ d_a) ** 2)
        return num / denom

    def update(self, tick: int, injections: dict, voltages: dict) -> float | None:
        try:
            d_a = self.system.build_da(injections, voltages)
        except Exception:
            return None  # missing stream this tick: skip
        return self.evaluate(d_a)
