"""Three-phase distribution network model.

Phase-frame (abc) line models with mutual coupling, Kron reduction of the
neutral conductor, per-unit conversion, Y-bus assembly, and the partition of
the network equations into metered / unmetered measurement columns used by
the grid-wide anomaly metric.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

PHASE_ORDER = ("a", "b", "c")

_DET_EPS = 1e-30


class GridModelError(ValueError):
    pass


def phase_indices(phasing: str) -> list[int]:
    """Map a phasing string like 'abc', 'ac' or 'b' to frame indices."""
    try:
        idx = [PHASE_ORDER.index(p) for p in phasing]
    except ValueError as exc:
        raise GridModelError(f"unknown phase in phasing {phasing!r}") from exc
    if len(set(idx)) != len(idx) or idx != sorted(idx):
        raise GridModelError(f"phasing {phasing!r} must be ordered and unique")
    return idx


def kron_reduce(z: np.ndarray) -> np.ndarray:
    """Eliminate the neutral conductor (last row/column) of an impedance matrix.

    Standard grounded-neutral Kron reduction ``z_pp - z_pn z_nn^-1 z_np``.
    Accepts any (m+1)x(m+1) matrix whose last row/column is the neutral.
    """
    z = np.asarray(z, dtype=complex)
    if z.ndim != 2 or z.shape[0] != z.shape[1] or z.shape[0] < 2:
        raise GridModelError(f"kron_reduce expects a square matrix, got {z.shape}")
    m = z.shape[0] - 1
    znn = z[m:, m:]
    if abs(np.linalg.det(znn)) < _DET_EPS:
        # degenerate neutral coupling: fall back to the pseudo-inverse
        return z[:m, :m] - z[:m, m:] @ np.linalg.pinv(znn) @ z[m:, :m]
    return z[:m, :m] - z[:m, m:] @ np.linalg.inv(znn) @ z[m:, :m]


def _embed3(mat: np.ndarray, idx: list[int]) -> np.ndarray:
    """Place a compact present-phase matrix into the full 3x3 abc frame."""
    out = np.zeros((3, 3), dtype=complex)
    out[np.ix_(idx, idx)] = mat
    return out


@dataclass
class PhaseImpedanceSpec:
    """Raw per-length conductor data for one line section.

    z_per_length is the series impedance matrix in ohm per unit length over
    the present phases (optionally with a neutral as the last row/column);
    b_per_length is the total shunt susceptance in siemens per unit length
    over the present phases.
    """

    line_id: str
    z_per_length: np.ndarray
    b_per_length: np.ndarray
    length: float
    phasing: str = "abc"

    def __post_init__(self):
        self.z_per_length = np.asarray(self.z_per_length, dtype=complex)
        self.b_per_length = np.asarray(self.b_per_length, dtype=float)
        if self.length <= 0:
            raise GridModelError(f"line {self.line_id}: length must be positive")
        m = len(phase_indices(self.phasing))
        if self.z_per_length.shape not in ((m, m), (m + 1, m + 1)):
            raise GridModelError(
                f"line {self.line_id}: z shape {self.z_per_length.shape} does not "
                f"match phasing {self.phasing!r} (expected {m} or {m}+neutral)"
            )
        if self.b_per_length.shape != (m, m):
            raise GridModelError(
                f"line {self.line_id}: b shape {self.b_per_length.shape} does not "
                f"match phasing {self.phasing!r}"
            )

    @property
    def has_neutral(self) -> bool:
        return self.z_per_length.shape[0] == len(self.phasing) + 1


@dataclass
class LineModel:
    """Per-unit pi model of one line section in the 3x3 abc frame.

    Absent phases are zero rows/columns.  y_shunt_pu is the shunt admittance
    at *each* end (half of the total line charging).
    """

    line_id: str
    from_bus: int
    to_bus: int
    phasing: str
    z_series_pu: np.ndarray
    y_series_pu: np.ndarray
    y_shunt_pu: np.ndarray

    @property
    def phase_idx(self) -> list[int]:
        return phase_indices(self.phasing)

    def y_total_pu(self) -> np.ndarray:
        """Series plus own-end shunt: the admittance seen entering the line."""
        return self.y_series_pu + self.y_shunt_pu

    def current_into(self, v_near: np.ndarray, v_far: np.ndarray) -> np.ndarray:
        """Phase currents flowing from the near bus into this line (pu)."""
        return self.y_total_pu() @ v_near - self.y_series_pu @ v_far

    def scaled(self, fraction: float, line_id: str, from_bus: int, to_bus: int) -> "LineModel":
        """A pi model for a fraction of this line's length (used to split at a fault)."""
        idx = self.phase_idx
        z = self.z_series_pu[np.ix_(idx, idx)] * fraction
        y = _embed3(np.linalg.inv(z), idx)
        return LineModel(
            line_id=line_id,
            from_bus=from_bus,
            to_bus=to_bus,
            phasing=self.phasing,
            z_series_pu=self.z_series_pu * fraction,
            y_series_pu=y,
            y_shunt_pu=self.y_shunt_pu * fraction,
        )


def build_line_model(
    spec: PhaseImpedanceSpec,
    from_bus: int,
    to_bus: int,
    kv_base: float,
    s_base_mva: float = 1.0,
) -> LineModel:
    """Turn raw conductor data into a per-unit pi model on the abc frame.

    Multiplies by length, Kron-reduces the neutral if present, inverts the
    series impedance on the present phases and converts to per unit on the
    ``kv_base`` / ``s_base_mva`` base.
    """
    idx = phase_indices(spec.phasing)
    z_ohm = spec.z_per_length * spec.length
    if spec.has_neutral:
        z_ohm = kron_reduce(z_ohm)
    b_total = spec.b_per_length * spec.length  # siemens

    z_base = kv_base**2 / s_base_mva  # ohm
    z_pu = z_ohm / z_base
    if abs(np.linalg.det(z_pu)) < _DET_EPS:
        raise GridModelError(f"line {spec.line_id}: series impedance is singular")
    y_series = _embed3(np.linalg.inv(z_pu), idx)
    y_shunt = _embed3(1j * b_total * z_base / 2.0, idx)
    return LineModel(
        line_id=spec.line_id,
        from_bus=from_bus,
        to_bus=to_bus,
        phasing=spec.phasing,
        z_series_pu=_embed3(z_pu, idx),
        y_series_pu=y_series,
        y_shunt_pu=y_shunt,
    )


@dataclass
class Bus:
    id: int
    kv_base: float
    slack: bool = False


@dataclass
class GridTopology:
    """A radial (or meshed) three-phase network with a metered-bus list."""

    buses: list[Bus]
    lines: list[LineModel]
    metered_buses: list[int] = field(default_factory=list)
    s_base_mva: float = 1.0

    def __post_init__(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise GridModelError("duplicate bus ids")
        known = set(ids)
        for ln in self.lines:
            if ln.from_bus not in known or ln.to_bus not in known:
                raise GridModelError(f"line {ln.line_id} references unknown bus")
        bad = [b for b in self.metered_buses if b not in known]
        if bad:
            raise GridModelError(f"metered buses not in topology: {bad}")
        self.metered_buses = sorted(set(self.metered_buses))
        # Disconnected sections are allowed: a switched-out line can island
        # part of the network, and those buses simply solve de-energized.

    @property
    def bus_ids(self) -> list[int]:
        return sorted(b.id for b in self.buses)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def bus(self, bus_id: int) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise GridModelError(f"no bus {bus_id}")

    @property
    def slack_bus(self) -> int:
        slacks = [b.id for b in self.buses if b.slack]
        if len(slacks) != 1:
            raise GridModelError(f"expected exactly one slack bus, found {slacks}")
        return slacks[0]

    def lines_at(self, bus_id: int) -> list[LineModel]:
        return [ln for ln in self.lines if bus_id in (ln.from_bus, ln.to_bus)]

    def line(self, line_id: str) -> LineModel:
        for ln in self.lines:
            if ln.line_id == line_id:
                return ln
        raise GridModelError(f"no line {line_id}")

    def without_line(self, line_id: str) -> "GridTopology":
        """Copy of this topology with one line removed (connectivity not re-checked)."""
        lines = [ln for ln in self.lines if ln.line_id != line_id]
        if len(lines) == len(self.lines):
            raise GridModelError(f"no line {line_id}")
        top = object.__new__(GridTopology)
        top.buses = list(self.buses)
        top.lines = lines
        top.metered_buses = list(self.metered_buses)
        top.s_base_mva = self.s_base_mva
        return top


def build_ybus(bus_order: list[int], lines: list[LineModel]) -> np.ndarray:
    """Assemble the 3Bx3B phase-frame bus admittance matrix.

    Diagonal block i sums (series + own-end shunt) of every incident line;
    off-diagonal block (i, j) is minus the series admittance of line (i, j).
    """
    pos = {b: i for i, b in enumerate(bus_order)}
    n = 3 * len(bus_order)
    y = np.zeros((n, n), dtype=complex)
    for ln in lines:
        fi, ti = pos[ln.from_bus], pos[ln.to_bus]
        fs, ts = slice(3 * fi, 3 * fi + 3), slice(3 * ti, 3 * ti + 3)
        y[fs, fs] += ln.y_total_pu()
        y[ts, ts] += ln.y_total_pu()
        y[fs, ts] -= ln.y_series_pu
        y[ts, fs] -= ln.y_series_pu
    return y


class SystemMatrices:
    """The linear model tying injections and voltages, split by metering.

    Stacks the network relation ``injections = Ybus @ voltages`` as
    ``H @ d = 0`` with ``H = [I | -Ybus]`` and ``d = [I; V]``, then selects
    the metered (suffix ``_a``) and unmetered (``_u``) columns.  Column order
    is deterministic: all injections first, then all voltages; buses
    ascending; phases a, b, c within each bus.
    """

    def __init__(self, topology: GridTopology):
        self.topology = topology
        self.bus_order = topology.bus_ids
        self._pos = {b: i for i, b in enumerate(self.bus_order)}
        b = topology.n_bus
        self.ybus = build_ybus(self.bus_order, topology.lines)
        self.h = np.hstack([np.eye(3 * b, dtype=complex), -self.ybus])
        self.metered = list(topology.metered_buses)
        self.unmetered = [x for x in self.bus_order if x not in set(self.metered)]
        self.t_a = self._selector(self.metered)
        self.t_u = self._selector(self.unmetered)
        self.h_a = self.h @ self.t_a.T
        self.h_u = self.h @ self.t_u.T
        self.check_invariants()

    # -- index helpers -------------------------------------------------
    def row(self, bus_id: int, phase: int) -> int:
        return 3 * self._pos[bus_id] + phase

    def injection_col(self, bus_id: int, phase: int) -> int:
        return 3 * self._pos[bus_id] + phase

    def voltage_col(self, bus_id: int, phase: int) -> int:
        return 3 * len(self.bus_order) + 3 * self._pos[bus_id] + phase

    def _selector(self, buses: list[int]) -> np.ndarray:
        """0/1 matrix picking [injections of buses...; voltages of buses...] from d."""
        b = len(self.bus_order)
        t = np.zeros((6 * len(buses), 6 * b))
        r = 0
        for bus in buses:
            for ph in range(3):
                t[r, self.injection_col(bus, ph)] = 1.0
                r += 1
        for bus in buses:
            for ph in range(3):
                t[r, self.voltage_col(bus, ph)] = 1.0
                r += 1
        return t

    # -- vector assembly ----------------------------------------------
    def build_d(self, injections: dict[int, np.ndarray], voltages: dict[int, np.ndarray]) -> np.ndarray:
        b = len(self.bus_order)
        d = np.zeros(6 * b, dtype=complex)
        for bus, vec in injections.items():
            d[self.injection_col(bus, 0):self.injection_col(bus, 0) + 3] = vec
        for bus, vec in voltages.items():
            d[self.voltage_col(bus, 0):self.voltage_col(bus, 0) + 3] = vec
        return d

    def build_da(self, injections: dict[int, np.ndarray], voltages: dict[int, np.ndarray]) -> np.ndarray:
        """Metered measurement vector: [inj(metered buses); volt(metered buses)]."""
        missing = [b for b in self.metered if b not in injections or b not in voltages]
        if missing:
            raise GridModelError(f"missing metered streams for buses {missing}")
        da = np.zeros(6 * len(self.metered), dtype=complex)
        k = len(self.metered)
        for i, bus in enumerate(self.metered):
            da[3 * i:3 * i + 3] = injections[bus]
            da[3 * (k + i):3 * (k + i) + 3] = voltages[bus]
        return da

    def split_d(self, d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(d_u, d_a) partition of a full stacked vector."""
        return self.t_u @ d, self.t_a @ d

    # -- sanity -------------------------------------------------------
    def check_invariants(self):
        b = len(self.bus_order)
        k = len(self.metered)
        assert self.h.shape == (3 * b, 6 * b)
        assert self.h_a.shape == (3 * b, 6 * k)
        assert self.h_u.shape == (3 * b, 6 * (b - k))
        t = np.vstack([self.t_u, self.t_a])
        assert t.shape == (6 * b, 6 * b)
        # partition is disjoint and complete: T is a permutation
        assert np.array_equal(t.T @ t, np.eye(6 * b))
        # Ybus block structure: off-diagonal blocks are -series admittance
        for ln in self.topology.lines:
            fs = slice(self.row(ln.from_bus, 0), self.row(ln.from_bus, 0) + 3)
            ts = slice(self.row(ln.to_bus, 0), self.row(ln.to_bus, 0) + 3)
            assert np.allclose(self.ybus[fs, ts], -ln.y_series_pu)


def assemble_system(topology: GridTopology) -> SystemMatrices:
    return SystemMatrices(topology)


def smallest_left_singular_direction(h_u: np.ndarray) -> np.ndarray:
    """Left singular vector for the smallest singular value of ``h_u``.

    The sign/phase ambiguity is fixed by rotating the largest-magnitude
    entry to the positive real axis, so repeated calls are reproducible.
    """
    if h_u.size == 0:
        raise GridModelError("h_u has no columns; every bus is metered")
    u, s, _ = np.linalg.svd(h_u)
    vec = u[:, np.argmin(s)]
    pivot = np.argmax(np.abs(vec))
    phase = vec[pivot] / abs(vec[pivot])
    return vec * np.conj(phase)


# ---------------------------------------------------------------------------
# topology (de)serialization
# ---------------------------------------------------------------------------

TOPOLOGY_SCHEMA = "phasorwatch/topology/1"


def _cmat_to_json(m: np.ndarray) -> list:
    return [[[float(v.real), float(v.imag)] for v in row] for row in np.asarray(m, dtype=complex)]


def _cmat_from_json(rows: list) -> np.ndarray:
    return np.array([[complex(v[0], v[1]) for v in row] for row in rows])


def topology_to_dict(top: GridTopology) -> dict:
    return {
        "_schema": TOPOLOGY_SCHEMA,
        "s_base_mva": top.s_base_mva,
        "buses": [
            {"id": b.id, "kv_base": b.kv_base, "slack": bool(b.slack)} for b in top.buses
        ],
        "lines": [
            {
                "id": ln.line_id,
                "from": ln.from_bus,
                "to": ln.to_bus,
                "phasing": ln.phasing,
                "z_series_pu": _cmat_to_json(ln.z_series_pu),
                "y_series_pu": _cmat_to_json(ln.y_series_pu),
                "y_shunt_pu": _cmat_to_json(ln.y_shunt_pu),
            }
            for ln in top.lines
        ],
        "metered_buses": list(top.metered_buses),
    }


def topology_from_dict(data: dict) -> GridTopology:
    if data.get("_schema") != TOPOLOGY_SCHEMA:
        raise GridModelError(f"unsupported topology schema {data.get('_schema')!r}")
    buses = [Bus(b["id"], b["kv_base"], bool(b.get("slack", False))) for b in data["buses"]]
    lines = [
        LineModel(
            line_id=d["id"],
            from_bus=d["from"],
            to_bus=d["to"],
            phasing=d["phasing"],
            z_series_pu=_cmat_from_json(d["z_series_pu"]),
            y_series_pu=_cmat_from_json(d["y_series_pu"]),
            y_shunt_pu=_cmat_from_json(d["y_shunt_pu"]),
        )
        for d in data["lines"]
    ]
    return GridTopology(
        buses=buses,
        lines=lines,
        metered_buses=list(data.get("metered_buses", [])),
        s_base_mva=float(data.get("s_base_mva", 1.0)),
    )


def save_topology(top: GridTopology, path) -> None:
    with open(path, "w") as f:
        json.dump(topology_to_dict(top), f, indent=1, sort_keys=True)
        f.write("\n")


def load_topology(path) -> GridTopology:
    with open(path) as f:
        return topology_from_dict(json.load(f))
