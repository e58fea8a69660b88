"""Quasi-static phasor-domain feeder simulator.

Each reporting tick solves the three-phase network with the currently
active events applied (faults split the line at the fault position and
add a fault admittance at the split node; outages remove the line and
de-energize any island that loses its path to the slack bus).  A common
slow frequency drift rotates every emitted phasor, sensor tampering is
applied to the emitted streams only, and topology lies alter only the
connectivity handed to the detector, never the physics.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .grid import GridTopology, LineModel, build_ybus

SLACK_SEQ = np.array([1.0, np.exp(-2j * np.pi / 3), np.exp(2j * np.pi / 3)])


class SimulationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# scripted events
# ---------------------------------------------------------------------------

@dataclass
class SlgFault:
    at_tick: int
    line: str
    position: float = 0.5
    phase: str = "a"
    fault_admittance_pu: float = 100.0
    clear_tick: int | None = None

    def __post_init__(self):
        if not 0.0 < self.position < 1.0:
            raise SimulationError("fault position must be inside (0, 1)")
        if self.phase not in "abc" or len(self.phase) != 1:
            raise SimulationError(f"bad phase {self.phase!r}")
        if self.clear_tick is not None and self.clear_tick <= self.at_tick:
            raise SimulationError("clear_tick must come after at_tick")

    @property
    def phases(self) -> list[int]:
        return ["abc".index(self.phase)]


@dataclass
class ThreePhaseFault:
    at_tick: int
    line: str
    position: float = 0.5
    fault_admittance_pu: float = 100.0
    clear_tick: int | None = None

    def __post_init__(self):
        if not 0.0 < self.position < 1.0:
            raise SimulationError("fault position must be inside (0, 1)")
        if self.clear_tick is not None and self.clear_tick <= self.at_tick:
            raise SimulationError("clear_tick must come after at_tick")

    @property
    def phases(self) -> list[int]:
        return [0, 1, 2]


@dataclass
class LineOutage:
    at_tick: int
    line: str


@dataclass
class FreezeSensor:
    at_tick: int
    bus: int
    to_tick: int | None = None


@dataclass
class TopologyLie:
    at_tick: int
    action: str  # declare_line_out | declare_line_in
    line: str

    def __post_init__(self):
        if self.action not in ("declare_line_out", "declare_line_in"):
            raise SimulationError(f"bad topology_lie action {self.action!r}")


EVENT_KINDS = {
    "slg_fault": SlgFault,
    "three_phase_fault": ThreePhaseFault,
    "line_outage": LineOutage,
    "freeze_sensor": FreezeSensor,
    "topology_lie": TopologyLie,
}


def parse_script(data: dict) -> list:
    """Build event objects from a scenario-script dictionary."""
    events = []
    last = -1
    for entry in data.get("events", []):
        entry = dict(entry)
        kind = entry.pop("kind", None)
        if kind not in EVENT_KINDS:
            raise SimulationError(f"unknown event kind {kind!r}")
        if kind == "freeze_sensor" and "from_tick" in entry:
            entry["at_tick"] = entry.pop("from_tick")
        try:
            ev = EVENT_KINDS[kind](**entry)
        except TypeError as exc:
            raise SimulationError(f"bad fields for {kind}: {exc}") from exc
        if ev.at_tick < last:
            raise SimulationError("script events must be ordered by at_tick")
        last = ev.at_tick
        events.append(ev)
    return events


def script_to_dict(events: list) -> dict:
    out = []
    for ev in events:
        d = {"kind": next(k for k, cls in EVENT_KINDS.items() if isinstance(ev, cls))}
        d.update({k: v for k, v in ev.__dict__.items() if v is not None})
        out.append(d)
    return {"_schema": "phasorwatch/scenario/1", "events": out}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class DriftProfile:
    """Common rotating-phase drift in radians per reporting tick."""

    amplitude: float = 0.02
    freq_hz: float = 0.1

    def beta(self, ticks: np.ndarray, report_hz: int) -> np.ndarray:
        t = np.asarray(ticks, dtype=float) / report_hz
        return self.amplitude * np.sin(2.0 * np.pi * self.freq_hz * t)


@dataclass
class LoadProfile:
    """Spot loads in complex pu; constant-impedance or constant-current.

    walk_std is the relative standard deviation per tick of a smooth
    multiplicative random walk on each bus-phase load magnitude.
    """

    s_pu: dict[int, np.ndarray]
    kind: str = "impedance"
    walk_std: float = 0.0

    def __post_init__(self):
        if self.kind not in ("impedance", "current"):
            raise SimulationError(f"bad load kind {self.kind!r}")
        for bus, s in self.s_pu.items():
            s = np.asarray(s, dtype=complex)
            if s.shape != (3,):
                raise SimulationError(f"load at bus {bus} must have 3 phases")
            if np.any(s.real < 0):
                raise SimulationError(f"load at bus {bus} is not passive")
            self.s_pu[bus] = s


@dataclass
class SimulationConfig:
    duration_ticks: int = 240
    f0: int = 60
    report_hz: int = 120
    fs: int = 7680
    slack_vmag: float = 1.0
    drift: DriftProfile = field(default_factory=DriftProfile)
    noise_std_pu: float = 1e-4
    waveforms: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.duration_ticks < 2:
            raise SimulationError("need at least two ticks")
        if self.fs % self.report_hz != 0 or self.fs % (2 * self.f0) != 0:
            raise SimulationError("fs must be a multiple of the reporting rate and 2*f0")


# ---------------------------------------------------------------------------
# network variants (nominal / faulted / outaged)
# ---------------------------------------------------------------------------

@dataclass
class NetworkVariant:
    bus_order: list[int]
    lines: list[LineModel]
    shunts: dict[int, np.ndarray]                 # fault admittance at split nodes
    split: dict[str, tuple[LineModel, LineModel, int]]  # line_id -> (segA, segB, fault bus)
    energized: set[int]
    present: dict[int, np.ndarray]                # bus -> bool mask of live phases


def build_variant(top: GridTopology, faults: list, outages: list) -> NetworkVariant:
    lines = list(top.lines)
    shunts: dict[int, np.ndarray] = {}
    split: dict[str, tuple[LineModel, LineModel, int]] = {}
    bus_order = list(top.bus_ids)
    next_virtual = max(bus_order) + 1

    for out in outages:
        before = len(lines)
        lines = [ln for ln in lines if ln.line_id != out.line]
        if len(lines) == before:
            raise SimulationError(f"line_outage references unknown line {out.line}")

    for flt in faults:
        target = next((ln for ln in lines if ln.line_id == flt.line), None)
        if target is None:
            raise SimulationError(f"fault references unknown or outaged line {flt.line}")
        vb = next_virtual
        next_virtual += 1
        seg_a = target.scaled(flt.position, f"{flt.line}#a", target.from_bus, vb)
        seg_b = target.scaled(1.0 - flt.position, f"{flt.line}#b", vb, target.to_bus)
        lines = [ln for ln in lines if ln.line_id != flt.line] + [seg_a, seg_b]
        split[flt.line] = (seg_a, seg_b, vb)
        bus_order.append(vb)
        y_f = np.zeros((3, 3), dtype=complex)
        for ph in flt.phases:
            y_f[ph, ph] = flt.fault_admittance_pu
        shunts[vb] = y_f

    # connectivity from the slack decides which buses stay energized
    adj: dict[int, set[int]] = {b: set() for b in bus_order}
    for ln in lines:
        adj[ln.from_bus].add(ln.to_bus)
        adj[ln.to_bus].add(ln.from_bus)
    slack = top.slack_bus
    energized = {slack}
    stack = [slack]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in energized:
                energized.add(nb)
                stack.append(nb)

    present: dict[int, np.ndarray] = {b: np.zeros(3, dtype=bool) for b in bus_order}
    present[slack][:] = True
    for ln in lines:
        mask = np.zeros(3, dtype=bool)
        mask[ln.phase_idx] = True
        present[ln.from_bus] |= mask
        present[ln.to_bus] |= mask
    return NetworkVariant(bus_order, lines, shunts, split, energized, present)


# ---------------------------------------------------------------------------
# the simulator
# ---------------------------------------------------------------------------

@dataclass
class TickSolution:
    voltages: dict[int, np.ndarray]                    # bus -> 3 complex (pu)
    line_currents: dict[tuple[str, int], np.ndarray]   # (line_id, end bus) -> 3 complex
    injections: dict[int, np.ndarray]
    residual: float


@dataclass
class ScenarioResult:
    ticks: np.ndarray
    beta: np.ndarray
    phi: np.ndarray
    truth_v: dict[int, np.ndarray]                     # bus -> (T, 3), drift applied
    truth_i: dict[tuple[str, int], np.ndarray]
    emitted_v: dict[int, np.ndarray]                   # metered bus -> (T, 3), nan where absent
    emitted_i: dict[tuple[int, str], np.ndarray]       # (bus, line_id) -> (T, 3)
    valid: np.ndarray                                  # bool mask of emitted ticks
    labels: list[dict]
    declared_changes: list[dict]
    detector_topology: GridTopology
    waveforms: dict[str, np.ndarray] | None
    waveform_fs: int
    max_residual: float


class FeederSimulator:
    def __init__(self, topology: GridTopology, loads: LoadProfile | dict,
                 config: SimulationConfig | None = None):
        self.top = topology
        self.loads = loads if isinstance(loads, LoadProfile) else LoadProfile(dict(loads))
        self.cfg = config or SimulationConfig()
        unknown = [b for b in self.loads.s_pu if b not in set(topology.bus_ids)]
        if unknown:
            raise SimulationError(f"loads reference unknown buses {unknown}")
        self._variants: dict = {}

    # -- single-tick solve --------------------------------------------
    def solve_quasi_steady(self, variant: NetworkVariant,
                           load_scale: dict[int, np.ndarray] | None = None) -> TickSolution:
        order = variant.bus_order
        pos = {b: i for i, b in enumerate(order)}
        n = 3 * len(order)
        y_net = build_ybus(order, variant.lines)
        for bus, y_f in variant.shunts.items():
            s = slice(3 * pos[bus], 3 * pos[bus] + 3)
            y_net[s, s] += y_f

        a_full = y_net.copy()
        b_full = np.zeros(n, dtype=complex)
        for bus, s_load in self.loads.s_pu.items():
            scale = load_scale.get(bus, np.ones(3)) if load_scale else np.ones(3)
            s_eff = s_load * scale
            rows = slice(3 * pos[bus], 3 * pos[bus] + 3)
            if self.loads.kind == "impedance":
                # y = conj(S) at 1 pu nominal voltage, per phase on the diagonal
                a_full[rows, rows] += np.diag(np.conj(s_eff))
            else:
                v_nom = SLACK_SEQ * self.cfg.slack_vmag
                b_full[rows] -= np.conj(s_eff / v_nom)

        slack = self.top.slack_bus
        a = a_full.copy()
        b = b_full.copy()
        fixed = np.zeros(n, dtype=bool)
        srow = 3 * pos[slack]
        a[srow:srow + 3, :] = 0.0
        a[srow:srow + 3, srow:srow + 3] = np.eye(3)
        b[srow:srow + 3] = SLACK_SEQ * self.cfg.slack_vmag
        fixed[srow:srow + 3] = True
        for bus in order:
            mask = variant.present[bus] & (bus in variant.energized)
            for ph in range(3):
                if bus == slack or mask[ph]:
                    continue
                r = 3 * pos[bus] + ph
                a[r, :] = 0.0
                a[r, r] = 1.0
                b[r] = 0.0
                fixed[r] = True

        v = np.linalg.solve(a, b)
        free = ~fixed
        resid = float(np.linalg.norm(a_full[free] @ v - b_full[free]))
        scale_ref = max(float(np.linalg.norm(b_full)), 1.0)
        if resid > 1e-8 * scale_ref:
            raise SimulationError(f"network solve residual {resid:.3e} too large")

        voltages = {bus: v[3 * pos[bus]:3 * pos[bus] + 3].copy() for bus in order}
        currents: dict[tuple[str, int], np.ndarray] = {}
        for ln in variant.lines:
            vf, vt = voltages[ln.from_bus], voltages[ln.to_bus]
            currents[(ln.line_id, ln.from_bus)] = ln.current_into(vf, vt)
            currents[(ln.line_id, ln.to_bus)] = ln.current_into(vt, vf)
        # report split segments under the original line id at the real ends
        for line_id, (seg_a, seg_b, _vb) in variant.split.items():
            currents[(line_id, seg_a.from_bus)] = currents.pop((seg_a.line_id, seg_a.from_bus))
            currents[(line_id, seg_b.to_bus)] = currents.pop((seg_b.line_id, seg_b.to_bus))

        injections: dict[int, np.ndarray] = {}
        for bus in self.top.bus_ids:
            tot = np.zeros(3, dtype=complex)
            for key, cur in currents.items():
                if key[1] == bus:
                    tot = tot + cur
            injections[bus] = tot
        return TickSolution(voltages, currents, injections, resid)

    def _variant_for(self, faults: tuple, outages: tuple) -> NetworkVariant:
        key = (faults, outages)
        if key not in self._variants:
            f = [ev for ev in self._all_events if id(ev) in faults]
            o = [ev for ev in self._all_events if id(ev) in outages]
            self._variants[key] = build_variant(self.top, f, o)
        return self._variants[key]

    # -- scenario run -------------------------------------------------
    def run(self, script: list | None = None) -> ScenarioResult:
        script = script or []
        self._all_events = script
        self._variants = {}
        cfg = self.cfg
        t_ticks = np.arange(cfg.duration_ticks)
        beta = cfg.drift.beta(t_ticks, cfg.report_hz)
        phi = np.cumsum(beta)
        rng = np.random.default_rng(cfg.seed)
        walk_rng, noise_rng = rng.spawn(2)

        faults = [ev for ev in script if isinstance(ev, (SlgFault, ThreePhaseFault))]
        outages = [ev for ev in script if isinstance(ev, LineOutage)]
        freezes = [ev for ev in script if isinstance(ev, FreezeSensor)]
        lies = [ev for ev in script if isinstance(ev, TopologyLie)]

        load_ids = sorted(self.loads.s_pu)
        walk = {b: np.ones(3) for b in load_ids}

        line_ends = [(ln.line_id, ln.from_bus) for ln in self.top.lines]
        line_ends += [(ln.line_id, ln.to_bus) for ln in self.top.lines]
        t_n = cfg.duration_ticks
        truth_v = {b: np.zeros((t_n, 3), dtype=complex) for b in self.top.bus_ids}
        truth_i = {k: np.zeros((t_n, 3), dtype=complex) for k in line_ends}
        max_resid = 0.0

        for k in range(t_n):
            if self.loads.walk_std > 0.0:
                for b in load_ids:
                    step = 1.0 + self.loads.walk_std * walk_rng.standard_normal(3)
                    walk[b] = np.clip(walk[b] * step, 0.1, 10.0)
            active_f = tuple(id(ev) for ev in faults
                             if ev.at_tick <= k < (ev.clear_tick if ev.clear_tick is not None else t_n))
            active_o = tuple(id(ev) for ev in outages if ev.at_tick <= k)
            variant = self._variant_for(active_f, active_o)
            sol = self.solve_quasi_steady(variant, {b: walk[b] for b in load_ids})
            max_resid = max(max_resid, sol.residual)
            rot = np.exp(1j * phi[k])
            for b in self.top.bus_ids:
                truth_v[b][k] = sol.voltages[b] * rot
            for key in line_ends:
                truth_i[key][k] = sol.line_currents.get(key, np.zeros(3)) * rot

        # ---- emitted streams for metered buses ----
        metered = self.top.metered_buses
        chan_v = {b: truth_v[b] for b in metered}
        chan_i = {}
        for b in metered:
            for ln in self.top.lines_at(b):
                chan_i[(b, ln.line_id)] = truth_i[(ln.line_id, b)]

        waveforms = None
        valid = np.ones(t_n, dtype=bool)
        if cfg.waveforms:
            waveforms = {}
            emitted_v = {}
            emitted_i = {}
            # synthesize from drift-free phasors, drift applied inside
            for b in metered:
                emitted_v[b], ticks_ok = self._through_dsp(
                    truth_v[b] * np.exp(-1j * phi)[:, None], beta, waveforms, f"{b}.V")
            for key, series in chan_i.items():
                b, line_id = key
                emitted_i[key], ticks_ok = self._through_dsp(
                    series * np.exp(-1j * phi)[:, None], beta, waveforms, f"{b}.I.{line_id}")
            valid = np.zeros(t_n, dtype=bool)
            valid[ticks_ok] = True
        else:
            emitted_v = {b: arr.copy() for b, arr in chan_v.items()}
            emitted_i = {k: arr.copy() for k, arr in chan_i.items()}

        if cfg.noise_std_pu > 0.0:
            sd = cfg.noise_std_pu / np.sqrt(2.0)
            for arr in list(emitted_v.values()) + list(emitted_i.values()):
                noise = noise_rng.standard_normal(arr.shape) + 1j * noise_rng.standard_normal(arr.shape)
                arr += sd * noise

        for fz in freezes:
            if fz.bus not in metered:
                raise SimulationError(f"freeze_sensor bus {fz.bus} is not metered")
            k_from = fz.at_tick
            k_to = fz.to_tick if fz.to_tick is not None else t_n
            hold = k_from - 1
            if hold < 0 or not valid[hold]:
                raise SimulationError("freeze_sensor needs a valid pre-freeze sample")
            sel = slice(k_from, k_to)
            emitted_v[fz.bus][sel] = emitted_v[fz.bus][hold]
            for key in emitted_i:
                if key[0] == fz.bus:
                    emitted_i[key][sel] = emitted_i[key][hold]

        # ---- detector-facing topology and ground-truth labels ----
        detector_top = self.top
        declared = []
        for lie in lies:
            if lie.action == "declare_line_out":
                detector_top = detector_top.without_line(lie.line)
            declared.append({"line": lie.line, "action": lie.action, "at_tick": lie.at_tick})

        labels = []
        for ev in faults:
            labels.append({
                "kind": "slg_fault" if isinstance(ev, SlgFault) else "three_phase_fault",
                "line": ev.line,
                "start_tick": ev.at_tick,
                "end_tick": ev.clear_tick if ev.clear_tick is not None else t_n,
            })
        for ev in outages:
            labels.append({"kind": "line_outage", "line": ev.line,
                           "start_tick": ev.at_tick, "end_tick": t_n})
        for ev in freezes:
            labels.append({"kind": "freeze_sensor", "bus": ev.bus,
                           "start_tick": ev.at_tick,
                           "end_tick": ev.to_tick if ev.to_tick is not None else t_n})

        return ScenarioResult(
            ticks=t_ticks, beta=beta, phi=phi,
            truth_v=truth_v, truth_i=truth_i,
            emitted_v=emitted_v, emitted_i=emitted_i, valid=valid,
            labels=labels, declared_changes=declared,
            detector_topology=detector_top,
            waveforms=waveforms, waveform_fs=cfg.fs,
            max_residual=max_resid,
        )

    def _through_dsp(self, driftfree: np.ndarray, beta: np.ndarray,
                     waveforms: dict, prefix: str):
        """Synthesize point-on-wave data per phase and re-extract phasors."""
        cfg = self.cfg
        t_n = driftfree.shape[0]
        out = np.full((t_n, 3), np.nan + 0j, dtype=complex)
        ticks_ok = None
        filt = dsp.design_pclass_filter(cfg.f0, cfg.fs)
        for ph, name in enumerate(("a", "b", "c")):
            samples = synthesize_waveform(driftfree[:, ph], beta, cfg.fs,
                                          cfg.f0, cfg.report_hz)
            waveforms[f"{prefix}.{name}"] = samples
            seg = dsp.WaveformSegment(f"{prefix}.{name}", 0.0, cfg.fs, samples)
            ks, ph_vals = dsp.extract_phasor_stream(seg, filt, cfg.f0, cfg.report_hz)
            keep = ks < t_n
            out[ks[keep], ph] = ph_vals[keep]
            ticks_ok = ks[keep]
        return out, ticks_ok


def synthesize_waveform(phasors: np.ndarray, beta: np.ndarray, fs: int,
                        f0: int = 60, report_hz: int = 120) -> np.ndarray:
    """Point-on-wave synthesis of one channel from drift-free phasor ticks.

    s(t) = sqrt(2) * Re[p(t) * exp(j*(2*pi*f0*t + Phi(t)))] with p linearly
    interpolated between ticks and Phi the integrated drift phase.
    """
    p = np.asarray(phasors, dtype=complex)
    beta = np.asarray(beta, dtype=float)
    if p.shape != beta.shape:
        raise SimulationError("phasor and drift series must align")
    t_n = p.size
    ratio = fs // report_hz
    n = (t_n - 1) * ratio + 1
    t = np.arange(n) / fs
    tick_t = np.arange(t_n) / report_hz
    p_t = np.interp(t, tick_t, p.real) + 1j * np.interp(t, tick_t, p.imag)
    phi_t = np.interp(t, tick_t, np.cumsum(beta))
    return np.sqrt(2.0) * np.real(p_t * np.exp(1j * (2.0 * np.pi * f0 * t + phi_t)))
