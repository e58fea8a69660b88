"""End-to-end flows behind the CLI: simulate, detect, replay.

A *dataset* directory holds the detector-facing topology, the emitted
phasor streams and the ground truth of one simulated scenario.  Detection
reads a dataset, evaluates the configured metrics tick by tick, runs one
CUSUM per metric, groups events into episodes, cross-checks declared
topology changes against detected transients and writes the report
(CSV + JSONL + JSON, optionally with rendered figures).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import feeders, storage
from .cusum import CusumDetector, calibrate, group_episodes
from .grid import GridTopology, assemble_system, load_topology, topology_to_dict
from .metrics import DoublePmuMetric, MultiPmuMetric, SinglePmuMetric
from .sim import (DriftProfile, FeederSimulator, LoadProfile, SimulationConfig,
                  parse_script, script_to_dict)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def parse_sim_config(doc: dict, base_dir: Path | None = None):
    """(topology, loads, SimulationConfig) from a scenario-config dict."""
    doc = dict(doc)
    doc.pop("_schema", None)
    feeder = doc.pop("feeder", "ieee34")
    topo_path = doc.pop("topology_path", None)
    loads_doc = doc.pop("loads", None)
    load_kind = doc.pop("load_kind", "impedance")
    walk = float(doc.pop("load_walk_std", 0.0))
    drift = DriftProfile(
        amplitude=float(doc.pop("drift_amplitude", 0.02)),
        freq_hz=float(doc.pop("drift_freq_hz", 0.1)),
    )
    if topo_path is not None:
        p = Path(topo_path)
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        if not p.exists():
            raise ConfigError(f"topology path does not exist: {p}")
        topology = load_topology(p)
        loads = {}
    else:
        try:
            topology, loads = feeders.by_name(feeder)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if loads_doc is not None:
        loads = {int(b): np.array([complex(v[0], v[1]) for v in vec])
                 for b, vec in loads_doc.items()}
    known = {"duration_ticks", "f0", "report_hz", "fs", "slack_vmag",
             "noise_std_pu", "waveforms", "seed"}
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"unknown scenario-config keys: {sorted(extra)}")
    try:
        config = SimulationConfig(drift=drift, **doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad scenario config: {exc}") from exc
    profile = LoadProfile(loads, kind=load_kind, walk_std=walk)
    return topology, profile, config


def run_simulation(out_dir, topology: GridTopology, loads: LoadProfile,
                   config: SimulationConfig, script_doc: dict | None = None) -> dict:
    """Run one scenario and write the dataset directory."""
    out = storage.ensure_dir(out_dir)
    script = parse_script(script_doc or {"events": []})
    sim = FeederSimulator(topology, loads, config)
    res = sim.run(script)

    save_topology_with_declared(out / "topology.json", res.detector_topology,
                                res.declared_changes)
    storage.write_phasors_csv(out / "phasors.csv", res.emitted_v, res.emitted_i, res.valid)
    storage.write_json(out / "truth.json", {
        "events": res.labels,
        "duration_ticks": int(config.duration_ticks),
        "max_solve_residual": res.max_residual,
    }, "truth")
    storage.write_json(out / "scenario.json", {
        "config": _config_echo(config, loads),
        "script": script_to_dict(script)["events"],
    }, "scenario")
    if res.waveforms is not None:
        storage.write_waveforms_csv(out / "waveforms.csv", res.waveforms, config.fs)
    return {"out_dir": str(out), "ticks": int(config.duration_ticks),
            "valid_ticks": int(res.valid.sum()), "result": res}


def save_topology_with_declared(path, topology: GridTopology, declared: list[dict]) -> None:
    doc = topology_to_dict(topology)
    doc["declared_topology_changes"] = declared
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def _config_echo(config: SimulationConfig, loads: LoadProfile) -> dict:
    return {
        "duration_ticks": config.duration_ticks,
        "f0": config.f0,
        "report_hz": config.report_hz,
        "fs": config.fs,
        "slack_vmag": config.slack_vmag,
        "noise_std_pu": config.noise_std_pu,
        "waveforms": config.waveforms,
        "seed": config.seed,
        "drift_amplitude": config.drift.amplitude,
        "drift_freq_hz": config.drift.freq_hz,
        "load_kind": loads.kind,
        "load_walk_std": loads.walk_std,
        "loads": {str(b): [[v.real, v.imag] for v in vec]
                  for b, vec in sorted(loads.s_pu.items())},
    }


# ---------------------------------------------------------------------------
# metric evaluation over a stream dictionary
# ---------------------------------------------------------------------------

@dataclass
class DetectOptions:
    metrics: tuple = ("single", "double", "multi")
    mode: str = "auto"
    m_single: int = 6
    m_double: int = 32
    alpha: float = 200.0
    rho: float = 0.98
    delta_sigma_ratio: float = 10.0
    completion_window: int = 24
    warmup_ticks: int = 16
    calib_ticks: int = 48
    figures: bool = False
    skipped: dict = field(default_factory=dict)


def compute_metric_series(topology: GridTopology, streams: dict[int, dict],
                          opts: DetectOptions) -> dict[str, list[tuple[int, float]]]:
    """Evaluate every configured metric over per-tick phasor streams.

    streams is the structure returned by ``storage.read_phasors_csv``.
    Ticks with a missing or non-finite required stream are skipped for the
    affected metric (counted in opts.skipped).
    """
    ticks = sorted(streams)
    if not ticks:
        return {}
    first = streams[ticks[0]]
    metered = sorted(first["v"])
    i_keys = sorted({key for k in ticks for key in streams[k]["i"]})

    singles = []
    if "single" in opts.metrics:
        singles = [(SinglePmuMetric(bus, line, opts.m_single), bus, line)
                   for bus, line in i_keys]
    doubles = []
    if "double" in opts.metrics:
        for ln in topology.lines:
            pair = {(ln.from_bus, ln.line_id), (ln.to_bus, ln.line_id)}
            if pair <= set(i_keys) and {ln.from_bus, ln.to_bus} <= set(metered):
                doubles.append((DoublePmuMetric(ln.line_id, opts.m_double),
                                ln.from_bus, ln.to_bus, ln.line_id))
    multi = None
    if "multi" in opts.metrics and topology.metered_buses:
        system = assemble_system(topology)
        multi = MultiPmuMetric(system, mode=opts.mode)

    series: dict[str, list[tuple[int, float]]] = {}

    def emit(metric_id: str, k: int, x):
        if x is None:
            return
        if not np.isfinite(x):
            opts.skipped[metric_id] = opts.skipped.get(metric_id, 0) + 1
            return
        series.setdefault(metric_id, []).append((k, float(x)))

    for k in ticks:
        tick = streams[k]
        v, i = tick["v"], tick["i"]
        for m, bus, line in singles:
            if bus in v and (bus, line) in i and _finite(v[bus], i[(bus, line)]):
                emit(m.metric_id, k, m.update(k, i[(bus, line)], v[bus]))
            else:
                opts.skipped[m.metric_id] = opts.skipped.get(m.metric_id, 0) + 1
        for m, fb, tb, line in doubles:
            ok = (fb in v and tb in v and (fb, line) in i and (tb, line) in i
                  and _finite(v[fb], v[tb], i[(fb, line)], i[(tb, line)]))
            if ok:
                emit(m.metric_id, k, m.update(k, i[(fb, line)], i[(tb, line)], v[fb], v[tb]))
            else:
                opts.skipped[m.metric_id] = opts.skipped.get(m.metric_id, 0) + 1
        if multi is not None:
            inj, volt, ok = {}, {}, True
            for bus in multi.system.metered:
                lines_here = topology.lines_at(bus)
                if bus not in v or not _finite(v[bus]) or not lines_here:
                    ok = False
                    break
                tot = np.zeros(3, dtype=complex)
                for ln in lines_here:
                    key = (bus, ln.line_id)
                    if key not in i or not _finite(i[key]):
                        ok = False
                        break
                    tot += i[key]
                if not ok:
                    break
                inj[bus], volt[bus] = tot, v[bus]
            if ok:
                emit("multi", k, multi.update(k, inj, volt))
            else:
                opts.skipped["multi"] = opts.skipped.get("multi", 0) + 1
    return series


def _finite(*vecs) -> bool:
    return all(np.all(np.isfinite(v)) for v in vecs)


# ---------------------------------------------------------------------------
# detection on metric series
# ---------------------------------------------------------------------------

def detect_on_series(series: dict[str, list[tuple[int, float]]],
                     calib_series: dict[str, list[tuple[int, float]]],
                     opts: DetectOptions):
    """Run one CUSUM per metric; returns (events, episodes, configs)."""
    events = []
    configs = {}
    for metric_id in sorted(series):
        pairs = series[metric_id]
        calib_pairs = calib_series.get(metric_id)
        if calib_pairs is None or len(calib_pairs) < 8:
            calib_pairs = pairs[: max(8, min(opts.calib_ticks, len(pairs) // 2))]
        xs = np.array([x for _, x in calib_pairs])
        cfg = calibrate(xs, metric_id, rho=opts.rho, alpha=opts.alpha,
                        delta_sigma_ratio=opts.delta_sigma_ratio,
                        completion_window=opts.completion_window)
        cfg.warmup_ticks = opts.warmup_ticks
        configs[metric_id] = cfg
        det = CusumDetector(metric_id, cfg, mu0=float(np.mean(xs)))
        for k, x in pairs:
            ev = det.update(k, x)
            if ev is not None:
                events.append(ev)
    episodes = group_episodes(events, opts.completion_window)
    return events, episodes, configs


def check_topology_claims(declared: list[dict], episodes, window: int) -> list[dict]:
    """Flag declared switching operations with no detected transient nearby."""
    out = []
    for claim in declared:
        at = claim.get("at_tick")
        hit = any(ep.start_tick <= at + window and ep.end_tick >= at - window
                  for ep in episodes)
        if not hit:
            out.append({
                "line": claim.get("line"),
                "action": claim.get("action"),
                "at_tick": at,
                "detected_transient": False,
                "note": "declared switching is not accompanied by any detected transient",
            })
    return out


def run_detection(dataset_dir, out_dir, opts: DetectOptions | None = None,
                  calibrate_from=None) -> dict:
    """Detect anomalies in a dataset directory and write the report."""
    opts = opts or DetectOptions()
    ds = Path(dataset_dir)
    topo_path = ds / "topology.json"
    if not topo_path.exists():
        raise ConfigError(f"topology path does not exist: {topo_path}")
    topology = load_topology(topo_path)
    with open(topo_path) as f:
        declared = json.load(f).get("declared_topology_changes", [])
    streams = storage.read_phasors_csv(ds / "phasors.csv")
    series = compute_metric_series(topology, streams, opts)

    if calibrate_from is not None:
        calib_ds = Path(calibrate_from)
        calib_streams = storage.read_phasors_csv(calib_ds / "phasors.csv")
        calib_series = compute_metric_series(topology, calib_streams, opts)
    else:
        calib_series = {}

    events, episodes, configs = detect_on_series(series, calib_series, opts)
    inconsistencies = check_topology_claims(declared, episodes, opts.completion_window)

    out = storage.ensure_dir(out_dir)
    storage.write_metrics_csv(out / "metrics.csv", series)
    storage.write_events_jsonl(out / "events.jsonl", events)
    storage.write_json(out / "episodes.json",
                       storage.episodes_payload(episodes, inconsistencies, declared),
                       "episodes")
    figure_paths = []
    if opts.figures:
        from . import report
        truth = None
        truth_path = ds / "truth.json"
        if truth_path.exists():
            truth = storage.read_json(truth_path, "truth").get("events", [])
        figure_paths = report.render_figures(out / "figures", series, events,
                                             episodes, truth)
    return {
        "series": series, "events": events, "episodes": episodes,
        "configs": configs, "inconsistencies": inconsistencies,
        "out_dir": str(out), "figures": [str(p) for p in figure_paths],
        "skipped": dict(opts.skipped),
    }


def run_replay(metrics_csv, out_dir, opts: DetectOptions | None = None,
               calibrate_from=None) -> dict:
    """Re-run detection on a stored metric series."""
    opts = opts or DetectOptions()
    path = Path(metrics_csv)
    if not path.exists():
        raise ConfigError(f"metrics file does not exist: {path}")
    series = storage.read_metrics_csv(path)
    calib_series = {}
    if calibrate_from is not None:
        calib_series = storage.read_metrics_csv(Path(calibrate_from))
    events, episodes, configs = detect_on_series(series, calib_series, opts)
    out = storage.ensure_dir(out_dir)
    storage.write_events_jsonl(out / "events.jsonl", events)
    storage.write_json(out / "episodes.json",
                       storage.episodes_payload(episodes, [], []), "episodes")
    figure_paths = []
    if opts.figures:
        from . import report
        figure_paths = report.render_figures(out / "figures", series, events, episodes, None)
    return {"series": series, "events": events, "episodes": episodes,
            "configs": configs, "out_dir": str(out),
            "figures": [str(p) for p in figure_paths]}
