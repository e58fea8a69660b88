"""Command-line interface.

Subcommands:
  simulate        run a scripted feeder scenario and write a dataset
  extract-phasors turn point-on-wave CSV data into reporting-rate phasors
  detect          evaluate anomaly metrics + CUSUM over a dataset, write a report
  replay          re-run detection on a stored metric series
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import dsp, pipeline, storage
from .grid import GridModelError
from .pipeline import ConfigError, DetectOptions
from .sim import SimulationError


def _load_json(path, what: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} file does not exist: {p}")
    try:
        with open(p) as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} file {p} is not valid JSON: {exc}") from exc


def cmd_simulate(args) -> int:
    doc = _load_json(args.config, "config") if args.config else {}
    base = Path(args.config).parent if args.config else None
    topology, loads, config = pipeline.parse_sim_config(doc, base)
    if args.feeder:
        from . import feeders
        try:
            topology, raw = feeders.by_name(args.feeder)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        loads = pipeline.LoadProfile(raw, kind=loads.kind, walk_std=loads.walk_std)
    if args.seed is not None:
        config.seed = args.seed
    if args.duration is not None:
        config.duration_ticks = args.duration
    if args.waveforms:
        config.waveforms = True
    script_doc = _load_json(args.script, "script") if args.script else None
    info = pipeline.run_simulation(args.out_dir, topology, loads, config, script_doc)
    print(f"wrote dataset to {info['out_dir']} "
          f"({info['valid_ticks']}/{info['ticks']} ticks)")
    return 0


def cmd_extract_phasors(args) -> int:
    t, channels = storage.read_waveforms_csv(args.waveforms)
    if not channels:
        with open(args.out, "w") as f:
            f.write(f"# {storage.SCHEMAS['phasors']}\n")
            f.write("k,bus,kind,line,phase,re,im\n")
        print(f"no channels in {args.waveforms}; wrote empty {args.out}")
        return 0
    fs = args.fs
    if fs is None:
        if t.size < 2:
            raise ConfigError("cannot infer fs from fewer than two samples")
        fs = round(1.0 / (t[1] - t[0]))
    filt = dsp.design_pclass_filter(args.f0, fs)
    emitted_v: dict = {}
    emitted_i: dict = {}
    t0 = float(t[0]) if t.size else 0.0
    n_ticks = 0
    results = {}
    for name, samples in channels.items():
        bus, kind, line, phase = storage.parse_channel_id(name)
        seg = dsp.WaveformSegment(name, t0, fs, samples)
        ks, ph = dsp.extract_phasor_stream(seg, filt, args.f0)
        results[(bus, kind, line, phase)] = (ks, ph)
        n_ticks = max(n_ticks, (ks.max() + 1) if ks.size else 0)
    import numpy as np
    valid = np.zeros(n_ticks, dtype=bool)
    for (bus, kind, line, phase), (ks, ph) in results.items():
        pidx = "abc".index(phase)
        if kind == "V":
            arr = emitted_v.setdefault(bus, np.full((n_ticks, 3), np.nan + 0j, complex))
        else:
            arr = emitted_i.setdefault((bus, line), np.full((n_ticks, 3), np.nan + 0j, complex))
        arr[ks, pidx] = ph
        valid[ks] = True
    # only emit ticks where every channel produced a sample
    for arr in list(emitted_v.values()) + list(emitted_i.values()):
        valid &= ~np.isnan(arr).any(axis=1)
    storage.write_phasors_csv(args.out, emitted_v, emitted_i, valid)
    print(f"wrote {int(valid.sum())} ticks of phasors to {args.out}")
    return 0


def _detect_options(args) -> DetectOptions:
    opts = DetectOptions()
    if args.config:
        doc = _load_json(args.config, "config")
        doc.pop("_schema", None)
        known = {f for f in DetectOptions.__dataclass_fields__ if f != "skipped"}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown detect-config keys: {sorted(extra)}")
        for key, val in doc.items():
            setattr(opts, key, tuple(val) if key == "metrics" else val)
    if args.metrics:
        opts.metrics = tuple(s.strip() for s in args.metrics.split(",") if s.strip())
        bad = set(opts.metrics) - {"single", "double", "multi"}
        if bad:
            raise ConfigError(f"unknown metric kinds: {sorted(bad)}")
    if args.mode:
        if args.mode not in ("auto", "projector", "min-singular"):
            raise ConfigError(f"unknown mode {args.mode!r}")
        opts.mode = args.mode
    opts.figures = not args.no_figures
    return opts


def cmd_detect(args) -> int:
    opts = _detect_options(args)
    info = pipeline.run_detection(args.dataset, args.out_dir, opts,
                                  calibrate_from=args.calibrate_from)
    print(f"{len(info['events'])} events in {len(info['episodes'])} episodes; "
          f"report in {info['out_dir']}")
    for inc in info["inconsistencies"]:
        print(f"TOPOLOGY INCONSISTENCY: {inc['action']} {inc['line']} at tick "
              f"{inc['at_tick']} has no matching transient")
    return 0


def cmd_replay(args) -> int:
    opts = _detect_options(args)
    info = pipeline.run_replay(args.metrics_csv, args.out_dir, opts,
                               calibrate_from=args.calibrate_from)
    print(f"{len(info['events'])} events in {len(info['episodes'])} episodes; "
          f"report in {info['out_dir']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="phasorwatch",
                                 description="distribution-grid synchrophasor anomaly detection")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scripted feeder scenario")
    p.add_argument("--config", help="scenario-config JSON")
    p.add_argument("--script", help="event-script JSON")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--feeder", help="built-in feeder name (ieee34, twelve-bus)")
    p.add_argument("--duration", type=int, help="override duration in ticks")
    p.add_argument("--waveforms", action="store_true",
                   help="synthesize point-on-wave data and emit phasors through the filter model")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("extract-phasors", help="waveform CSV -> phasor CSV")
    p.add_argument("--waveforms", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fs", type=int, help="sample rate (inferred from t_sec if omitted)")
    p.add_argument("--f0", type=int, default=60)
    p.set_defaults(func=cmd_extract_phasors)

    for name, fn in (("detect", cmd_detect), ("replay", cmd_replay)):
        p = sub.add_parser(name, help=f"{name} anomalies")
        if name == "detect":
            p.add_argument("--dataset", required=True, help="dataset directory from simulate")
        else:
            p.add_argument("--metrics-csv", required=True)
        p.add_argument("--out-dir", required=True)
        p.add_argument("--config", help="detect-options JSON")
        p.add_argument("--calibrate-from",
                       help="event-free dataset dir (detect) or metrics CSV (replay)")
        p.add_argument("--metrics", help="comma list: single,double,multi")
        p.add_argument("--mode", help="multi-metric mode: auto|projector|min-singular")
        p.add_argument("--no-figures", action="store_true",
                       help="skip rendering figures into the report")
        p.set_defaults(func=fn)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SimulationError, GridModelError, storage.FormatError,
            dsp.DspError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
