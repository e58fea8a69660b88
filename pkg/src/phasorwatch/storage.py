"""File formats for waveforms, phasors, metrics, events and episodes.

Every file carries its schema tag: CSVs in a leading ``#`` comment line,
JSON documents in a ``_schema`` field, JSONL streams in a first record
containing only ``_schema``.  Floats are written with ``repr`` so files
round-trip exactly and identical runs produce identical bytes.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .cusum import ChangeEvent, Episode

SCHEMAS = {
    "waveforms": "phasorwatch/waveforms/1",
    "phasors": "phasorwatch/phasors/1",
    "metrics": "phasorwatch/metrics/1",
    "events": "phasorwatch/events/1",
    "episodes": "phasorwatch/episodes/1",
    "truth": "phasorwatch/truth/1",
    "scenario": "phasorwatch/scenario/1",
}


class FormatError(ValueError):
    pass


def _open_csv(path, expect: str):
    f = open(path, newline="")
    header = f.readline().strip()
    if header != f"# {SCHEMAS[expect]}":
        f.close()
        raise FormatError(f"{path}: expected schema {SCHEMAS[expect]!r}, got {header!r}")
    return f


# ---------------------------------------------------------------------------
# waveforms: t_sec,<channel>,... with channels like  9.V.a  /  9.I.9-13.a
# ---------------------------------------------------------------------------

def write_waveforms_csv(path, channels: dict[str, np.ndarray], fs: int) -> None:
    names = sorted(channels)
    n = len(channels[names[0]]) if names else 0
    with open(path, "w", newline="") as f:
        f.write(f"# {SCHEMAS['waveforms']}\n")
        w = csv.writer(f)
        w.writerow(["t_sec"] + names)
        for i in range(n):
            w.writerow([repr(i / fs)] + [repr(float(channels[c][i])) for c in names])


def read_waveforms_csv(path) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    with _open_csv(path, "waveforms") as f:
        r = csv.reader(f)
        try:
            header = next(r)
        except StopIteration:
            return np.array([]), {}
        if not header or header[0] != "t_sec":
            raise FormatError(f"{path}: first column must be t_sec")
        names = header[1:]
        t, cols = [], [[] for _ in names]
        for ln, row in enumerate(r, start=3):
            if len(row) != len(header):
                raise FormatError(f"{path}:{ln}: expected {len(header)} fields, got {len(row)}")
            try:
                t.append(float(row[0]))
                for j, v in enumerate(row[1:]):
                    cols[j].append(float(v))
            except ValueError as exc:
                raise FormatError(f"{path}:{ln}: {exc}") from exc
    return np.array(t), {name: np.array(col) for name, col in zip(names, cols)}


def parse_channel_id(name: str) -> tuple[int, str, str | None, str]:
    """Split '<bus>.<V|I>[.<line>].<phase>' into its parts."""
    parts = name.split(".")
    if len(parts) == 3 and parts[1] == "V":
        bus, _, phase = parts
        line = None
    elif len(parts) == 4 and parts[1] == "I":
        bus, _, line, phase = parts
    else:
        raise FormatError(f"bad channel id {name!r}")
    if phase not in ("a", "b", "c"):
        raise FormatError(f"bad phase in channel id {name!r}")
    return int(bus), parts[1], line, phase


# ---------------------------------------------------------------------------
# phasors: k,bus,kind,line,phase,re,im
# ---------------------------------------------------------------------------

def write_phasors_csv(path, emitted_v: dict[int, np.ndarray],
                      emitted_i: dict[tuple[int, str], np.ndarray],
                      valid: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        f.write(f"# {SCHEMAS['phasors']}\n")
        w = csv.writer(f)
        w.writerow(["k", "bus", "kind", "line", "phase", "re", "im"])
        ticks = np.nonzero(valid)[0]
        for k in ticks:
            for bus in sorted(emitted_v):
                for ph, name in enumerate(("a", "b", "c")):
                    z = emitted_v[bus][k, ph]
                    w.writerow([k, bus, "V", "", name, repr(float(z.real)), repr(float(z.imag))])
            for bus, line in sorted(emitted_i):
                arr = emitted_i[(bus, line)]
                for ph, name in enumerate(("a", "b", "c")):
                    z = arr[k, ph]
                    w.writerow([k, bus, "I", line, name, repr(float(z.real)), repr(float(z.imag))])


def read_phasors_csv(path) -> dict[int, dict]:
    """Returns {tick: {"v": {bus: vec3}, "i": {(bus, line): vec3}}}."""
    out: dict[int, dict] = {}
    with _open_csv(path, "phasors") as f:
        r = csv.reader(f)
        header = next(r, None)
        if header != ["k", "bus", "kind", "line", "phase", "re", "im"]:
            raise FormatError(f"{path}: bad phasor header {header}")
        for ln, row in enumerate(r, start=3):
            if len(row) != 7:
                raise FormatError(f"{path}:{ln}: expected 7 fields")
            try:
                k, bus = int(row[0]), int(row[1])
                kind, line, phase = row[2], row[3], row[4]
                z = complex(float(row[5]), float(row[6]))
            except ValueError as exc:
                raise FormatError(f"{path}:{ln}: {exc}") from exc
            ph = "abc".index(phase)
            tick = out.setdefault(k, {"v": {}, "i": {}})
            if kind == "V":
                tick["v"].setdefault(bus, np.zeros(3, dtype=complex))[ph] = z
            elif kind == "I":
                tick["i"].setdefault((bus, line), np.zeros(3, dtype=complex))[ph] = z
            else:
                raise FormatError(f"{path}:{ln}: bad kind {kind!r}")
    return out


# ---------------------------------------------------------------------------
# metrics: k,metric_id,x
# ---------------------------------------------------------------------------

def write_metrics_csv(path, series: dict[str, list[tuple[int, float]]]) -> None:
    rows = []
    for metric_id, pairs in series.items():
        rows.extend((k, metric_id, x) for k, x in pairs)
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w", newline="") as f:
        f.write(f"# {SCHEMAS['metrics']}\n")
        w = csv.writer(f)
        w.writerow(["k", "metric_id", "x"])
        for k, metric_id, x in rows:
            w.writerow([k, metric_id, repr(float(x))])


def read_metrics_csv(path) -> dict[str, list[tuple[int, float]]]:
    series: dict[str, list[tuple[int, float]]] = {}
    with _open_csv(path, "metrics") as f:
        r = csv.reader(f)
        header = next(r, None)
        if header != ["k", "metric_id", "x"]:
            raise FormatError(f"{path}: bad metrics header {header}")
        for ln, row in enumerate(r, start=3):
            if len(row) != 3:
                raise FormatError(f"{path}:{ln}: expected 3 fields")
            try:
                k, metric_id, x = int(row[0]), row[1], float(row[2])
            except ValueError as exc:
                raise FormatError(f"{path}:{ln}: {exc}") from exc
            if not np.isfinite(x):
                continue  # skip non-finite samples on replay
            series.setdefault(metric_id, []).append((k, x))
    for pairs in series.values():
        pairs.sort()
    return series


# ---------------------------------------------------------------------------
# events (JSONL) and episodes / truth / generic JSON documents
# ---------------------------------------------------------------------------

def write_events_jsonl(path, events: list[ChangeEvent]) -> None:
    with open(path, "w") as f:
        f.write(json.dumps({"_schema": SCHEMAS["events"]}) + "\n")
        for ev in sorted(events, key=lambda e: (e.detected_at, e.metric_id)):
            f.write(json.dumps(asdict(ev), sort_keys=True) + "\n")


def read_events_jsonl(path) -> list[ChangeEvent]:
    events = []
    with open(path) as f:
        first = f.readline()
        if not first:
            return []
        if json.loads(first).get("_schema") != SCHEMAS["events"]:
            raise FormatError(f"{path}: missing events schema record")
        for line in f:
            if not line.strip():
                continue
            d = json.loads(line)
            events.append(ChangeEvent(**d))
    return events


def write_json(path, payload: dict, schema: str) -> None:
    doc = {"_schema": SCHEMAS[schema]}
    doc.update(payload)
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def read_json(path, schema: str) -> dict:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("_schema") != SCHEMAS[schema]:
        raise FormatError(f"{path}: expected schema {SCHEMAS[schema]!r}")
    return doc


def episodes_payload(episodes: list[Episode], inconsistencies: list[dict],
                     declared: list[dict]) -> dict:
    return {
        "episodes": [asdict(e) for e in episodes],
        "declared_topology_changes": declared,
        "topology_inconsistencies": inconsistencies,
    }


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
