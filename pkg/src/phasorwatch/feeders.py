"""Built-in test feeders.

``ieee34_like`` is a 34-bus radial feeder reminiscent of the classic IEEE
34-node test feeder (renumbered 1..34, single voltage level, spot loads,
a few single-phase laterals).  ``twelve_bus`` is a small desk-scale radial
network with one three-phase and one single-phase lateral.  Both return
(topology, loads) where loads maps bus id -> complex three-phase power in
per unit (constant-impedance at nominal voltage).
"""
from __future__ import annotations

import numpy as np

from .grid import Bus, GridTopology, PhaseImpedanceSpec, build_line_model

# Overhead-line data in ohm (or siemens) per mile, Kersting-style phase
# impedance matrices for a smallish ACSR trunk and a single-phase lateral.
Z_TRUNK = np.array(
    [
        [1.3368 + 1.3343j, 0.2101 + 0.5779j, 0.2130 + 0.5015j],
        [0.2101 + 0.5779j, 1.3238 + 1.3569j, 0.2066 + 0.4591j],
        [0.2130 + 0.5015j, 0.2066 + 0.4591j, 1.3294 + 1.3471j],
    ]
)
B_TRUNK = 1e-6 * np.array(
    [
        [5.3350, -1.5313, -0.9943],
        [-1.5313, 5.0979, -0.6212],
        [-0.9943, -0.6212, 4.8880],
    ]
)
Z_LATERAL_1PH = np.array([[1.9217 + 1.4212j]])
B_LATERAL_1PH = 1e-6 * np.array([[4.3700]])


def _line(line_id, frm, to, miles, kv, phasing="abc", s_base=1.0):
    if phasing == "abc":
        z, b = Z_TRUNK, B_TRUNK
    else:
        z, b = Z_LATERAL_1PH, B_LATERAL_1PH
    spec = PhaseImpedanceSpec(line_id, z, b, miles, phasing)
    return build_line_model(spec, frm, to, kv_base=kv, s_base_mva=s_base)


def ieee34_like(metered=(9, 19, 31)) -> tuple[GridTopology, dict[int, np.ndarray]]:
    """34-bus radial feeder at 24.9 kV with a handful of 1-phase laterals.

    Shaped so that the trunk passes 9-13-15-16-17-19-20, the unmetered
    lateral hanging off line (25, 26) runs out to bus 29, and a short,
    stiff express branch near the substation serves buses 30-34.
    """
    kv = 24.9
    # (from, to, miles, phasing); ids are "<from>-<to>"
    edges = [
        (1, 2, 0.15), (2, 3, 4.5), (3, 4, 6.7),
        (4, 5, 1.5, "c"),
        (4, 25, 0.9),
        (25, 26, 0.8), (26, 27, 1.0), (27, 28, 0.7), (28, 29, 0.9),
        (4, 6, 5.6), (6, 7, 10.1), (7, 8, 7.3), (8, 9, 4.5),
        (7, 21, 1.1), (21, 23, 0.9),
        (9, 10, 0.9, "c"), (10, 11, 1.1, "c"), (11, 12, 0.6, "c"),
        (9, 13, 0.4), (13, 14, 1.2, "b"),
        (13, 15, 0.6), (15, 16, 0.6), (16, 17, 1.2), (17, 18, 0.9, "b"),
        (17, 19, 5.2), (19, 20, 1.5),
        (20, 22, 1.4, "c"), (20, 24, 0.5, "b"),
        (2, 30, 0.3), (30, 31, 0.25), (31, 32, 0.2), (32, 33, 0.3), (33, 34, 0.25),
    ]
    lines = []
    for edge in edges:
        frm, to, miles = edge[:3]
        phasing = edge[3] if len(edge) > 3 else "abc"
        lines.append(_line(f"{frm}-{to}", frm, to, miles, kv, phasing))
    buses = [Bus(i, kv, slack=(i == 1)) for i in range(1, 35)]

    # spot loads, complex pu on a 1 MVA base, deliberately unbalanced
    def spot(a=0j, b=0j, c=0j):
        return np.array([a, b, c], dtype=complex)

    loads = {
        5: spot(c=0.016 + 0.008j),
        8: spot(0.030 + 0.015j, 0.025 + 0.012j, 0.028 + 0.014j),
        12: spot(c=0.034 + 0.017j),
        14: spot(b=0.020 + 0.010j),
        16: spot(0.032 + 0.015j, 0.028 + 0.013j, 0.036 + 0.017j),
        18: spot(b=0.017 + 0.008j),
        20: spot(0.040 + 0.020j, 0.036 + 0.016j, 0.032 + 0.016j),
        21: spot(0.030 + 0.014j, 0.028 + 0.013j, 0.032 + 0.015j),
        22: spot(c=0.027 + 0.013j),
        23: spot(0.040 + 0.018j, 0.036 + 0.016j, 0.038 + 0.017j),
        24: spot(b=0.035 + 0.018j),
        27: spot(0.010 + 0.005j, 0.012 + 0.006j, 0.011 + 0.005j),
        29: spot(0.025 + 0.012j, 0.020 + 0.010j, 0.022 + 0.011j),
        32: spot(0.060 + 0.030j, 0.055 + 0.028j, 0.050 + 0.025j),
        34: spot(0.090 + 0.045j, 0.085 + 0.042j, 0.095 + 0.048j),
    }
    top = GridTopology(buses=buses, lines=lines, metered_buses=list(metered))
    return top, loads


def twelve_bus(metered=(3, 8, 10)) -> tuple[GridTopology, dict[int, np.ndarray]]:
    """12-bus radial abstraction at 12.47 kV with a single-phase lateral."""
    kv = 12.47
    edges = [
        (1, 2, 0.8), (2, 3, 1.0), (3, 4, 0.9), (4, 5, 1.1), (5, 6, 0.7), (6, 7, 0.9),
        (3, 8, 0.6), (8, 9, 0.8),
        (5, 10, 0.7, "a"), (10, 11, 0.9, "a"), (11, 12, 0.5, "a"),
    ]
    lines = []
    for edge in edges:
        frm, to, miles = edge[:3]
        phasing = edge[3] if len(edge) > 3 else "abc"
        lines.append(_line(f"{frm}-{to}", frm, to, miles, kv, phasing))
    buses = [Bus(i, kv, slack=(i == 1)) for i in range(1, 13)]
    loads = {
        4: np.array([0.050 + 0.020j, 0.045 + 0.018j, 0.048 + 0.019j]),
        7: np.array([0.080 + 0.035j, 0.070 + 0.030j, 0.075 + 0.032j]),
        9: np.array([0.060 + 0.025j, 0.055 + 0.022j, 0.065 + 0.028j]),
        12: np.array([0.045 + 0.018j, 0j, 0j]),
    }
    top = GridTopology(buses=buses, lines=lines, metered_buses=list(metered))
    return top, loads


FEEDERS = {"ieee34": ieee34_like, "twelve-bus": twelve_bus}


def by_name(name: str):
    try:
        return FEEDERS[name]()
    except KeyError:
        raise ValueError(f"unknown feeder {name!r}; choose from {sorted(FEEDERS)}") from None
