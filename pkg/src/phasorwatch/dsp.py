"""Synchrophasor extraction from point-on-wave samples.

Complex demodulation at the nominal frequency followed by a two-cycle
triangular FIR (the classic P-class shape), decimated to the reporting
rate with group-delay-compensated timestamps.  Phasors use the RMS
convention: A*cos(2*pi*f0*t + phi) -> (A/sqrt(2)) * exp(j*phi).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NOMINAL_HZ = 60
REPORT_HZ = 120


class DspError(ValueError):
    pass


@dataclass
class FilterSpec:
    """A causal FIR used for phasor extraction.

    taps are DC-normalized (sum to one); group_delay_samples is the delay
    removed from output timestamps (the window center for symmetric taps).
    """

    kind: str
    taps: np.ndarray
    group_delay_samples: int

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=float)
        if self.taps.ndim != 1 or self.taps.size < 1:
            raise DspError("taps must be a 1-D array")
        s = self.taps.sum()
        if abs(s) < 1e-12:
            raise DspError("filter has zero DC gain")
        self.taps = self.taps / s
        if not 0 <= self.group_delay_samples < self.taps.size:
            raise DspError("group delay outside filter span")

    def response_at(self, f_offset_hz: float, fs: float) -> complex:
        """Complex baseband response at a frequency offset from the carrier."""
        n = np.arange(self.taps.size)
        return np.sum(self.taps * np.exp(-2j * np.pi * f_offset_hz * n / fs))


def design_pclass_filter(f0: int = NOMINAL_HZ, fs: int = 7680) -> FilterSpec:
    """Two-cycle triangular FIR spanning 2*fs/f0 + 1 samples.

    The triangle is the convolution of two one-cycle boxcars, so its
    baseband response has exact nulls at every multiple of f0 -- in
    particular at the -2*f0 demodulation image.
    """
    if fs % f0 != 0:
        raise DspError(f"fs={fs} is not an integer number of samples per cycle of f0={f0}")
    spc = fs // f0
    if fs < 16 * f0:
        raise DspError(f"fs={fs} too low; need at least 16 samples per cycle")
    n = np.arange(-spc, spc + 1)
    taps = (spc - np.abs(n)).astype(float)
    return FilterSpec(kind="p-class-two-cycle", taps=taps, group_delay_samples=spc)


@dataclass
class WaveformSegment:
    """Uniformly sampled point-on-wave data for one channel.

    t0 is the absolute start time in seconds; all channels of a recording
    share the same epoch so extracted phasor angles are comparable.
    """

    channel_id: str
    t0: float
    fs: int
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1:
            raise DspError("samples must be 1-D")
        if self.fs <= 0:
            raise DspError("fs must be positive")


def extract_phasor_stream(
    seg: WaveformSegment,
    filt: FilterSpec | None = None,
    f0: int = NOMINAL_HZ,
    report_hz: int = REPORT_HZ,
) -> tuple[np.ndarray, np.ndarray]:
    """Demodulate, low-pass and decimate one channel to reporting-rate phasors.

    Returns (ticks, phasors): integer reporting indices k (tick k is at
    absolute time k / report_hz) and the RMS-scaled complex phasors.  The
    first ``len(taps) - 1`` waveform samples only warm the filter up; output
    timestamps are compensated for the filter group delay, i.e. tick k is
    the phasor of the window *centered* at k / report_hz.
    """
    if filt is None:
        filt = design_pclass_filter(f0, seg.fs)
    if seg.fs % (2 * f0) != 0:
        raise DspError(f"fs={seg.fs} must be an integer multiple of {2 * f0}")
    if seg.fs % report_hz != 0:
        raise DspError(f"fs={seg.fs} must be an integer multiple of the reporting rate")
    ratio = seg.fs // report_hz
    n0 = round(seg.t0 * seg.fs)
    if abs(seg.t0 * seg.fs - n0) > 1e-6:
        raise DspError("segment start time is not on the sample grid")

    n = seg.samples.size
    taps_n = filt.taps.size
    if n < taps_n:
        return np.array([], dtype=int), np.array([], dtype=complex)

    # demodulate against absolute time: sample i sits at (n0 + i) / fs
    idx = n0 + np.arange(n)
    angle = -2.0 * np.pi * ((f0 * idx) % seg.fs) / seg.fs
    demod = np.sqrt(2.0) * seg.samples * np.exp(1j * angle)
    filtered = np.convolve(demod, filt.taps, mode="valid")  # output m -> index m + taps_n - 1

    # causal output index m has center n0 + m - group_delay; emit where the
    # center lands on the reporting grid
    g = filt.group_delay_samples
    m_lo, m_hi = taps_n - 1, n - 1
    k_lo = -(-(m_lo - g + n0) // ratio)  # ceil
    k_hi = (m_hi - g + n0) // ratio
    if k_hi < k_lo:
        return np.array([], dtype=int), np.array([], dtype=complex)
    ks = np.arange(k_lo, k_hi + 1)
    ms = ks * ratio - n0 + g
    return ks, filtered[ms - (taps_n - 1)]


def unwrap_angles(angles: np.ndarray) -> np.ndarray:
    """Remove 2*pi jumps so successive differences lie in (-pi, pi]."""
    return np.unwrap(np.asarray(angles, dtype=float))


def estimate_frequency_drift(phasors: np.ndarray, smoothing: float = 0.0) -> np.ndarray:
    """Per-tick angle increment beta[k] = arg(p[k] * conj(p[k-1])) in radians.

    Zero-magnitude samples carry the previous estimate forward; beta[0]
    copies beta[1] so a constant ramp gives a constant sequence.  With
    ``smoothing`` = rho in (0, 1) an exponential window is applied.
    """
    p = np.asarray(phasors, dtype=complex)
    if p.size < 2:
        raise DspError("need at least two phasor samples")
    if not 0.0 <= smoothing < 1.0:
        raise DspError("smoothing must be in [0, 1)")
    beta = np.zeros(p.size, dtype=float)
    prev = 0.0
    for k in range(1, p.size):
        prod = p[k] * np.conj(p[k - 1])
        if np.abs(prod) == 0.0:
            beta[k] = prev
        else:
            beta[k] = float(np.angle(prod))
        prev = beta[k]
    beta[0] = beta[1]
    if smoothing > 0.0:
        out = np.empty_like(beta)
        acc = beta[0]
        for k, b in enumerate(beta):
            acc = smoothing * acc + (1.0 - smoothing) * b
            out[k] = acc
        return out
    return beta
