"""Two-sided CUSUM change detection with adaptive baseline tracking.

Log-likelihood-ratio increments for a Gaussian mean shift of a-priori
magnitude delta_hat are accumulated two ways: an unconstrained sum M used
to estimate when a change started, and the usual reflected-at-zero
decision function G compared against the threshold alpha.  The baseline
mean follows an exponential window that freezes while either decision
function is climbing, so the pre-change level is held during a change.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class CusumError(ValueError):
    pass


@dataclass
class CusumConfig:
    delta_hat: float
    alpha: float
    rho: float = 0.98
    sigma2: float = 1.0
    sigma2_floor: float = 1e-18
    adapt_sigma: bool = True
    warmup_ticks: int = 16
    completion_window: int = 24

    def __post_init__(self):
        if self.delta_hat == 0.0:
            raise CusumError("delta_hat must be nonzero")
        if self.alpha <= 0.0:
            raise CusumError("alpha must be positive")
        if not 0.0 <= self.rho <= 1.0:
            raise CusumError("rho must be in [0, 1]")
        if self.sigma2_floor <= 0.0:
            raise CusumError("sigma2_floor must be positive")


@dataclass
class ChangeEvent:
    metric_id: str
    direction: str  # "up" or "down"
    detected_at: int
    estimated_start: int
    value: float


@dataclass
class Episode:
    metric_id: str
    start_tick: int
    end_tick: int
    n_events: int
    directions: list[str] = field(default_factory=list)


class CusumDetector:
    """Streaming two-sided CUSUM for one metric series."""

    def __init__(self, metric_id: str, config: CusumConfig,
                 mu0: float | None = None, sigma2: float | None = None):
        self.metric_id = metric_id
        self.cfg = config
        self.mu0 = mu0
        self.sigma2 = max(sigma2 if sigma2 is not None else config.sigma2,
                          config.sigma2_floor)
        self.gu = 0.0
        self.gd = 0.0
        self.mu_sum = 0.0
        self.md_sum = 0.0
        self.k0: int | None = None
        self.hist: list[tuple[int, float, float]] = []  # (tick, Mu, Md)
        self.seen = 0
        self.last_event_tick: int | None = None
        self._reseed_pending = False

    # -- internals ----------------------------------------------------
    def _adapt(self, x: float):
        rho = self.cfg.rho
        self.mu0 = rho * self.mu0 + (1.0 - rho) * x
        if self.cfg.adapt_sigma:
            dev2 = (x - self.mu0) ** 2
            self.sigma2 = max(rho * self.sigma2 + (1.0 - rho) * dev2,
                              self.cfg.sigma2_floor)

    def _episode_open(self, tick: int) -> bool:
        return (self.last_event_tick is not None
                and tick - self.last_event_tick < self.cfg.completion_window)

    def update(self, tick: int, x: float) -> ChangeEvent | None:
        """Feed one sample; returns a ChangeEvent when a change is declared."""
        if not np.isfinite(x):
            raise CusumError(f"{self.metric_id}: non-finite sample at tick {tick}")
        if self.mu0 is None:
            self.mu0 = float(x)
        if self._reseed_pending and not self._episode_open(tick):
            # first quiet sample after an episode: restart the baseline there
            self.mu0 = float(x)
            self._reseed_pending = False

        self.seen += 1
        if self.seen <= self.cfg.warmup_ticks:
            self._adapt(x)
            self.k0 = tick
            return None
        if self.k0 is None:
            self.k0 = tick

        delta = abs(self.cfg.delta_hat)
        scale = delta / self.sigma2
        lam_u = scale * (x - self.mu0 - delta / 2.0)
        lam_d = -scale * (x - self.mu0 + delta / 2.0)
        self.mu_sum += lam_u
        self.md_sum += lam_d
        self.gu = max(self.gu + lam_u, 0.0)
        self.gd = max(self.gd + lam_d, 0.0)

        if self.gu > self.cfg.alpha or self.gd > self.cfg.alpha:
            direction = "up" if self.gu >= self.gd else "down"
            track = 1 if direction == "up" else 2
            if self.hist:
                vals = [h[track] for h in self.hist]
                k_min = self.hist[int(np.argmin(vals))][0]
                estimated = k_min + 1  # change begins after the running minimum
            else:
                estimated = tick
            event = ChangeEvent(self.metric_id, direction, tick, min(estimated, tick), x)
            self.gu = self.gd = 0.0
            self.mu_sum = self.md_sum = 0.0
            self.hist.clear()
            self.k0 = tick
            self.last_event_tick = tick
            self._reseed_pending = True
            return event

        self.hist.append((tick, self.mu_sum, self.md_sum))
        if self.gu == 0.0 and self.gd == 0.0 and not self._episode_open(tick):
            self._adapt(x)
        return None


def group_episodes(events: list[ChangeEvent], completion_window: int = 24) -> list[Episode]:
    """Group per-metric events separated by gaps < completion_window ticks."""
    episodes: list[Episode] = []
    by_metric: dict[str, list[ChangeEvent]] = {}
    for ev in events:
        by_metric.setdefault(ev.metric_id, []).append(ev)
    for metric_id in sorted(by_metric):
        evs = sorted(by_metric[metric_id], key=lambda e: e.detected_at)
        current: list[ChangeEvent] = []
        for ev in evs:
            if current and ev.detected_at - current[-1].detected_at >= completion_window:
                episodes.append(_make_episode(metric_id, current))
                current = []
            current.append(ev)
        if current:
            episodes.append(_make_episode(metric_id, current))
    return episodes


def _make_episode(metric_id: str, evs: list[ChangeEvent]) -> Episode:
    return Episode(
        metric_id=metric_id,
        start_tick=min(e.estimated_start for e in evs),
        end_tick=max(e.detected_at for e in evs),
        n_events=len(evs),
        directions=[e.direction for e in evs],
    )


def calibrate(values: np.ndarray, metric_id: str = "", rho: float = 0.98,
              alpha: float = 200.0, delta_sigma_ratio: float = 10.0,
              completion_window: int = 24) -> CusumConfig:
    """Derive detector settings from an event-free stretch of a metric.

    The a-priori change magnitude is delta_sigma_ratio times the observed
    standard deviation (a change worth flagging dwarfs ambient noise) and
    the variance estimate is floored at the observed variance.
    """
    vals = np.asarray(values, dtype=float)
    vals = vals[np.isfinite(vals)]
    if vals.size < 8:
        raise CusumError(f"{metric_id}: too few calibration samples ({vals.size})")
    sigma = float(np.std(vals))
    mean = float(np.mean(vals))
    floor_scale = max(abs(mean), float(np.max(np.abs(vals))), 1e-30)
    sigma = max(sigma, 1e-9 * floor_scale)
    return CusumConfig(
        delta_hat=delta_sigma_ratio * sigma,
        alpha=alpha,
        rho=rho,
        sigma2=sigma**2,
        sigma2_floor=sigma**2,
        completion_window=completion_window,
    )
