"""Change-detector tests: hand-unrolled cases, Monte Carlo, calibration."""
import numpy as np
import pytest

from phasorwatch.cusum import (ChangeEvent, CusumConfig, CusumDetector,
                               CusumError, calibrate, group_episodes)


def test_config_validation():
    CusumConfig(delta_hat=1.0, alpha=5.0)
    with pytest.raises(CusumError):
        CusumConfig(delta_hat=0.0, alpha=5.0)
    with pytest.raises(CusumError):
        CusumConfig(delta_hat=1.0, alpha=0.0)
    with pytest.raises(CusumError):
        CusumConfig(delta_hat=1.0, alpha=5.0, rho=1.5)
    with pytest.raises(CusumError):
        CusumConfig(delta_hat=1.0, alpha=5.0, sigma2_floor=0.0)


def test_noiseless_step_detects_at_derived_tick():
    # delta=1, sigma2=1, alpha=10, step of exactly delta at tick 20:
    #   pre-step increment  = delta*(0 - delta/2)  = -0.5  (G pinned at 0)
    #   post-step increment = delta*(delta - delta/2) = +0.5 per tick
    # G crosses 10 strictly after 21 post-step ticks -> detection at tick 40.
    # The unconstrained sum M bottoms out on the last pre-step tick (19),
    # so the estimated start is the true step tick 20.
    cfg = CusumConfig(delta_hat=1.0, alpha=10.0, rho=0.5, sigma2=1.0,
                      adapt_sigma=False, warmup_ticks=4)
    det = CusumDetector("m", cfg, mu0=0.0)
    events = []
    for k in range(60):
        ev = det.update(k, 0.0 if k < 20 else 1.0)
        if ev is not None:
            events.append(ev)
    assert len(events) == 1
    ev = events[0]
    assert ev.detected_at == 40
    assert ev.estimated_start == 20
    assert ev.direction == "up"
    assert ev.value == 1.0


def test_noiseless_down_step():
    cfg = CusumConfig(delta_hat=1.0, alpha=10.0, sigma2=1.0,
                      adapt_sigma=False, warmup_ticks=4)
    det = CusumDetector("m", cfg, mu0=0.0)
    events = [ev for k in range(60)
              if (ev := det.update(k, 0.0 if k < 20 else -1.0)) is not None]
    assert [(-e.detected_at, e.estimated_start, e.direction) for e in events] \
        == [(-40, 20, "down")]


def test_immediate_jump_estimated_start_clamped():
    cfg = CusumConfig(delta_hat=1.0, alpha=10.0, sigma2=1.0,
                      adapt_sigma=False, warmup_ticks=2)
    det = CusumDetector("m", cfg, mu0=0.0)
    det.update(0, 0.0)
    det.update(1, 0.0)
    ev = det.update(2, 1000.0)  # single-tick crossing, no history yet
    assert ev is not None and ev.detected_at == 2 and ev.estimated_start == 2


def test_monte_carlo_delay_matches_recursion_oracle():
    # mean detection delay from a standing start, library vs a direct
    # numpy implementation of the same reflected recursion on an
    # independent sample stream
    delta, alpha, trials, t_max = 1.0, 10.0, 10_000, 400
    cfg = CusumConfig(delta_hat=delta, alpha=alpha, rho=1.0, sigma2=1.0,
                      adapt_sigma=False, warmup_ticks=0)
    rng = np.random.default_rng(11)
    delays = np.empty(trials)
    for i in range(trials):
        det = CusumDetector("m", cfg, mu0=0.0)
        xs = rng.normal(delta, 1.0, t_max)
        for k, x in enumerate(xs):
            if det.update(k, float(x)) is not None:
                delays[i] = k + 1
                break
        else:
            raise AssertionError("no detection within the trial horizon")

    rng2 = np.random.default_rng(22)
    g = np.zeros(trials)
    oracle = np.full(trials, -1.0)
    for k in range(t_max):
        x = rng2.normal(delta, 1.0, trials)
        g = np.maximum(g + delta * (x - delta / 2.0), 0.0)
        hit = (g > alpha) & (oracle < 0)
        oracle[hit] = k + 1
        g[g > alpha] = 0.0
    assert np.all(oracle > 0)
    assert abs(delays.mean() - oracle.mean()) < 0.10 * oracle.mean()


def test_no_false_alarms_on_stationary_noise():
    rng = np.random.default_rng(5)
    xs = 5e-4 + 1e-4 * rng.standard_normal(100_000)
    cfg = calibrate(xs[:2000], "m")
    det = CusumDetector("m", cfg, mu0=float(np.mean(xs[:2000])))
    assert all(det.update(k, float(x)) is None for k, x in enumerate(xs))


def test_baseline_tracks_slow_drift_without_alarms():
    rng = np.random.default_rng(6)
    n = 2000
    mean = 0.005 * np.arange(n)  # 10 delta of total drift, slowly
    xs = mean + 0.1 * rng.standard_normal(n)
    cfg = CusumConfig(delta_hat=1.0, alpha=200.0, rho=0.98, sigma2=0.01)
    det = CusumDetector("m", cfg, mu0=0.0)
    events = [ev for k, x in enumerate(xs) if (ev := det.update(k, float(x)))]
    assert events == []
    assert abs(det.mu0 - mean[-1]) < 0.5  # follows, with EWMA lag


def test_baseline_freezes_while_climbing():
    cfg = CusumConfig(delta_hat=1.0, alpha=200.0, rho=0.9, sigma2=1.0,
                      adapt_sigma=False, warmup_ticks=2)
    det = CusumDetector("m", cfg, mu0=0.0)
    for k in range(10):
        det.update(k, 0.0)
    mu_before = det.mu0
    for k in range(10, 16):  # 0.6*delta: climbs but does not cross
        det.update(k, 0.6)
    assert det.gu > 0.0
    assert det.mu0 == mu_before


def test_reset_and_reseed_after_event():
    cfg = CusumConfig(delta_hat=1.0, alpha=5.0, sigma2=1.0, adapt_sigma=False,
                      warmup_ticks=2, completion_window=4)
    det = CusumDetector("m", cfg, mu0=0.0)
    k = 0
    ev = None
    while ev is None:
        ev = det.update(k, 0.0 if k < 10 else 1.0)
        k += 1
    assert det.gu == det.gd == 0.0 and det.hist == []
    t0 = ev.detected_at
    for kk in range(t0 + 1, t0 + cfg.completion_window):
        det.update(kk, 0.0)  # still inside the episode: no reseed yet
    out = [det.update(t0 + cfg.completion_window + j, 7.5) for j in range(3)]
    # first quiet sample restarts the baseline at the new level
    assert det.mu0 == 7.5
    assert out == [None, None, None]


def test_update_rejects_non_finite():
    det = CusumDetector("m", CusumConfig(delta_hat=1.0, alpha=5.0), mu0=0.0)
    with pytest.raises(CusumError):
        det.update(0, float("nan"))


# ---------------------------------------------------------------------------
# calibration and episode grouping
# ---------------------------------------------------------------------------

def test_calibrate_from_quiet_stretch():
    rng = np.random.default_rng(7)
    xs = 2e-3 + 3e-4 * rng.standard_normal(500)
    cfg = calibrate(xs, "m", delta_sigma_ratio=10.0, alpha=123.0)
    sigma = float(np.std(xs))
    assert abs(cfg.delta_hat - 10.0 * sigma) < 1e-12
    assert abs(cfg.sigma2 - sigma**2) < 1e-12
    assert cfg.sigma2_floor == cfg.sigma2
    assert cfg.alpha == 123.0


def test_calibrate_edge_cases():
    with pytest.raises(CusumError):
        calibrate(np.ones(5), "m")  # too few samples
    xs = np.array([1.0, 1.1, 0.9, 1.0, np.nan, 1.05, 0.95, 1.0, 1.02, np.inf])
    cfg = calibrate(xs, "m")  # non-finite samples are dropped
    assert np.isfinite(cfg.delta_hat)
    flat = calibrate(np.full(20, 3.0), "m")  # zero variance gets a floor
    assert flat.delta_hat > 0.0 and flat.sigma2 > 0.0


def _ev(metric, detected, start, direction="up"):
    return ChangeEvent(metric, direction, detected, start, 1.0)


def test_group_episodes():
    events = [
        _ev("multi", 60, 59), _ev("multi", 62, 60), _ev("multi", 120, 118, "down"),
        _ev("single:9:9-13", 61, 60),
    ]
    eps = group_episodes(events, completion_window=24)
    assert [(e.metric_id, e.start_tick, e.end_tick, e.n_events) for e in eps] == [
        ("multi", 59, 62, 2), ("multi", 118, 120, 1), ("single:9:9-13", 60, 61, 1),
    ]
    assert eps[0].directions == ["up", "up"]
    assert group_episodes([], 24) == []
