"""Link-budget arithmetic and scenario draws."""

import math

import numpy as np
import pytest

from chirp_sic.channel import (
    ChannelParams,
    InfeasibleScenarioError,
    db_to_linear,
    dbm_to_mw,
    draw_user,
    draw_user_at_power,
    draw_user_at_snr,
    mw_to_dbm,
    noise_power_dbm,
    noise_sigma,
)
from chirp_sic.phy import PhyParams

PHY = PhyParams()


def test_unit_conversions_round_trip():
    for dbm in (-174.0, -114.0, 0.0, 14.0):
        assert mw_to_dbm(dbm_to_mw(dbm)) == pytest.approx(dbm, abs=1e-12)
    assert dbm_to_mw(0.0) == 1.0
    assert dbm_to_mw(30.0) == pytest.approx(1000.0)
    assert db_to_linear(10.0) == pytest.approx(10.0)
    assert db_to_linear(-3.0) == pytest.approx(0.5011872336272722)


def test_noise_power_frozen_values():
    # kTB + NF at 290 K reference: -174 dBm/Hz density
    assert noise_power_dbm(1.0, 0.0) == pytest.approx(-174.0, abs=1e-12)
    assert noise_power_dbm(250e3, 6.0) == pytest.approx(-114.02059991327963, abs=1e-10)
    assert noise_power_dbm(250e3, 3.0) == pytest.approx(-117.02059991327963, abs=1e-10)
    assert noise_power_dbm(125e3, 6.0) == pytest.approx(-117.03089986991944, abs=1e-10)


def test_default_link_budget():
    chan = ChannelParams()
    assert chan.tx_power_mw == pytest.approx(10**1.4, rel=1e-12)
    assert chan.tx_amplitude == pytest.approx(math.sqrt(10**1.4), rel=1e-12)
    assert chan.sensitivity_mw == pytest.approx(10**-12.4, rel=1e-12)
    sig = noise_sigma(chan, PHY)
    assert sig == pytest.approx(math.sqrt(dbm_to_mw(noise_power_dbm(250e3, 6.0))), rel=1e-12)


def test_draw_user_determinism_and_admission():
    chan = ChannelParams()
    a = draw_user(chan, PHY, np.random.default_rng(7))
    b = draw_user(chan, PHY, np.random.default_rng(7))
    assert a.distance_m == b.distance_m
    assert a.channel_gain == b.channel_gain
    assert a.delay_samples == b.delay_samples
    assert np.array_equal(a.true_symbols, b.true_symbols)

    rng = np.random.default_rng(0)
    for _ in range(200):
        u = draw_user(chan, PHY, rng)
        assert chan.tx_power_mw * abs(u.channel_gain) ** 2 >= chan.sensitivity_mw
        assert u.channel_gain == pytest.approx(
            u.distance_m ** (-chan.path_loss_exponent / 2) * u.fading, rel=1e-12
        )
        assert 0 < u.distance_m <= chan.cell_radius_m
        assert u.sf == PHY.sf
        assert u.true_symbols.shape == (PHY.payload_symbols,)
        assert np.all((0 <= u.true_symbols) & (u.true_symbols < PHY.m_cardinality))


def test_disc_distance_law_and_fading_moments():
    # admit everything so the raw geometry is visible: the distance CDF must
    # follow (d/R)^2 and the fading must be unit-power circular Gaussian
    chan = ChannelParams(sensitivity_dbm=-1000.0)
    rng = np.random.default_rng(123)
    n = 100_000
    users = [draw_user(chan, PHY, rng) for _ in range(n)]
    d = np.sort([u.distance_m for u in users])
    ecdf = np.arange(1, n + 1) / n
    ks = np.abs(ecdf - (d / chan.cell_radius_m) ** 2).max()
    assert ks < 0.01
    chi2 = np.array([abs(u.fading) ** 2 for u in users])
    assert chi2.mean() == pytest.approx(1.0, abs=0.02)
    phases = np.angle([u.fading for u in users])
    assert abs(np.mean(np.exp(1j * phases))) < 0.02


def test_delay_grid_spans_two_frames():
    chan = ChannelParams(sensitivity_dbm=-1000.0)
    rng = np.random.default_rng(5)
    span = 2 * PHY.frame_samples
    delays = np.array([draw_user(chan, PHY, rng).delay_samples for _ in range(4000)])
    assert delays.min() >= 0
    assert delays.max() <= span
    assert delays.max() > span - 64  # both edges actually reachable
    assert delays.min() < 64
    custom = [draw_user(chan, PHY, rng, delay_span_samples=10).delay_samples for _ in range(300)]
    assert set(custom) <= set(range(11))


def test_infeasible_admission_raises():
    chan = ChannelParams(sensitivity_dbm=200.0)
    with pytest.raises(InfeasibleScenarioError):
        draw_user(chan, PHY, np.random.default_rng(0), max_tries=50)


def test_draw_user_at_snr_is_exact():
    chan = ChannelParams()
    sig = noise_sigma(chan, PHY)
    for snr in (-20.0, -10.0, 0.0, 5.0):
        u = draw_user_at_snr(chan, PHY, snr, np.random.default_rng(1))
        got = chan.tx_power_mw * abs(u.channel_gain) ** 2 / sig**2
        assert 10 * math.log10(got) == pytest.approx(snr, abs=1e-9)
        assert abs(u.fading) == pytest.approx(1.0, rel=1e-12)
        assert u.channel_gain == pytest.approx(
            u.distance_m ** (-chan.path_loss_exponent / 2) * u.fading, rel=1e-12
        )


def test_draw_user_at_power_is_exact():
    chan = ChannelParams()
    for dbm in (-124.0, -121.0, -100.0):
        u = draw_user_at_power(chan, PHY, dbm, np.random.default_rng(2))
        rx = chan.tx_power_mw * abs(u.channel_gain) ** 2
        assert mw_to_dbm(rx) == pytest.approx(dbm, abs=1e-9)
        assert u.channel_gain == pytest.approx(
            u.distance_m ** (-chan.path_loss_exponent / 2) * u.fading, rel=1e-12
        )
    # phases cover the circle
    rng = np.random.default_rng(3)
    ph = [np.angle(draw_user_at_power(chan, PHY, -121.0, rng).channel_gain) for _ in range(500)]
    assert abs(np.mean(np.exp(1j * np.asarray(ph)))) < 0.1


def test_alien_rate_draw_uses_interferer_grid():
    chan = ChannelParams(sensitivity_dbm=-1000.0)
    iphy = PhyParams(sf=9)
    rng = np.random.default_rng(11)
    u = draw_user(chan, iphy, rng, delay_span_samples=2 * PHY.frame_samples)
    assert u.sf == 9
    assert u.true_symbols.shape == (iphy.payload_symbols,)
    assert np.all(u.true_symbols < 512)
    assert 0 <= u.delay_samples <= 2 * PHY.frame_samples
