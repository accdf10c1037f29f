"""Multi-user superposition window: placement, noise, serialization."""

import logging
import math

import numpy as np
import pytest

from chirp_sic.channel import ChannelParams, UserScenario, draw_user
from chirp_sic.phy import PhyParams, build_packet
from chirp_sic.window import (
    WINDOW_FRAMES,
    dump_window,
    load_window,
    slice_symbol,
    superpose,
    window_samples,
)

PHY = PhyParams()


def scenario(gain, delay, symbols, sf=8):
    p = PhyParams(sf=sf)
    return UserScenario(
        distance_m=1.0,
        fading=gain,
        channel_gain=gain,
        delay_samples=delay,
        delay_s=delay * p.sample_period_s,
        sf=sf,
        true_symbols=np.asarray(symbols, dtype=np.int64),
    )


def test_window_is_three_frames():
    assert window_samples(PHY) == WINDOW_FRAMES * PHY.frame_samples == 21504


def test_single_user_placement():
    rng = np.random.default_rng(0)
    syms = rng.integers(0, 256, PHY.payload_symbols)
    h = 0.3 - 0.4j
    amp = 5.0
    win = superpose([scenario(h, 1000, syms)], PHY, noise_sigma=0.0, tx_amplitude=amp)
    pkt = build_packet(PHY, syms)
    n = PHY.frame_samples
    np.testing.assert_allclose(win.samples[1000 : 1000 + n], amp * h * pkt.samples, atol=1e-12)
    assert np.all(win.samples[:1000] == 0)
    assert np.all(win.samples[1000 + n :] == 0)
    assert win.noise_sigma == 0.0
    assert len(win.users) == 1


def test_superposition_is_linear():
    rng = np.random.default_rng(1)
    u1 = scenario(1.0, 0, rng.integers(0, 256, 20))
    u2 = scenario(0.2j, 3777, rng.integers(0, 256, 20))
    both = superpose([u1, u2], PHY, 0.0)
    one = superpose([u1], PHY, 0.0)
    two = superpose([u2], PHY, 0.0)
    np.testing.assert_allclose(both.samples, one.samples + two.samples, atol=1e-12)


def test_noise_seed_reproducible_and_scaled():
    win_a = superpose([], PHY, 0.5, rng=np.random.default_rng(9))
    win_b = superpose([], PHY, 0.5, rng=np.random.default_rng(9))
    assert np.array_equal(win_a.samples, win_b.samples)
    # complex noise power equals sigma^2
    est = np.mean(np.abs(win_a.samples) ** 2)
    assert est == pytest.approx(0.25, rel=0.05)


def test_noiseless_energy_identity_disjoint_users():
    rng = np.random.default_rng(2)
    u1 = scenario(0.7, 0, rng.integers(0, 256, 20))
    u2 = scenario(0.1 + 0.2j, PHY.frame_samples + 11, rng.integers(0, 256, 20))
    amp = math.sqrt(10**1.4)
    win = superpose([u1, u2], PHY, 0.0, tx_amplitude=amp)
    energy = np.sum(np.abs(win.samples) ** 2)
    expected = sum(
        (amp * abs(u.channel_gain)) ** 2 * PHY.frame_samples for u in (u1, u2)
    )
    assert energy == pytest.approx(expected, rel=1e-9)


def test_overhang_truncated_with_warning(caplog):
    rng = np.random.default_rng(3)
    delay = window_samples(PHY) - 100
    u = scenario(1.0, delay, rng.integers(0, 256, 20))
    with caplog.at_level(logging.WARNING, logger="chirp_sic"):
        win = superpose([u], PHY, 0.0)
    assert any("truncat" in rec.message.lower() for rec in caplog.records)
    assert np.any(win.samples[delay:] != 0)
    assert win.samples.size == window_samples(PHY)


def test_out_of_range_delay_rejected():
    u = scenario(1.0, -1, np.zeros(20, dtype=int))
    with pytest.raises(ValueError):
        superpose([u], PHY, 0.0)
    u2 = scenario(1.0, window_samples(PHY), np.zeros(20, dtype=int))
    with pytest.raises(ValueError):
        superpose([u2], PHY, 0.0)


def test_alien_rate_user_occupies_its_own_frame_length():
    rng = np.random.default_rng(4)
    alien = scenario(1.0, 0, rng.integers(0, 512, 20), sf=9)
    win = superpose([alien], PHY, 0.0)
    n9 = PhyParams(sf=9).frame_samples
    assert np.all(win.samples[:n9] != 0)
    assert np.all(win.samples[n9:] == 0)


def test_slice_symbol_addresses_any_chirp():
    rng = np.random.default_rng(5)
    syms = rng.integers(0, 256, 20)
    win = superpose([scenario(1.0, 64, syms)], PHY, 0.0)
    pkt = build_packet(PHY, syms)
    for idx in (0, PHY.preamble_chirps, 27):
        got = slice_symbol(win, 64, idx)
        np.testing.assert_array_equal(got, pkt.samples[idx * 256 : (idx + 1) * 256])
    got = slice_symbol(win, 64, 3)
    got[:] = 0  # must be a copy
    assert np.any(slice_symbol(win, 64, 3) != 0)


def test_slice_symbol_bounds():
    win = superpose([], PHY, 0.0)
    with pytest.raises(ValueError):
        slice_symbol(win, -1, 0)
    with pytest.raises(ValueError):
        slice_symbol(win, 0, PHY.frame_chirps)
    with pytest.raises(ValueError):
        slice_symbol(win, window_samples(PHY) - 100, 0)


def test_dump_load_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    users = [draw_user(ChannelParams(), PHY, rng) for _ in range(3)]
    win = superpose(users, PHY, 0.3, rng=rng, tx_amplitude=2.0)
    path = tmp_path / "win.cssw"
    dump_window(win, path)
    samples, m_card = load_window(path)
    assert m_card == 256
    assert np.array_equal(samples, win.samples)
    assert path.stat().st_size == 32 + 16 * win.samples.size


def test_load_rejects_foreign_or_corrupt_files(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"NOPE" + bytes(60))
    with pytest.raises(ValueError):
        load_window(p)
    win = superpose([], PHY, 0.0)
    good = tmp_path / "good.cssw"
    dump_window(win, good)
    truncated = good.read_bytes()[:-8]
    bad2 = tmp_path / "short.cssw"
    bad2.write_bytes(truncated)
    with pytest.raises(ValueError):
        load_window(bad2)
