"""Received-window assembly: delayed packet superposition plus thermal noise.

The gateway observes a window of three frame durations so that any packet
starting within [0, 2*frame] lies fully inside it.  Users with a larger
spreading factor than the window's reference produce longer packets; their
overhang past the window edge is truncated (with a logged warning) since the
reference receiver never decodes them anyway.
"""

import logging
import struct
from dataclasses import dataclass, replace

import numpy as np

from .channel import UserScenario
from .phy import PhyParams, build_packet

log = logging.getLogger("chirp_sic")

WINDOW_FRAMES = 3

_HEADER_FMT = "<4sHHIQ12x"  # magic, version, reserved, M, sample count; 32 bytes
_MAGIC = b"CSSW"
_VERSION = 1


@dataclass
class ReceivedWindow:
    """Complex baseband observation plus the ground truth that produced it."""

    samples: np.ndarray
    users: list
    noise_sigma: float
    phy: PhyParams


def window_samples(phy: PhyParams) -> int:
    return WINDOW_FRAMES * phy.frame_samples


def superpose(
    users,
    phy: PhyParams,
    noise_sigma: float,
    rng=None,
    tx_amplitude: float = 1.0,
) -> ReceivedWindow:
    """Sum all users' delayed packets at their channel gains and add noise.

    Each user contributes channel_gain * tx_amplitude * packet placed at its
    delay.  Noise is circular complex Gaussian with per-component variance
    noise_sigma**2 / 2.  rng may be a seed or Generator; it is only consulted
    when noise_sigma > 0.
    """
    n = window_samples(phy)
    win = np.zeros(n, dtype=complex)
    for u in users:
        uphy = phy if u.sf == phy.sf else replace(phy, sf=u.sf)
        pkt = build_packet(uphy, u.true_symbols).samples
        s = int(u.delay_samples)
        if s < 0 or s >= n:
            raise ValueError(
                f"user delay {s} samples falls outside the {n}-sample window"
            )
        end = min(s + pkt.size, n)
        if end < s + pkt.size:
            log.warning(
                "packet truncated at window edge: sf=%d start=%d lost=%d samples",
                u.sf,
                s,
                s + pkt.size - end,
            )
        win[s:end] += (u.channel_gain * tx_amplitude) * pkt[: end - s]
    if noise_sigma > 0:
        gen = np.random.default_rng(rng)
        win += (noise_sigma / np.sqrt(2.0)) * (
            gen.standard_normal(n) + 1j * gen.standard_normal(n)
        )
    return ReceivedWindow(samples=win, users=list(users), noise_sigma=float(noise_sigma), phy=phy)


def slice_symbol(window: ReceivedWindow, start_sample: int, index: int) -> np.ndarray:
    """Extract the samples of chirp number `index` of a frame starting at
    `start_sample`.  Index counts all chirps from the frame start, so the
    first payload chirp sits at index == preamble_chirps."""
    m_card = window.phy.m_cardinality
    if not 0 <= int(index) < window.phy.frame_chirps:
        raise ValueError(
            f"chirp index must be within [0, {window.phy.frame_chirps}), got {index}"
        )
    a = int(start_sample) + int(index) * m_card
    if a < 0 or a + m_card > window.samples.size:
        raise ValueError(
            f"symbol slice [{a}, {a + m_card}) falls outside the "
            f"{window.samples.size}-sample window"
        )
    return window.samples[a : a + m_card].copy()


def dump_window(window: ReceivedWindow, path) -> None:
    """Write the raw window to disk: 32-byte header then interleaved
    re/im float64 little-endian samples."""
    samples = np.ascontiguousarray(window.samples, dtype=complex)
    header = struct.pack(
        _HEADER_FMT, _MAGIC, _VERSION, 0, window.phy.m_cardinality, samples.size
    )
    inter = np.empty(2 * samples.size, dtype="<f8")
    inter[0::2] = samples.real
    inter[1::2] = samples.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(inter.tobytes())


def load_window(path) -> tuple[np.ndarray, int]:
    """Read back a dumped window; returns (samples, m_cardinality)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    head = struct.calcsize(_HEADER_FMT)
    magic, version, _, m_card, count = struct.unpack(_HEADER_FMT, raw[:head])
    if magic != _MAGIC:
        raise ValueError(f"bad magic {magic!r}, expected {_MAGIC!r}")
    if version != _VERSION:
        raise ValueError(f"unsupported dump version {version}")
    inter = np.frombuffer(raw[head:], dtype="<f8")
    if inter.size != 2 * count:
        raise ValueError("sample payload does not match header count")
    return inter[0::2] + 1j * inter[1::2], int(m_card)
