"""Chirp spread spectrum baseband layer.

Discrete-time convention: one chirp occupies M = 2**sf samples taken at the
chirp bandwidth (critical sampling), indexed n = 0 .. M-1.  The raw upchirp is

    c[n] = exp(j*pi*(n*n/M - n))

which sweeps the full bandwidth once per symbol and is exactly M-periodic on
the integer grid.  A data symbol m is the cyclic shift c[(n+m) mod M], so
dechirping (conjugate multiply by the raw chirp) turns symbol m into the pure
tone exp(2j*pi*m*n/M) times a fixed phase, and an M-point FFT concentrates it
in bin m.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class PhyParams:
    """Static link parameters shared by every packet of one uplink class."""

    sf: int = 8
    bandwidth_hz: float = 250e3
    preamble_chirps: int = 8
    payload_symbols: int = 20

    def __post_init__(self):
        if not 7 <= int(self.sf) <= 12:
            raise ValueError(f"spreading factor must be within [7, 12], got {self.sf}")
        if not self.bandwidth_hz > 0:
            raise ValueError(f"bandwidth_hz must be positive, got {self.bandwidth_hz}")
        if int(self.preamble_chirps) < 1:
            raise ValueError(f"preamble_chirps must be >= 1, got {self.preamble_chirps}")
        if int(self.payload_symbols) < 1:
            raise ValueError(f"payload_symbols must be >= 1, got {self.payload_symbols}")

    @property
    def m_cardinality(self) -> int:
        """Symbol alphabet size M = 2**sf (also samples per chirp)."""
        return 1 << int(self.sf)

    @property
    def sample_period_s(self) -> float:
        return 1.0 / self.bandwidth_hz

    @property
    def symbol_duration_s(self) -> float:
        return self.m_cardinality / self.bandwidth_hz

    @property
    def frame_chirps(self) -> int:
        return int(self.preamble_chirps) + int(self.payload_symbols)

    @property
    def frame_samples(self) -> int:
        return self.frame_chirps * self.m_cardinality

    @property
    def frame_length_s(self) -> float:
        return self.frame_chirps * self.symbol_duration_s

    @property
    def preamble_samples(self) -> int:
        return int(self.preamble_chirps) * self.m_cardinality


@dataclass
class Packet:
    """One modulated frame: preamble of raw chirps followed by payload chirps."""

    symbols: np.ndarray
    samples: np.ndarray


@lru_cache(maxsize=16)
def _raw_chirp(m_card: int) -> np.ndarray:
    n = np.arange(m_card)
    c = np.exp(1j * np.pi * (n * n / m_card - n))
    c.flags.writeable = False
    return c


@lru_cache(maxsize=16)
def _peak_phase(m_card: int) -> np.ndarray:
    # phase of the dechirped FFT peak in bin k for a clean symbol-k chirp
    k = np.arange(m_card)
    rho = np.exp(1j * np.pi * (k * k / m_card - k))
    rho.flags.writeable = False
    return rho


@lru_cache(maxsize=4)
def _roll_table(m_card: int) -> np.ndarray:
    # rows: modulated chirp for every symbol value; kept only for small M
    c = _raw_chirp(m_card)
    idx = (np.arange(m_card)[None, :] + np.arange(m_card)[:, None]) % m_card
    t = c[idx]
    t.flags.writeable = False
    return t


def raw_chirp(params: PhyParams) -> np.ndarray:
    """Unit-amplitude upchirp covering one symbol period."""
    return _raw_chirp(params.m_cardinality).copy()


def peak_phase(params: PhyParams) -> np.ndarray:
    """Complex phase of the dechirped FFT peak at bin k, for k = 0 .. M-1.

    Dividing the decision spectrum by this (or multiplying by its conjugate)
    rotates every candidate peak onto the positive real axis, which is what
    the amplitude-anchored symbol gate in the receiver expects.
    """
    return _peak_phase(params.m_cardinality).copy()


def modulate_symbol(params: PhyParams, m: int) -> np.ndarray:
    """Cyclically shifted chirp carrying symbol value m."""
    m_card = params.m_cardinality
    m = int(m)
    if not 0 <= m < m_card:
        raise ValueError(f"symbol value must be within [0, {m_card}), got {m}")
    return np.roll(_raw_chirp(m_card), -m)


def modulated_rows(params: PhyParams, symbols) -> np.ndarray:
    """Stack of modulated chirps, one row per symbol value."""
    m_card = params.m_cardinality
    symbols = np.asarray(symbols, dtype=np.int64)
    if symbols.size and (symbols.min() < 0 or symbols.max() >= m_card):
        raise ValueError("symbol values out of range")
    if m_card <= 1024:
        return _roll_table(m_card)[symbols]
    c = _raw_chirp(m_card)
    idx = (np.arange(m_card)[None, :] + symbols[:, None]) % m_card
    return c[idx]


def build_packet(params: PhyParams, symbols) -> Packet:
    """Assemble a full frame from payload symbol values.

    The frame is preamble_chirps raw upchirps followed by one modulated chirp
    per payload symbol, at unit amplitude.
    """
    symbols = np.asarray(symbols, dtype=np.int64)
    if symbols.ndim != 1 or symbols.size != params.payload_symbols:
        raise ValueError(
            f"expected {params.payload_symbols} payload symbols, got shape {symbols.shape}"
        )
    pre = np.tile(_raw_chirp(params.m_cardinality), params.preamble_chirps)
    pay = modulated_rows(params, symbols).ravel()
    return Packet(symbols=symbols.copy(), samples=np.concatenate([pre, pay]))


def dechirp(params: PhyParams, samples) -> np.ndarray:
    """Multiply one symbol period by the conjugate raw chirp."""
    samples = np.asarray(samples)
    if samples.shape != (params.m_cardinality,):
        raise ValueError(
            f"expected {params.m_cardinality} samples, got shape {samples.shape}"
        )
    return samples * np.conj(_raw_chirp(params.m_cardinality))


def demodulate_symbol(params: PhyParams, samples) -> tuple[int, np.ndarray]:
    """Noncoherent symbol decision on one chirp period.

    Returns (symbol, spectrum) where spectrum is the magnitude of the
    1/M-normalized FFT of the dechirped samples.  A clean unit-amplitude
    chirp puts exactly 1.0 in its symbol bin.  Ties resolve to the lowest
    bin index.
    """
    m_card = params.m_cardinality
    spec = np.abs(np.fft.fft(dechirp(params, samples))) / m_card
    return int(np.argmax(spec)), spec
