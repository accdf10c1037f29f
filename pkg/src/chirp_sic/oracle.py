"""Closed-form model of one asynchronous chirp collision.

When an interferer is offset by a fractional-frame delay, any one symbol
period of the victim sees two consecutive interferer chirps: one whose tail
ends delta samples into the period and one whose head starts there.  After
dechirping, each piece is a windowed complex exponential whose frequency is
the interferer symbol value minus the sample offset, except that a cyclic
shift wraps inside the slice and splits a piece in two.  This module builds
that piecewise description, renders it in the time domain, and evaluates its
exact DFT as a sum of Dirichlet kernels, so the full FFT engine can be
cross-checked bin by bin against an independent derivation.
"""

from dataclasses import dataclass

import numpy as np

from .phy import PhyParams, _peak_phase, _raw_chirp


@dataclass(frozen=True)
class Segment:
    """One constant-frequency piece of the dechirped interference."""

    source: int  # 1: chirp starting delta samples into the slice; 2: chirp ending there
    kind: str  # "A" before the shift wraps, "B" the wrapped part
    freq_bin: int  # unreduced tone frequency s = m - delta in bin units
    start: int
    length: int


@dataclass(frozen=True)
class OverlapGeometry:
    """Piecewise layout of a two-symbol interferer overlap on one slice."""

    m_cardinality: int
    delta: int
    m_head: int
    m_tail: int
    c1_active: bool  # head chirp wraps inside the slice (m_head > delta)
    c2_active: bool  # tail chirp wraps inside the slice (m_tail < delta)
    segments: tuple


@dataclass(frozen=True)
class PeakTerm:
    """One Dirichlet-kernel contribution to the decision spectrum."""

    source: int
    kind: str
    center_bin: int  # freq_bin mod M; magnitude peaks here
    length: int
    amplitude: complex  # value the kernel contributes at its center bin


@dataclass(frozen=True)
class SpectrumPrediction:
    """Predicted 1/M-normalized decision spectrum for one collided slice."""

    bins: np.ndarray
    useful_bin: int
    peaks: tuple


def geometry(phy: PhyParams, delta: int, m_head: int, m_tail: int) -> OverlapGeometry:
    """Partition one symbol period overlapped by two interferer chirps.

    delta is the interferer's start offset inside the slice in samples,
    0 <= delta < M.  m_head is the symbol of the chirp beginning at delta,
    m_tail the symbol of the chirp ending there.  The returned segments
    cover [0, M) exactly once.
    """
    m_card = phy.m_cardinality
    delta, m_head, m_tail = int(delta), int(m_head), int(m_tail)
    if not 0 <= delta < m_card:
        raise ValueError(f"delta must be within [0, {m_card}), got {delta}")
    for name, m in (("m_head", m_head), ("m_tail", m_tail)):
        if not 0 <= m < m_card:
            raise ValueError(f"{name} must be within [0, {m_card}), got {m}")

    c1 = m_head > delta
    c2 = m_tail < delta
    segs = []
    # head chirp occupies [delta, M); its cyclic shift wraps at M - m_head
    if c1:
        segs.append(Segment(1, "A", m_head - delta, delta, m_card - m_head))
        segs.append(Segment(1, "B", m_head - delta, m_card + delta - m_head, m_head - delta))
    else:
        segs.append(Segment(1, "A", m_head - delta, delta, m_card - delta))
    # tail chirp occupies [0, delta); its shift wraps at delta - m_tail
    if delta > 0:
        if c2:
            segs.append(Segment(2, "B", m_tail - delta, 0, delta - m_tail))
            segs.append(Segment(2, "A", m_tail - delta, delta - m_tail, m_tail))
        else:
            segs.append(Segment(2, "A", m_tail - delta, 0, delta))
    return OverlapGeometry(
        m_cardinality=m_card,
        delta=delta,
        m_head=m_head,
        m_tail=m_tail,
        c1_active=c1,
        c2_active=c2,
        segments=tuple(s for s in segs if s.length > 0),
    )


def _segment_phase(seg: Segment, m_card: int) -> complex:
    # dechirped phase constant; identical for the A and B parts of one chirp
    # because the wrap only shifts the tone phase by a multiple of 2*pi
    s = seg.freq_bin
    return complex(np.exp(1j * np.pi * (s * s / m_card - s)))


def time_domain(phy: PhyParams, geom: OverlapGeometry) -> np.ndarray:
    """Render the interferer's raw contribution to the slice, unit amplitude.

    Piecewise, the dechirped interference is exp(2j*pi*s*n/M) times a fixed
    phase; multiplying back by the raw chirp gives the received waveform, so
    this output can be compared directly against a windowed engine slice.
    """
    m_card = geom.m_cardinality
    c = _raw_chirp(m_card)
    out = np.empty(m_card, dtype=complex)
    for seg in geom.segments:
        nn = np.arange(seg.start, seg.start + seg.length)
        tone = np.exp(2j * np.pi * seg.freq_bin * nn / m_card)
        out[nn] = c[nn] * _segment_phase(seg, m_card) * tone
    return out


def spectrum(
    phy: PhyParams,
    geom: OverlapGeometry,
    useful_symbol: int,
    useful_gain: complex = 1.0,
    interferer_gain: complex = 1.0,
) -> SpectrumPrediction:
    """Exact 1/M-normalized FFT of the dechirped collided slice.

    The useful user contributes a pure delta at its symbol bin; each
    interference segment contributes a Dirichlet kernel centred on
    (m - delta) mod M.  At bin offsets where the kernel denominator
    vanishes the limiting value (the segment length) is used.
    """
    m_card = geom.m_cardinality
    useful_symbol = int(useful_symbol)
    if not 0 <= useful_symbol < m_card:
        raise ValueError(f"useful_symbol must be within [0, {m_card}), got {useful_symbol}")
    rho = _peak_phase(m_card)
    k = np.arange(m_card)
    bins = np.zeros(m_card, dtype=complex)
    bins[useful_symbol] += useful_gain * rho[useful_symbol]
    peaks = []
    for seg in geom.segments:
        d = seg.freq_bin - k
        num = np.sin(np.pi * d * seg.length / m_card)
        den = np.sin(np.pi * d / m_card)
        with np.errstate(invalid="ignore", divide="ignore"):
            kern = (
                np.exp(2j * np.pi * d * seg.start / m_card)
                * np.exp(1j * np.pi * d * (seg.length - 1) / m_card)
                * num
                / den
            )
        kern = np.where(np.abs(den) < 1e-12, float(seg.length), kern)
        coeff = interferer_gain * _segment_phase(seg, m_card)
        bins += coeff * kern / m_card
        peaks.append(
            PeakTerm(
                source=seg.source,
                kind=seg.kind,
                center_bin=seg.freq_bin % m_card,
                length=seg.length,
                amplitude=complex(coeff * seg.length / m_card),
            )
        )
    return SpectrumPrediction(bins=bins, useful_bin=useful_symbol, peaks=tuple(peaks))
