"""Successive interference cancellation receiver.

The decode loop repeats: find the strongest preamble by sliding correlation,
estimate the flat channel from the preamble, decide payload symbols on the
normalized FFT spectrum with an amplitude-anchored gate, rebuild the packet
and subtract it.  Around that core sit the guards that make the loop stable
under heavy collisions:

* a sharpness gate rejects correlation blobs that are not single-sample
  peaks (true chirp autocorrelation dies within one lag);
* candidate starts one chirp apart (the correlation comb of a repeated
  preamble) are disambiguated by trial decodes, keeping the candidate that
  removes the most energy from the window;
* payload subtraction is guarded per chirp, so a wrongly decided symbol
  cannot inject more energy than it removes;
* after each detection tier (a run of comparable-strength finds), already
  accepted packets are re-estimated against the cleaned window and may move
  to a neighbouring comb position; this repairs early decisions that were
  degraded by then-unsubtracted interference.

Iteration counts are capped so pathological windows terminate.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .phy import PhyParams, _peak_phase, _raw_chirp, modulated_rows
from .window import ReceivedWindow

log = logging.getLogger("chirp_sic")


@dataclass(frozen=True)
class ReceiverConfig:
    """Knobs of the cancellation loop; defaults are the operating point."""

    max_iterations: int = 64
    eps_scale: float = 3.0  # symbol gate width in units of per-bin noise deviation
    epsilon: float | None = None  # fixed gate override; 0 degenerates to argmax
    preamble_false_alarm: float = 1e-4  # per-window false alarm budget
    comb_ratio: float = 0.75  # candidate comb teeth within this factor of the peak
    sharpness_ratio: float = 1.5  # peak must beat its side lags by this factor
    tier_ratio: float = 0.5  # a sweep ends when peaks fall below this share of the tier top
    refine_gain_tol: float = 1e-9  # relative channel movement counted as a change
    noise_floor_ratio: float = 1e-12  # peaks below this share of the run's top are numerical dust


@dataclass
class DetectionResult:
    """One preamble detection: where, how strong, and the channel behind it."""

    start_sample: int
    correlation_peak: complex
    estimated_channel: complex | None = None
    expected_peak: float = 1.0


@dataclass
class DecodedPacket:
    detection: DetectionResult
    symbols: np.ndarray
    epsilon: float


@dataclass
class UserOutcome:
    user_index: int
    decode_index: int | None
    symbol_errors: int


@dataclass
class SicReport:
    """Everything the cancellation loop did to one window."""

    decodes: list
    iterations: int
    residual: np.ndarray
    preamble_threshold: float
    outcomes: list = field(default_factory=list)


def preamble_threshold(
    phy: PhyParams, noise_sigma: float, n_lags: int, false_alarm: float = 1e-4
) -> float:
    """Correlation magnitude that noise alone exceeds somewhere in the window
    with probability `false_alarm`.

    A noise-only correlation magnitude is Rayleigh with scale
    sigma*sqrt(preamble_samples/2); inverting the maximum over n_lags lags
    (treated as independent, which is conservative at chirp bandwidth) gives
    the per-lag quantile.
    """
    if not 0 < false_alarm < 1:
        raise ValueError(f"false_alarm must be within (0, 1), got {false_alarm}")
    if n_lags < 1:
        raise ValueError(f"n_lags must be >= 1, got {n_lags}")
    if noise_sigma <= 0:
        return 0.0
    sig_r = noise_sigma * np.sqrt(phy.preamble_samples / 2.0)
    p1 = 1.0 - (1.0 - false_alarm) ** (1.0 / n_lags)
    return float(sig_r * np.sqrt(-2.0 * np.log(p1)))


def detect_symbol(spectrum, expected_peak: float, epsilon: float) -> int:
    """Amplitude-anchored symbol decision on one normalized decision spectrum.

    Picks the bin whose (complex) value lies closest to the expected useful
    peak; if even the closest bin misses by epsilon or more, falls back to
    the strongest-magnitude bin.  epsilon == 0 therefore reproduces the plain
    argmax rule.  Ties resolve to the lowest bin index.
    """
    spec = np.asarray(spectrum)
    dist = np.abs(spec - expected_peak)
    u = int(np.argmin(dist))
    if dist[u] < epsilon:
        return u
    return int(np.argmax(np.abs(spec)))


def estimate_channel(
    window: ReceivedWindow, start_sample: int, tx_amplitude: float = 1.0
) -> complex:
    """Average the dechirped preamble chirps down to one complex gain.

    Each preamble chirp dechirps to h*tx_amplitude plus noise in its mean
    (equivalently its bin-0 FFT value, 1/M normalized); averaging the
    preamble and dividing by tx_amplitude estimates h with the noise
    suppressed by preamble_chirps*M.
    """
    phy = window.phy
    s = int(start_sample)
    if s < 0 or s + phy.preamble_samples > window.samples.size:
        raise ValueError(
            f"preamble at start {s} falls outside the {window.samples.size}-sample window"
        )
    seg = window.samples[s : s + phy.preamble_samples].reshape(
        phy.preamble_chirps, phy.m_cardinality
    )
    means = (seg * np.conj(_raw_chirp(phy.m_cardinality))).mean(axis=1)
    return complex(means.mean() / tx_amplitude)


def detect_preamble(
    window: ReceivedWindow,
    config: ReceiverConfig | None = None,
    tx_amplitude: float = 1.0,
) -> DetectionResult | None:
    """Single-shot preamble search over every admissible lag.

    Correlates the window against the raw preamble template and returns the
    strongest lag if it clears the noise threshold, None otherwise.
    """
    cfg = config or ReceiverConfig()
    phy = window.phy
    n_lags = window.samples.size - phy.frame_samples + 1
    if n_lags < 1:
        raise ValueError("window is shorter than one frame")
    tmpl = np.tile(_raw_chirp(phy.m_cardinality), phy.preamble_chirps)
    corr = fftconvolve(window.samples, np.conj(tmpl)[::-1], mode="valid")[:n_lags]
    thr = preamble_threshold(phy, window.noise_sigma, n_lags, cfg.preamble_false_alarm)
    u = int(np.argmax(np.abs(corr)))
    if not np.abs(corr[u]) > thr:
        return None
    return DetectionResult(
        start_sample=u,
        correlation_peak=complex(corr[u]),
        estimated_channel=None,
        expected_peak=tx_amplitude,
    )


def reconstruct_and_subtract(
    window: ReceivedWindow,
    start_sample: int,
    symbols,
    channel_gain: complex,
    tx_amplitude: float = 1.0,
) -> ReceivedWindow:
    """Rebuild one packet at the estimated channel and subtract it.

    Returns a new window; the input is left untouched.  The placement must
    lie fully inside the window.
    """
    phy = window.phy
    s = int(start_sample)
    if s < 0 or s + phy.frame_samples > window.samples.size:
        raise ValueError(
            f"frame at start {s} falls outside the {window.samples.size}-sample window"
        )
    symbols = np.asarray(symbols, dtype=np.int64)
    if symbols.shape != (phy.payload_symbols,):
        raise ValueError(
            f"expected {phy.payload_symbols} symbols, got shape {symbols.shape}"
        )
    pre = np.tile(_raw_chirp(phy.m_cardinality), phy.preamble_chirps)
    pkt = np.concatenate([pre, modulated_rows(phy, symbols).ravel()])
    out = window.samples.copy()
    out[s : s + phy.frame_samples] -= (channel_gain * tx_amplitude) * pkt
    return ReceivedWindow(
        samples=out, users=window.users, noise_sigma=window.noise_sigma, phy=window.phy
    )


def match_decodes(decodes, users, phy: PhyParams) -> list:
    """Assign decoded packets to ground-truth users by start proximity.

    Each decode claims the nearest same-rate user within half a chirp; one
    decode per user (first in decode order wins).  Users left unclaimed count
    every payload symbol as an error.
    """
    half = phy.m_cardinality // 2
    claimed = {}
    for di, dec in enumerate(decodes):
        best, best_gap = None, half + 1
        for ui, u in enumerate(users):
            if u.sf != phy.sf or ui in claimed:
                continue
            gap = abs(int(u.delay_samples) - dec.detection.start_sample)
            if gap < best_gap:
                best, best_gap = ui, gap
        if best is not None and best_gap <= half:
            claimed[best] = di
    outcomes = []
    for ui, u in enumerate(users):
        if u.sf != phy.sf:
            continue
        di = claimed.get(ui)
        if di is None:
            outcomes.append(UserOutcome(ui, None, int(phy.payload_symbols)))
        else:
            errs = int(np.count_nonzero(decodes[di].symbols != u.true_symbols))
            outcomes.append(UserOutcome(ui, di, errs))
    return outcomes


class _Engine:
    """Working state of one cancellation run."""

    def __init__(self, window: ReceivedWindow, cfg: ReceiverConfig, tx_amplitude: float):
        phy = window.phy
        self.phy = phy
        self.cfg = cfg
        self.m = phy.m_cardinality
        self.n_pre = phy.preamble_chirps
        self.n_pay = phy.payload_symbols
        self.frame = phy.frame_samples
        self.sigma = float(window.noise_sigma)
        self.txamp = float(tx_amplitude)
        self.c = _raw_chirp(self.m)
        self.rho = _peak_phase(self.m)
        self.tmpl = np.tile(self.c, self.n_pre)
        self.win = window.samples.astype(complex, copy=True)
        self.n_lags = self.win.size - self.frame + 1
        if self.n_lags < 1:
            raise ValueError("window is shorter than one frame")
        self.max_start = self.n_lags - 1
        self.thr = preamble_threshold(
            phy, self.sigma, self.n_lags, cfg.preamble_false_alarm
        )
        self.corr_scale = 0.0  # strongest correlation seen; anchors the numerical floor
        self.iterations = 0
        self.out = []  # [start, symbols, hhat, subtracted, corr_complex, epsilon]

    # -- per-frame primitives -------------------------------------------------

    def slot_means(self, s, lo=0, hi=None):
        hi = self.n_pre if hi is None else hi
        seg = self.win[s + lo * self.m : s + hi * self.m].reshape(hi - lo, self.m)
        return (seg * np.conj(self.c)).mean(axis=1)

    def _epsilon(self, hhat):
        if self.cfg.epsilon is not None:
            return float(self.cfg.epsilon)
        if self.sigma == 0.0:
            return np.inf
        return self.cfg.eps_scale * self.sigma / (np.sqrt(self.m) * abs(hhat))

    def decode_payload(self, s, hhat):
        sl = self.win[s + self.n_pre * self.m : s + self.frame].reshape(self.n_pay, self.m)
        spec = np.fft.fft(sl * np.conj(self.c), axis=1) * (np.conj(self.rho) / (self.m * hhat))
        dist = np.abs(spec - self.txamp)
        syms = dist.argmin(axis=1)
        eps = self._epsilon(hhat)
        if np.isfinite(eps):
            ok = dist[np.arange(self.n_pay), syms] < eps
            if not ok.all():
                syms = np.where(ok, syms, np.abs(spec).argmax(axis=1))
        return syms, eps

    def rebuild(self, symbols, gain):
        pay = modulated_rows(self.phy, symbols).ravel()
        return np.concatenate([self.tmpl, pay]) * gain

    def trial_decode(self, s):
        """Decode a candidate start and score it by guarded energy removal.

        Preamble slots count their true removal (can go negative, punishing
        misplaced starts); payload slots are clamped at zero because guarded
        subtraction never applies a losing chirp.
        """
        hhat = complex(self.slot_means(s).mean() / self.txamp)
        if hhat == 0:
            return -np.inf, None, hhat, None, np.inf
        syms, eps = self.decode_payload(s, hhat)
        rec = self.rebuild(syms, hhat * self.txamp)
        seg = self.win[s : s + self.frame].reshape(self.n_pre + self.n_pay, self.m)
        rseg = rec.reshape(self.n_pre + self.n_pay, self.m)
        gain = np.sum(np.abs(seg) ** 2, axis=1) - np.sum(np.abs(seg - rseg) ** 2, axis=1)
        gain[self.n_pre :] = np.maximum(gain[self.n_pre :], 0.0)
        return float(gain.sum()), syms, hhat, rec, eps

    def apply_subtract(self, s, rec):
        """Subtract the preamble wholesale and each payload chirp only if it
        lowers that chirp's residual energy."""
        self.win[s : s + self.n_pre * self.m] -= rec[: self.n_pre * self.m]
        seg = self.win[s + self.n_pre * self.m : s + self.frame].reshape(self.n_pay, self.m)
        rseg = rec[self.n_pre * self.m :].reshape(self.n_pay, self.m)
        e0 = np.sum(np.abs(seg) ** 2, axis=1)
        e1 = np.sum(np.abs(seg - rseg) ** 2, axis=1)
        mask = e1 < e0
        seg[mask] -= rseg[mask]

    def comb_candidates(self, u, corr=None):
        span = range(-(self.n_pre - 1), self.n_pre)
        cands = [u + q * self.m for q in span if 0 <= u + q * self.m <= self.max_start]
        if corr is None:
            return cands
        return [s for s in cands if corr[s] >= self.cfg.comb_ratio * corr[u]]

    # -- sweeps ----------------------------------------------------------------

    def detect_sweep(self):
        """Detect-and-subtract until the window is quiet or the tier ends.

        Returns (found, done): done means nothing is left above threshold;
        a tier break (peaks fell below tier_ratio of this sweep's first
        accept) returns done=False so refinement runs before going deeper.
        """
        cfg = self.cfg
        found = 0
        tier_top = None
        suppressed = np.zeros(self.n_lags, dtype=bool)
        while self.iterations < cfg.max_iterations:
            corr = np.abs(
                fftconvolve(self.win, np.conj(self.tmpl)[::-1], mode="valid")[: self.n_lags]
            )
            corr[suppressed] = 0.0
            u = int(corr.argmax())
            self.corr_scale = max(self.corr_scale, corr[u])
            if not corr[u] > max(self.thr, cfg.noise_floor_ratio * self.corr_scale):
                return found, True
            if tier_top is not None and corr[u] < cfg.tier_ratio * tier_top:
                return found, False
            self.iterations += 1
            side = max(
                corr[u - 1] if u > 0 else 0.0,
                corr[u + 1] if u + 1 < self.n_lags else 0.0,
            )
            if not corr[u] > cfg.sharpness_ratio * side:
                lo = max(0, u - self.m // 2)
                suppressed[lo : u + self.m // 2 + 1] = True
                continue
            best = max(
                (self.trial_decode(s) + (s,) for s in self.comb_candidates(u, corr)),
                key=lambda t: t[0],
            )
            removal, syms, hhat, rec, eps, s = best
            if not removal > 0:
                lo = max(0, u - self.m // 2)
                suppressed[lo : u + self.m // 2 + 1] = True
                continue
            corrc = complex(self.slot_means(s).sum() * self.m)
            before = self.win[s : s + self.frame].copy()
            self.apply_subtract(s, rec)
            self.out.append([s, syms, hhat, before - self.win[s : s + self.frame], corrc, eps])
            found += 1
            if tier_top is None:
                tier_top = corr[u]
        return found, True

    def refine_sweep(self):
        """Re-estimate every accepted packet against the cleaned window.

        Each packet is added back, re-disambiguated across its comb
        positions, re-decoded, and re-subtracted; it may move, change
        symbols, or just polish its channel estimate.  Returns whether
        anything moved beyond tolerance.
        """
        cfg = self.cfg
        changed = False
        for ent in self.out:
            s0, syms0, h0, sub0, _, _ = ent
            self.win[s0 : s0 + self.frame] += sub0
            cands = self.comb_candidates(s0)
            coh = np.array([abs(self.slot_means(s).sum()) for s in cands])
            keep = [s for s, c in zip(cands, coh) if c >= cfg.comb_ratio * coh.max()]
            best = max(
                (self.trial_decode(s) + (s,) for s in keep), key=lambda t: t[0]
            )
            removal, syms, hhat, rec, eps, s = best
            old = np.sum(np.abs(self.win[s0 : s0 + self.frame]) ** 2) - np.sum(
                np.abs(self.win[s0 : s0 + self.frame] - sub0) ** 2
            )
            if removal >= old:
                if (
                    s != s0
                    or not np.array_equal(syms, syms0)
                    or abs(hhat - h0) > cfg.refine_gain_tol * abs(hhat)
                ):
                    changed = True
                corrc = complex(self.slot_means(s).sum() * self.m)
                before = self.win[s : s + self.frame].copy()
                self.apply_subtract(s, rec)
                ent[0], ent[1], ent[2] = s, syms, hhat
                ent[3] = before - self.win[s : s + self.frame]
                ent[4], ent[5] = corrc, eps
            else:
                self.win[s0 : s0 + self.frame] -= sub0
        return changed

    def run(self):
        cycles = 0
        while self.iterations < self.cfg.max_iterations and cycles < 2 * self.cfg.max_iterations:
            cycles += 1
            found, done = self.detect_sweep()
            changed = self.refine_sweep() if self.out else False
            if done and not found and not changed:
                break
        return self.out


def run_sic(
    window: ReceivedWindow,
    config: ReceiverConfig | None = None,
    tx_amplitude: float = 1.0,
) -> SicReport:
    """Run the full cancellation loop on one received window.

    Decoded packets are reported in acceptance order (strongest tiers
    first).  When the window carries ground-truth users of the same rate,
    per-user outcomes are matched by start-sample proximity.
    """
    cfg = config or ReceiverConfig()
    eng = _Engine(window, cfg, tx_amplitude)
    entries = eng.run()
    decodes = [
        DecodedPacket(
            detection=DetectionResult(
                start_sample=int(s),
                correlation_peak=corrc,
                estimated_channel=hhat,
                expected_peak=eng.txamp,
            ),
            symbols=np.asarray(syms, dtype=np.int64),
            epsilon=float(eps),
        )
        for s, syms, hhat, _, corrc, eps in entries
    ]
    outcomes = match_decodes(decodes, window.users, window.phy) if window.users else []
    if decodes:
        log.debug(
            "sic: %d packets in %d iterations, starts %s",
            len(decodes),
            eng.iterations,
            [d.detection.start_sample for d in decodes],
        )
    return SicReport(
        decodes=decodes,
        iterations=eng.iterations,
        residual=eng.win,
        preamble_threshold=eng.thr,
        outcomes=outcomes,
    )
