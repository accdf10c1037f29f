"""Monte Carlo symbol error rate experiments.

Every experiment round gets its own child generator spawned from the master
seed and the round index, so results are bit-reproducible for any worker
count and rounds can be chunked freely across processes.  Counts are
aggregated as integers; rates and confidence intervals are computed once at
the end.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .channel import (
    ChannelParams,
    dbm_to_mw,
    draw_user,
    draw_user_at_power,
    draw_user_at_snr,
    noise_sigma,
)
from .phy import PhyParams, build_packet
from .receiver import ReceiverConfig, run_sic
from .window import superpose

KINDS = ("fixed-snr-link", "random-users", "per-user", "cross-sf")

_Z95 = 1.959963984540054


@dataclass(frozen=True)
class ExperimentConfig:
    """What to sweep, how many rounds, and the seeding/parallelism policy."""

    kind: str
    rounds: int = 1000
    n_users: int = 10
    snr_db: tuple = ()  # fixed-snr-link sweep
    user_counts: tuple = ()  # random-users sweep
    noise_dbm: tuple = ()  # noise sweep; empty picks the kind's default
    added_users: tuple = ()  # cross-sf sweep
    interferer_sf: tuple = (9, 10, 12)
    interferer_rx_dbm: float = -122.0  # received power pinned for added aliens
    master_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if int(self.rounds) < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        if int(self.n_users) < 1:
            raise ValueError(f"n_users must be >= 1, got {self.n_users}")
        if int(self.workers) < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        for name in ("snr_db", "user_counts", "noise_dbm", "added_users", "interferer_sf"):
            object.__setattr__(self, name, tuple(getattr(self, name)))


@dataclass
class SweepPoint:
    """Aggregated counts for one sweep coordinate."""

    label: dict
    symbols: int
    errors: int
    mean_ser: float
    ci95: float
    per_user: np.ndarray | None = None


@dataclass
class SerResult:
    kind: str
    points: list


def wilson_halfwidth(errors: int, trials: int, z: float = _Z95) -> float:
    """Half-width of the Wilson score interval for a binomial rate."""
    if trials <= 0:
        return float("nan")
    p = errors / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    return (z / denom) * math.sqrt(p * (1.0 - p) / trials + z2 / (4.0 * trials * trials))


def round_rng(master_seed: int, round_index: int) -> np.random.Generator:
    """Independent generator for one round, stable across chunkings."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=master_seed, spawn_key=(round_index,))
    )


def _default_noise(kind: str) -> tuple:
    if kind == "random-users":
        return (-114.0, -117.0, -120.0)
    return (-114.0,)


# -- per-round workers (module level so process pools can pickle them) --------


def _chunk_fixed_snr(phy, chan, rx, snr_db, n_users, seed, lo, hi):
    sig = noise_sigma(chan, phy)
    txamp = chan.tx_amplitude
    errors = 0
    for r in range(lo, hi):
        rng = round_rng(seed, r)
        users = [draw_user_at_snr(chan, phy, snr_db, rng)]
        users += [draw_user(chan, phy, rng) for _ in range(n_users - 1)]
        win = superpose(users, phy, sig, rng, txamp)
        rep = run_sic(win, rx, txamp)
        errors += rep.outcomes[0].symbol_errors
    return errors, (hi - lo) * phy.payload_symbols


def _chunk_random_users(phy, chan, rx, n_users, noise_dbm, seed, lo, hi):
    sig = math.sqrt(dbm_to_mw(noise_dbm))
    txamp = chan.tx_amplitude
    errors = 0
    rank_errors = np.zeros(n_users, dtype=np.int64)
    for r in range(lo, hi):
        rng = round_rng(seed, r)
        users = [draw_user(chan, phy, rng) for _ in range(n_users)]
        win = superpose(users, phy, sig, rng, txamp)
        rep = run_sic(win, rx, txamp)
        order = np.argsort([-abs(u.channel_gain) for u in users], kind="stable")
        rank_of = np.empty(n_users, dtype=np.int64)
        rank_of[order] = np.arange(n_users)
        for oc in rep.outcomes:
            errors += oc.symbol_errors
            rank_errors[rank_of[oc.user_index]] += oc.symbol_errors
    return errors, (hi - lo) * n_users * phy.payload_symbols, rank_errors


def _alien_stream(iphy, user, n_samples, tx_amplitude):
    """Waveform of one saturated alien transmitter across the whole window.

    Added interferers model a busy neighboring rate: frames sent back to
    back, observed from a uniformly random offset into the frame cycle.
    Tiling instead of one-shot placement keeps the deposited energy equal
    for every rate, so rate comparisons measure spectral spreading and not
    frame-length bookkeeping.
    """
    pkt = build_packet(iphy, user.true_symbols)
    period = pkt.samples.size
    off = int(user.delay_samples) % period
    reps = -(-(n_samples + off) // period)
    return (tx_amplitude * user.channel_gain) * np.tile(pkt.samples, reps)[
        off : off + n_samples
    ]


def _chunk_cross_sf(phy, chan, rx, n_users, added, interferer_sf, rx_dbm, noise_dbm, seed, lo, hi):
    # Aliens come from a side stream keyed (round, 1) so the base population
    # and the noise stay identical across interferer rates and counts; with
    # zero added the round is bit-identical to _chunk_random_users.
    sig = math.sqrt(dbm_to_mw(noise_dbm))
    txamp = chan.tx_amplitude
    iphy = replace(phy, sf=interferer_sf) if interferer_sf != phy.sf else phy
    errors = 0
    for r in range(lo, hi):
        rng = round_rng(seed, r)
        users = [draw_user(chan, phy, rng) for _ in range(n_users)]
        win = superpose(users, phy, sig, rng, txamp)
        alien_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(r, 1))
        )
        for _ in range(added):
            alien = draw_user_at_power(
                chan, iphy, rx_dbm, alien_rng,
                delay_span_samples=iphy.frame_samples - 1,
            )
            win.samples[:] += _alien_stream(iphy, alien, win.samples.size, txamp)
        rep = run_sic(win, rx, txamp)
        errors += sum(oc.symbol_errors for oc in rep.outcomes)
    return errors, (hi - lo) * n_users * phy.payload_symbols


def _map_chunks(fn, fixed_args, rounds, workers):
    if workers <= 1:
        return [fn(*fixed_args, 0, rounds)]
    n_chunks = min(4 * workers, rounds)
    bounds = np.unique(np.linspace(0, rounds, n_chunks + 1).astype(int))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        futs = [
            ex.submit(fn, *fixed_args, int(lo), int(hi))
            for lo, hi in zip(bounds[:-1], bounds[1:])
        ]
        return [f.result() for f in futs]


# -- experiment kinds ----------------------------------------------------------


def run_fixed_snr(
    cfg: ExperimentConfig,
    phy: PhyParams | None = None,
    channel: ChannelParams | None = None,
    receiver: ReceiverConfig | None = None,
) -> SerResult:
    """Sweep target SNR for one pinned user among random interferers.

    Only the pinned user's symbols are scored; the interferers are scene
    dressing drawn from the admission law.
    """
    phy = phy or PhyParams()
    channel = channel or ChannelParams()
    receiver = receiver or ReceiverConfig()
    if not cfg.snr_db:
        raise ValueError("fixed-snr-link needs at least one snr_db value")
    points = []
    for snr in cfg.snr_db:
        parts = _map_chunks(
            _chunk_fixed_snr,
            (phy, channel, receiver, float(snr), cfg.n_users, cfg.master_seed),
            cfg.rounds,
            cfg.workers,
        )
        errors = sum(p[0] for p in parts)
        symbols = sum(p[1] for p in parts)
        points.append(
            SweepPoint(
                label={"snr_db": float(snr)},
                symbols=symbols,
                errors=errors,
                mean_ser=errors / symbols,
                ci95=wilson_halfwidth(errors, symbols),
            )
        )
    return SerResult(kind=cfg.kind, points=points)


def run_random_users(
    cfg: ExperimentConfig,
    phy: PhyParams | None = None,
    channel: ChannelParams | None = None,
    receiver: ReceiverConfig | None = None,
) -> SerResult:
    """Sweep the number of simultaneous users at each noise level; the mean
    SER aggregates every user of every round."""
    phy = phy or PhyParams()
    channel = channel or ChannelParams()
    receiver = receiver or ReceiverConfig()
    counts = cfg.user_counts or (cfg.n_users,)
    noises = cfg.noise_dbm or _default_noise(cfg.kind)
    points = []
    for noise in noises:
        for n in counts:
            parts = _map_chunks(
                _chunk_random_users,
                (phy, channel, receiver, int(n), float(noise), cfg.master_seed),
                cfg.rounds,
                cfg.workers,
            )
            errors = sum(p[0] for p in parts)
            symbols = sum(p[1] for p in parts)
            rank_errors = sum(p[2] for p in parts)
            per_user = rank_errors / (cfg.rounds * phy.payload_symbols)
            points.append(
                SweepPoint(
                    label={"n_users": int(n), "noise_dbm": float(noise)},
                    symbols=symbols,
                    errors=errors,
                    mean_ser=errors / symbols,
                    ci95=wilson_halfwidth(errors, symbols),
                    per_user=per_user,
                )
            )
    return SerResult(kind=cfg.kind, points=points)


def run_per_user(
    cfg: ExperimentConfig,
    phy: PhyParams | None = None,
    channel: ChannelParams | None = None,
    receiver: ReceiverConfig | None = None,
) -> SerResult:
    """Fixed user count; reports SER per received-power rank (0 strongest)."""
    phy = phy or PhyParams()
    channel = channel or ChannelParams()
    receiver = receiver or ReceiverConfig()
    noise = (cfg.noise_dbm or _default_noise(cfg.kind))[0]
    parts = _map_chunks(
        _chunk_random_users,
        (phy, channel, receiver, cfg.n_users, float(noise), cfg.master_seed),
        cfg.rounds,
        cfg.workers,
    )
    rank_errors = sum(p[2] for p in parts)
    per_rank_symbols = cfg.rounds * phy.payload_symbols
    points = [
        SweepPoint(
            label={"power_rank": rank},
            symbols=per_rank_symbols,
            errors=int(errs),
            mean_ser=errs / per_rank_symbols,
            ci95=wilson_halfwidth(int(errs), per_rank_symbols),
        )
        for rank, errs in enumerate(rank_errors)
    ]
    return SerResult(kind=cfg.kind, points=points)


def run_cross_sf(
    cfg: ExperimentConfig,
    phy: PhyParams | None = None,
    channel: ChannelParams | None = None,
    receiver: ReceiverConfig | None = None,
) -> SerResult:
    """Add alien-rate interferers on top of the base population and score the
    base users only.  The receiver never decodes or subtracts the aliens; with
    zero added this reduces exactly to the random-users experiment."""
    phy = phy or PhyParams()
    channel = channel or ChannelParams()
    receiver = receiver or ReceiverConfig()
    added_list = cfg.added_users or (0,)
    noise = (cfg.noise_dbm or _default_noise(cfg.kind))[0]
    points = []
    for isf in cfg.interferer_sf:
        for added in added_list:
            parts = _map_chunks(
                _chunk_cross_sf,
                (
                    phy,
                    channel,
                    receiver,
                    cfg.n_users,
                    int(added),
                    int(isf),
                    float(cfg.interferer_rx_dbm),
                    float(noise),
                    cfg.master_seed,
                ),
                cfg.rounds,
                cfg.workers,
            )
            errors = sum(p[0] for p in parts)
            symbols = sum(p[1] for p in parts)
            points.append(
                SweepPoint(
                    label={"added_users": int(added), "interferer_sf": int(isf)},
                    symbols=symbols,
                    errors=errors,
                    mean_ser=errors / symbols,
                    ci95=wilson_halfwidth(errors, symbols),
                )
            )
    return SerResult(kind=cfg.kind, points=points)


_RUNNERS = {
    "fixed-snr-link": run_fixed_snr,
    "random-users": run_random_users,
    "per-user": run_per_user,
    "cross-sf": run_cross_sf,
}


def run_experiment(
    cfg: ExperimentConfig,
    phy: PhyParams | None = None,
    channel: ChannelParams | None = None,
    receiver: ReceiverConfig | None = None,
) -> SerResult:
    return _RUNNERS[cfg.kind](cfg, phy, channel, receiver)
