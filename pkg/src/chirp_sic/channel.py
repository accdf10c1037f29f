"""Uplink scene generation: path loss, Rayleigh fading, admission, delays.

Powers are tracked in milliwatt units throughout, so dBm values convert with
10**(dbm/10) and amplitudes carry sqrt(mW).  A user at distance d with
Rayleigh coefficient chi sees the flat complex channel

    h = d**(-eta/2) * chi

and is admitted to the scene only if its mean received power P_t*|h|**2
clears the receiver sensitivity; rejected draws are redrawn wholesale.
"""

import math
from dataclasses import dataclass

import numpy as np

from .phy import PhyParams

THERMAL_NOISE_DBM_PER_HZ = -174.0


class InfeasibleScenarioError(RuntimeError):
    """Admission rejection sampling failed to terminate for this configuration."""


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def mw_to_dbm(mw: float) -> float:
    return 10.0 * math.log10(mw)


def noise_power_dbm(bandwidth_hz: float, noise_figure_db: float) -> float:
    """Receiver noise floor: thermal density integrated over the bandwidth
    plus the noise figure."""
    if not bandwidth_hz > 0:
        raise ValueError(f"bandwidth_hz must be positive, got {bandwidth_hz}")
    return THERMAL_NOISE_DBM_PER_HZ + 10.0 * math.log10(bandwidth_hz) + noise_figure_db


@dataclass(frozen=True)
class ChannelParams:
    """Cell geometry, radio powers and admission threshold."""

    cell_radius_m: float = 5000.0
    path_loss_exponent: float = 3.5
    tx_power_dbm: float = 14.0
    noise_figure_db: float = 6.0
    sensitivity_dbm: float = -124.0

    def __post_init__(self):
        if not self.cell_radius_m > 0:
            raise ValueError(f"cell_radius_m must be positive, got {self.cell_radius_m}")
        if not self.path_loss_exponent > 0:
            raise ValueError(
                f"path_loss_exponent must be positive, got {self.path_loss_exponent}"
            )

    @property
    def tx_power_mw(self) -> float:
        return dbm_to_mw(self.tx_power_dbm)

    @property
    def tx_amplitude(self) -> float:
        """Transmit amplitude in sqrt(mW); every user sends at the same power."""
        return math.sqrt(self.tx_power_mw)

    @property
    def sensitivity_mw(self) -> float:
        return dbm_to_mw(self.sensitivity_dbm)


def noise_sigma(params: ChannelParams, phy: PhyParams) -> float:
    """Complex noise standard deviation (sqrt mW) at the demodulator input."""
    return math.sqrt(
        dbm_to_mw(noise_power_dbm(phy.bandwidth_hz, params.noise_figure_db))
    )


@dataclass
class UserScenario:
    """One admitted uplink transmission inside the observation window."""

    distance_m: float
    fading: complex
    channel_gain: complex
    delay_samples: int
    delay_s: float
    sf: int
    true_symbols: np.ndarray

    def received_power_mw(self, params: ChannelParams) -> float:
        return params.tx_power_mw * abs(self.channel_gain) ** 2


def _delay_and_symbols(phy: PhyParams, rng, delay_span_samples):
    span = 2 * phy.frame_samples if delay_span_samples is None else int(delay_span_samples)
    delay = int(rng.integers(0, span + 1))
    symbols = rng.integers(0, phy.m_cardinality, phy.payload_symbols)
    return delay, symbols


def draw_user(
    params: ChannelParams,
    phy: PhyParams,
    rng,
    delay_span_samples: int | None = None,
    max_tries: int = 100_000,
) -> UserScenario:
    """Draw one admitted user.

    Distance density grows linearly in d (uniform over the disc), fading is
    unit-variance circular Gaussian, and draws failing the sensitivity check
    are redrawn as a whole.  The packet start delay is uniform on the sample
    grid over [0, 2*frame_length] so the frame always lies inside a window of
    three frame durations.
    """
    rng = np.random.default_rng(rng)
    half_exp = params.path_loss_exponent / 2.0
    for _ in range(max_tries):
        d = params.cell_radius_m * math.sqrt(rng.uniform())
        chi = complex(rng.normal(), rng.normal()) / math.sqrt(2.0)
        h = d ** (-half_exp) * chi
        if params.tx_power_mw * abs(h) ** 2 >= params.sensitivity_mw:
            delay, symbols = _delay_and_symbols(phy, rng, delay_span_samples)
            return UserScenario(
                distance_m=d,
                fading=chi,
                channel_gain=h,
                delay_samples=delay,
                delay_s=delay * phy.sample_period_s,
                sf=phy.sf,
                true_symbols=symbols,
            )
    raise InfeasibleScenarioError(
        f"no admissible user after {max_tries} draws; "
        f"sensitivity {params.sensitivity_dbm} dBm is unreachable for this cell"
    )


def draw_user_at_power(
    params: ChannelParams,
    phy: PhyParams,
    rx_power_dbm: float,
    rng,
    delay_span_samples: int | None = None,
) -> UserScenario:
    """Draw a user whose received power is pinned to an exact level.

    Same construction as draw_user_at_snr but parameterized by absolute
    received power instead of SNR, so it stays meaningful for transmitters
    the receiver never decodes.
    """
    rng = np.random.default_rng(rng)
    hmag = math.sqrt(dbm_to_mw(rx_power_dbm) / params.tx_power_mw)
    theta = rng.uniform(0.0, 2.0 * np.pi)
    fading = complex(math.cos(theta), math.sin(theta))
    distance = hmag ** (-2.0 / params.path_loss_exponent)
    delay, symbols = _delay_and_symbols(phy, rng, delay_span_samples)
    return UserScenario(
        distance_m=distance,
        fading=fading,
        channel_gain=hmag * fading,
        delay_samples=delay,
        delay_s=delay * phy.sample_period_s,
        sf=phy.sf,
        true_symbols=symbols,
    )


def draw_user_at_snr(
    params: ChannelParams,
    phy: PhyParams,
    snr_db: float,
    rng,
    delay_span_samples: int | None = None,
) -> UserScenario:
    """Draw a user whose channel magnitude is pinned to an exact SNR.

    |h| is set so that P_t*|h|**2 / sigma_n**2 equals the target exactly; the
    phase stays uniform and the nominal distance is back-solved from the
    path-loss law so channel_gain == distance**(-eta/2) * fading still holds.
    """
    rng = np.random.default_rng(rng)
    sig = noise_sigma(params, phy)
    hmag = math.sqrt(db_to_linear(snr_db)) * sig / params.tx_amplitude
    theta = rng.uniform(0.0, 2.0 * np.pi)
    fading = complex(math.cos(theta), math.sin(theta))
    distance = hmag ** (-2.0 / params.path_loss_exponent)
    delay, symbols = _delay_and_symbols(phy, rng, delay_span_samples)
    return UserScenario(
        distance_m=distance,
        fading=fading,
        channel_gain=hmag * fading,
        delay_samples=delay,
        delay_s=delay * phy.sample_period_s,
        sf=phy.sf,
        true_symbols=symbols,
    )
