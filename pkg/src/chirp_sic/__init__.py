"""Asynchronous chirp spread spectrum uplink simulator with a successive
interference cancellation receiver and Monte Carlo error-rate experiments."""

import logging

from .channel import (
    ChannelParams,
    InfeasibleScenarioError,
    UserScenario,
    draw_user,
    draw_user_at_power,
    draw_user_at_snr,
    noise_power_dbm,
    noise_sigma,
)
from .experiments import (
    ExperimentConfig,
    SerResult,
    SweepPoint,
    run_cross_sf,
    run_experiment,
    run_fixed_snr,
    run_per_user,
    run_random_users,
    wilson_halfwidth,
)
from .oracle import OverlapGeometry, SpectrumPrediction, geometry, spectrum, time_domain
from .phy import (
    Packet,
    PhyParams,
    build_packet,
    dechirp,
    demodulate_symbol,
    modulate_symbol,
    peak_phase,
    raw_chirp,
)
from .receiver import (
    DecodedPacket,
    DetectionResult,
    ReceiverConfig,
    SicReport,
    UserOutcome,
    detect_preamble,
    detect_symbol,
    estimate_channel,
    match_decodes,
    preamble_threshold,
    reconstruct_and_subtract,
    run_sic,
)
from .window import (
    ReceivedWindow,
    dump_window,
    load_window,
    slice_symbol,
    superpose,
    window_samples,
)

__version__ = "0.1.0"

logging.getLogger("chirp_sic").addHandler(logging.NullHandler())
