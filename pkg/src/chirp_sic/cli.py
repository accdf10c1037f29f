"""Command line front end.

Subcommands:

* ``run``       execute an experiment described by a JSON config and write
                results.csv plus a manifest that reproduces the run bit-exactly
* ``spectrum``  cross-check the FFT engine against the closed-form collision
                model for one configured overlap, writing a per-bin CSV
* ``selftest``  fast end-to-end invariant sweep, exit 1 on first failure

Exit codes: 0 success, 1 selftest failure, 2 configuration error (the message
names the offending field), 3 infeasible scenario (admission sampling cannot
terminate).  The environment variable CSS_SIC_LOG sets the log level.
"""

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
import tempfile
import time

import numpy as np

from . import __version__
from .channel import ChannelParams, InfeasibleScenarioError, UserScenario
from .experiments import ExperimentConfig, run_experiment
from .oracle import geometry, spectrum
from .phy import PhyParams, demodulate_symbol, modulate_symbol, raw_chirp
from .receiver import ReceiverConfig, detect_symbol, run_sic
from .window import ReceivedWindow, slice_symbol, superpose

log = logging.getLogger("chirp_sic")

PERTURB_ENV = "CSS_SIC_SELFTEST_PERTURB"


class ConfigError(ValueError):
    """Raised for any malformed or out-of-contract configuration input."""


# -- config parsing -------------------------------------------------------------


def _as_int(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    if isinstance(value, float):
        if not value.is_integer():
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        value = int(value)
    return int(value)


def _as_float(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _as_str(value, path):
    if not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string, got {value!r}")
    return value


def _as_list(conv):
    def parse(value, path):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return tuple(conv(v, f"{path}[{i}]") for i, v in enumerate(value))

    return parse


def _as_optional_float(value, path):
    if value is None:
        return None
    return _as_float(value, path)


_PHY_FIELDS = {
    "sf": _as_int,
    "bandwidth_hz": _as_float,
    "preamble_chirps": _as_int,
    "payload_symbols": _as_int,
}
_CHANNEL_FIELDS = {
    "cell_radius_m": _as_float,
    "path_loss_exponent": _as_float,
    "tx_power_dbm": _as_float,
    "noise_figure_db": _as_float,
    "sensitivity_dbm": _as_float,
}
_RECEIVER_FIELDS = {
    "max_iterations": _as_int,
    "eps_scale": _as_float,
    "epsilon": _as_optional_float,
    "preamble_false_alarm": _as_float,
    "comb_ratio": _as_float,
    "sharpness_ratio": _as_float,
    "tier_ratio": _as_float,
    "refine_gain_tol": _as_float,
    "noise_floor_ratio": _as_float,
}
_EXPERIMENT_FIELDS = {
    "kind": _as_str,
    "rounds": _as_int,
    "n_users": _as_int,
    "snr_db": _as_list(_as_float),
    "user_counts": _as_list(_as_int),
    "noise_dbm": _as_list(_as_float),
    "added_users": _as_list(_as_int),
    "interferer_sf": _as_list(_as_int),
    "interferer_rx_dbm": _as_float,
}

_TOP_KEYS = {"experiment", "phy", "channel", "receiver", "seed", "workers"}


def _parse_section(data, fields, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    out = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown key: {path}.{key}")
        out[key] = fields[key](value, f"{path}.{key}")
    return out


def _build(cls, kwargs, path):
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_config(path):
    """Parse and validate a run configuration (or a previously written
    manifest, whose embedded config is used verbatim).

    Returns a dict with fully built phy/channel/receiver/experiment objects.
    Unknown keys anywhere are rejected, naming the offending path.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError("top level: expected an object")
    if "config" in data and "experiment" not in data:
        # manifest re-run: the embedded effective config is authoritative
        data = data["config"]
        if not isinstance(data, dict):
            raise ConfigError("manifest config: expected an object")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown key: {sorted(unknown)[0]}")
    if "experiment" not in data:
        raise ConfigError("experiment section is required")
    if "phy" not in data or not isinstance(data["phy"], dict) or "sf" not in data["phy"]:
        raise ConfigError("phy.sf is required")
    exp_raw = _parse_section(data["experiment"], _EXPERIMENT_FIELDS, "experiment")
    if "kind" not in exp_raw:
        raise ConfigError("experiment.kind is required")
    if "seed" in data:
        exp_raw["master_seed"] = _as_int(data["seed"], "seed")
    if "workers" in data:
        exp_raw["workers"] = _as_int(data["workers"], "workers")
    phy = _build(PhyParams, _parse_section(data["phy"], _PHY_FIELDS, "phy"), "phy")
    channel = _build(
        ChannelParams, _parse_section(data.get("channel", {}), _CHANNEL_FIELDS, "channel"), "channel"
    )
    receiver = _build(
        ReceiverConfig, _parse_section(data.get("receiver", {}), _RECEIVER_FIELDS, "receiver"), "receiver"
    )
    experiment = _build(ExperimentConfig, exp_raw, "experiment")
    return {"phy": phy, "channel": channel, "receiver": receiver, "experiment": experiment}


def config_to_dict(built) -> dict:
    """Serialize built config objects back to the JSON shape load_config reads."""
    exp = dataclasses.asdict(built["experiment"])
    seed = exp.pop("master_seed")
    workers = exp.pop("workers")
    for key, value in list(exp.items()):
        if isinstance(value, tuple):
            exp[key] = list(value)
    return {
        "experiment": exp,
        "phy": dataclasses.asdict(built["phy"]),
        "channel": dataclasses.asdict(built["channel"]),
        "receiver": dataclasses.asdict(built["receiver"]),
        "seed": seed,
        "workers": workers,
    }


# -- output writing -------------------------------------------------------------


def _atomic_write(path, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


_CSV_SCHEMAS = {
    "fixed-snr-link": (
        ("snr_db", "mean_ser", "ci95", "symbols", "errors"),
        lambda p: (p.label["snr_db"], p.mean_ser, p.ci95, p.symbols, p.errors),
    ),
    "random-users": (
        ("n_users", "noise_dbm", "mean_ser", "ci95"),
        lambda p: (p.label["n_users"], p.label["noise_dbm"], p.mean_ser, p.ci95),
    ),
    "per-user": (
        ("power_rank", "ser"),
        lambda p: (p.label["power_rank"], p.mean_ser),
    ),
    "cross-sf": (
        ("added_users", "interferer_sf", "ser"),
        lambda p: (p.label["added_users"], p.label["interferer_sf"], p.mean_ser),
    ),
}


def results_csv(result) -> str:
    header, rower = _CSV_SCHEMAS[result.kind]
    lines = [",".join(header)]
    for point in result.points:
        lines.append(",".join(_fmt(v) for v in rower(point)))
    return "\n".join(lines) + "\n"


# -- subcommands ----------------------------------------------------------------


def cmd_run(args) -> int:
    t0 = time.monotonic()
    built = load_config(args.config)
    experiment = built["experiment"]
    if args.seed is not None:
        experiment = dataclasses.replace(experiment, master_seed=args.seed)
    if args.workers is not None:
        experiment = dataclasses.replace(experiment, workers=args.workers)
    built["experiment"] = experiment
    result = run_experiment(experiment, built["phy"], built["channel"], built["receiver"])
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "results.csv")
    manifest_path = os.path.join(args.out, "manifest.json")
    _atomic_write(csv_path, results_csv(result))
    manifest = {
        "tool": "chirp-sic",
        "version": __version__,
        "seed": experiment.master_seed,
        "workers": experiment.workers,
        "duration_s": round(time.monotonic() - t0, 3),
        "outputs": ["results.csv"],
        "config": config_to_dict(built),
    }
    _atomic_write(manifest_path, json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {csv_path} and {manifest_path}")
    return 0


def cmd_spectrum(args) -> int:
    phy = _build(PhyParams, {"sf": args.sf, "bandwidth_hz": args.bw}, "phy")
    m_card = phy.m_cardinality
    try:
        head_s, tail_s = args.interferer_symbols.split(",")
        m_head, m_tail = int(head_s), int(tail_s)
    except ValueError as exc:
        raise ConfigError(
            f"--interferer-symbols: expected HEAD,TAIL integers, got {args.interferer_symbols!r}"
        ) from exc
    for name, val in (("--symbol", args.symbol), ("--interferer-symbols", m_head), ("--interferer-symbols", m_tail)):
        if not 0 <= val < m_card:
            raise ConfigError(f"{name}: symbol {val} outside [0, {m_card})")
    if not 0 <= args.delta < m_card:
        raise ConfigError(f"--delta: offset {args.delta} outside [0, {m_card})")
    gain = 10.0 ** (args.gain_db / 20.0)

    # engine path: an actual two-packet window sliced at the collided symbol
    p_slice = 2  # payload symbol of the useful user that sees the configured overlap
    useful = UserScenario(
        distance_m=1.0,
        fading=1.0 + 0j,
        channel_gain=1.0 + 0j,
        delay_samples=0,
        delay_s=0.0,
        sf=phy.sf,
        true_symbols=np.full(phy.payload_symbols, args.symbol, dtype=np.int64),
    )
    isyms = np.zeros(phy.payload_symbols, dtype=np.int64)
    isyms[0], isyms[1] = m_tail, m_head
    delay = m_card * (p_slice - 1) + args.delta  # payload chirp 1 starts delta into the slice
    interferer = UserScenario(
        distance_m=1.0,
        fading=complex(gain),
        channel_gain=complex(gain),
        delay_samples=delay,
        delay_s=delay * phy.sample_period_s,
        sf=phy.sf,
        true_symbols=isyms,
    )
    win = superpose([useful, interferer], phy, 0.0)
    _, engine_mag = demodulate_symbol(
        phy, slice_symbol(win, 0, phy.preamble_chirps + p_slice)
    )

    geom = geometry(phy, args.delta, m_head, m_tail)
    pred = spectrum(phy, geom, args.symbol, useful_gain=1.0, interferer_gain=gain)
    oracle_mag = np.abs(pred.bins)

    lines = ["bin,engine_mag,oracle_mag"]
    for k in range(m_card):
        lines.append(f"{k},{float(engine_mag[k])!r},{float(oracle_mag[k])!r}")
    _atomic_write(args.out, "\n".join(lines) + "\n")
    worst = float(np.max(np.abs(engine_mag - oracle_mag)))
    print(f"wrote {args.out} (largest engine/model gap {worst:.3e})")
    return 0


# -- selftest -------------------------------------------------------------------


def _check_round_trip():
    for sf in (7, 8):
        phy = PhyParams(sf=sf)
        m_card = phy.m_cardinality
        for m in range(m_card):
            got, _ = demodulate_symbol(phy, modulate_symbol(phy, m))
            assert got == m, f"sf={sf} symbol {m} decoded as {got}"


def _check_demod_normalization():
    phy = PhyParams(sf=8)
    _, spec = demodulate_symbol(phy, modulate_symbol(phy, 77))
    assert abs(spec[77] - 1.0) < 1e-12, f"peak {spec[77]} != 1"
    rest = np.delete(spec, 77)
    assert rest.max() < 1e-9, f"off-peak leakage {rest.max()}"


def _check_oracle_equivalence():
    rng = np.random.default_rng(20260816)
    perturb = 1e-6 if os.environ.get(PERTURB_ENV) else 0.0
    for _ in range(20):
        sf = int(rng.integers(7, 10))
        phy = PhyParams(sf=sf)
        m_card = phy.m_cardinality
        delta = int(rng.integers(0, m_card))
        m_head, m_tail, mj = (int(v) for v in rng.integers(0, m_card, 3))
        gj = complex(rng.normal(), rng.normal())
        gi = complex(rng.normal(), rng.normal())
        c = raw_chirp(phy)
        seg = np.concatenate([np.roll(c, -m_tail), np.roll(c, -m_head)])
        x = gj * np.roll(c, -mj) + gi * seg[m_card - delta : 2 * m_card - delta]
        eng = np.abs(np.fft.fft(x * np.conj(c))) / m_card
        pred = spectrum(phy, geometry(phy, delta, m_head, m_tail), mj, gj, gi)
        gap = np.max(np.abs(eng - (np.abs(pred.bins) + perturb)))
        assert gap < 1e-9, f"sf={sf} delta={delta} gap={gap:.3e}"


def _check_noiseless_cancellation():
    rng = np.random.default_rng(7)
    phy = PhyParams()
    users = []
    for i in range(3):
        theta = rng.uniform(0, 2 * np.pi)
        gain = 10.0 ** (-i * 0.4) * complex(math.cos(theta), math.sin(theta))
        delay = int(rng.integers(0, 2 * phy.frame_samples + 1))
        users.append(
            UserScenario(
                distance_m=1.0,
                fading=gain,
                channel_gain=gain,
                delay_samples=delay,
                delay_s=delay * phy.sample_period_s,
                sf=phy.sf,
                true_symbols=rng.integers(0, phy.m_cardinality, phy.payload_symbols),
            )
        )
    win = superpose(users, phy, 0.0)
    energy_in = float(np.sum(np.abs(win.samples) ** 2))
    report = run_sic(win)
    errors = sum(oc.symbol_errors for oc in report.outcomes)
    assert errors == 0, f"{errors} symbol errors on a noiseless window"
    residual = float(np.sum(np.abs(report.residual) ** 2))
    assert residual < 1e-12 * energy_in, f"residual {residual:.3e} of {energy_in:.3e}"


def _check_noise_only():
    phy = PhyParams()
    rng = np.random.default_rng(3)
    sigma = 1e-6
    for _ in range(3):
        n = 3 * phy.frame_samples
        noise = sigma / np.sqrt(2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        win = ReceivedWindow(samples=noise, users=[], noise_sigma=sigma, phy=phy)
        report = run_sic(win)
        assert not report.decodes, f"{len(report.decodes)} detections on noise alone"


def _check_epsilon_zero():
    rng = np.random.default_rng(11)
    for _ in range(300):
        spec = rng.normal(size=64) + 1j * rng.normal(size=64)
        want = int(np.argmax(np.abs(spec)))
        got = detect_symbol(spec, expected_peak=2.0, epsilon=0.0)
        assert got == want, f"epsilon=0 gave {got}, argmax is {want}"


_SELFTEST_CHECKS = (
    ("chirp-round-trip", _check_round_trip),
    ("demod-normalization", _check_demod_normalization),
    ("oracle-equivalence", _check_oracle_equivalence),
    ("noiseless-cancellation", _check_noiseless_cancellation),
    ("noise-only-quiet", _check_noise_only),
    ("epsilon-zero-argmax", _check_epsilon_zero),
)


def cmd_selftest(args) -> int:
    for name, fn in _SELFTEST_CHECKS:
        t0 = time.monotonic()
        try:
            fn()
        except AssertionError as exc:
            print(f"FAIL {name}: {exc}")
            return 1
        print(f"ok {name} ({time.monotonic() - t0:.2f}s)")
    print("selftest passed")
    return 0


# -- entry point ----------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chirp-sic",
        description="chirp spread spectrum uplink simulator with interference cancellation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("config", help="config file (or a manifest from a previous run)")
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument("--seed", type=int, default=None, help="override the master seed")
    p_run.add_argument("--workers", type=int, default=None, help="override worker count")
    p_run.set_defaults(fn=cmd_run)

    p_spec = sub.add_parser("spectrum", help="engine vs closed-form collision spectrum")
    p_spec.add_argument("--sf", type=int, default=8)
    p_spec.add_argument("--bw", type=float, default=250e3)
    p_spec.add_argument("--symbol", type=int, required=True, help="useful symbol value")
    p_spec.add_argument(
        "--interferer-symbols",
        required=True,
        help="HEAD,TAIL: symbol starting at the offset and symbol ending there",
    )
    p_spec.add_argument("--delta", type=int, required=True, help="overlap offset in samples")
    p_spec.add_argument("--gain-db", type=float, default=0.0, help="interferer gain re useful")
    p_spec.add_argument("--out", default="spectrum.csv")
    p_spec.set_defaults(fn=cmd_spectrum)

    p_self = sub.add_parser("selftest", help="fast invariant sweep")
    p_self.set_defaults(fn=cmd_selftest)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("CSS_SIC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except InfeasibleScenarioError as exc:
        print(f"infeasible scenario: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
