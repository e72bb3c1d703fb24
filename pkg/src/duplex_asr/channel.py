"""Channel realizations for the flat, ITU outdoor A and asymmetric settings.

Taps are mapped straight into per sub-carrier gains on the baseband grid
``f_k = k B / K``; there is no cyclic-prefix model because the rate model
is per sub-carrier flat.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ChannelRealization, SystemParams

__all__ = [
    "TapProfile",
    "ITU_A_DELAYS_NS",
    "ITU_A_POWERS_DB",
    "ASYM_TAPS_12",
    "ASYM_TAPS_21",
    "ASYM_SI_TAPS_11",
    "ASYM_SI_TAPS_22",
    "DEFAULT_ITU_SEED",
    "path_loss_db",
    "flat_channel",
    "si_tap_profile",
    "frequency_response",
    "itu_a_channel",
    "asymmetric_channel",
    "channel_csv_text",
    "write_channel_csv",
    "read_channel_csv",
    "CHANNEL_CSV_COLUMNS",
]

ITU_A_DELAYS_NS = (0.0, 300.0, 700.0, 1100.0, 1700.0, 2500.0)
ITU_A_POWERS_DB = (0.0, -1.0, -9.0, -10.0, -15.0, -20.0)

# transmission taps, link 1->2 and 2->1
ASYM_TAPS_12 = (9.9863e2, 2.6934e2, 3.3458e2j, 3.1862e2, 2.1856e2j, 0.9111e2)
ASYM_TAPS_21 = (1.4921e3j, 1.1503e3, 0.8853e3, 1.1284e3, 0.1637e3, 0.4007e3j)
# SI taps at node 1 and node 2
ASYM_SI_TAPS_11 = (1.3103e2, 1.6827e2j, 1.3241e2, 1.0621e2)
ASYM_SI_TAPS_22 = (1.3712e2, 0.3585e2, 0.4396e2j, 0.2212e2j)

DEFAULT_ITU_SEED = 2016


@dataclass(frozen=True)
class TapProfile:
    """A tapped delay line: delays in ns and complex tap amplitudes."""

    delays_ns: tuple
    amplitudes: tuple
    label: str = ""

    def __post_init__(self):
        delays = tuple(float(d) for d in self.delays_ns)
        amps = tuple(complex(a) for a in self.amplitudes)
        if not delays:
            raise ValueError("a tap profile needs at least one tap")
        if len(delays) != len(amps):
            raise ValueError("delays and amplitudes differ in length")
        if any(d < 0 for d in delays):
            raise ValueError("delays must be non-negative")
        if any(b <= a for a, b in zip(delays, delays[1:])):
            raise ValueError("delays must be strictly increasing")
        object.__setattr__(self, "delays_ns", delays)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def total_power(self) -> float:
        return float(sum(abs(a) ** 2 for a in self.amplitudes))

    def scaled_to_power(self, power: float) -> "TapProfile":
        s = math.sqrt(power / self.total_power)
        return TapProfile(self.delays_ns, tuple(a * s for a in self.amplitudes), self.label)


def path_loss_db(distance_m: float) -> float:
    """Outdoor LOS path loss in dB, ``103.8 + 20.9 log10(d / 1 km)``."""
    if not distance_m > 0:
        raise ValueError(f"distance must be positive, got {distance_m}")
    return 103.8 + 20.9 * math.log10(distance_m / 1000.0)


def _link_power(params: SystemParams) -> float:
    return 10.0 ** (-path_loss_db(params.distance_m) / 10.0)


def _beta(beta_db: float, k: int) -> np.ndarray:
    return np.full(k, 10.0 ** (beta_db / 20.0))


def flat_channel(params: SystemParams, si_atten_db: float = -60.0, beta_db: float = -40.0) -> ChannelRealization:
    """Identical real gains on every sub-carrier and in both directions."""
    k = params.num_subcarriers
    h = np.full(k, math.sqrt(_link_power(params)), dtype=complex)
    h_si = np.full(k, 10.0 ** (si_atten_db / 20.0), dtype=complex)
    b = _beta(beta_db, k)
    return ChannelRealization(h21=h, h12=h, h11=h_si, h22=h_si, beta1=b, beta2=b)


def si_tap_profile(atten_db: float, bandwidth_hz: float = 10e6) -> TapProfile:
    """Four symbol-spaced SI taps with an ``exp(-t)`` amplitude decay.

    The decay is read as an amplitude shape; the taps are then rescaled so
    that their total power equals ``10**(atten_db/10)``.
    """
    t = np.arange(4)
    shape = np.exp(-t) / np.sum(np.exp(-t))
    ts_ns = 1e9 / bandwidth_hz
    prof = TapProfile(tuple(t * ts_ns), tuple(shape), label="si-exp4")
    return prof.scaled_to_power(10.0 ** (atten_db / 10.0))


def frequency_response(taps: TapProfile, k: int, bandwidth_hz: float) -> np.ndarray:
    """``H[k] = sum_l a_l exp(-j 2 pi f_k tau_l)`` on ``f_k = k B / K``."""
    f = np.arange(k) * (bandwidth_hz / k)
    tau = np.asarray(taps.delays_ns) * 1e-9
    a = np.asarray(taps.amplitudes)
    return np.exp(-2j * np.pi * np.outer(f, tau)) @ a


def _normalized(h: np.ndarray, power: float) -> np.ndarray:
    return h * math.sqrt(power / np.mean(np.abs(h) ** 2))


def itu_a_channel(
    params: SystemParams,
    si_atten_db: float = -60.0,
    beta_db: float = -40.0,
    rng_seed: int = DEFAULT_ITU_SEED,
) -> ChannelRealization:
    """Symmetric frequency-selective channel from the ITU outdoor A profile.

    Tap phases are uniform on ``[0, 2 pi)`` from a Philox stream keyed by
    ``rng_seed``; the average power over sub-carriers equals the path-loss
    gain.
    """
    k = params.num_subcarriers
    rng = np.random.Generator(np.random.Philox(rng_seed))
    phases = rng.uniform(0.0, 2 * np.pi, size=len(ITU_A_DELAYS_NS))
    amps = np.sqrt(10.0 ** (np.asarray(ITU_A_POWERS_DB) / 10.0)) * np.exp(1j * phases)
    prof = TapProfile(ITU_A_DELAYS_NS, tuple(amps), label="itu-outdoor-a")
    h = _normalized(frequency_response(prof, k, params.bandwidth_hz), _link_power(params))
    h_si = frequency_response(si_tap_profile(si_atten_db, params.bandwidth_hz), k, params.bandwidth_hz)
    b = _beta(beta_db, k)
    return ChannelRealization(h21=h, h12=h, h11=h_si, h22=h_si, beta1=b, beta2=b)


def asymmetric_channel(
    params: SystemParams,
    si_atten_db: float = -60.0,
    beta_db: float = -40.0,
    raw: bool = False,
) -> ChannelRealization:
    """Deterministic non-reciprocal channel from the tabulated complex taps.

    Transmission taps sit on the ITU outdoor A delays and SI taps are
    symbol-spaced. Unless ``raw`` is set each link is rescaled to the
    flat-channel path-loss gain (transmission) or ``si_atten_db`` (SI).
    """
    k, bw = params.num_subcarriers, params.bandwidth_hz
    ts_ns = 1e9 / bw
    si_delays = tuple(i * ts_ns for i in range(4))

    def resp(delays, taps, label):
        return frequency_response(TapProfile(delays, taps, label), k, bw)

    h21 = resp(ITU_A_DELAYS_NS, ASYM_TAPS_12, "asym-1to2")
    h12 = resp(ITU_A_DELAYS_NS, ASYM_TAPS_21, "asym-2to1")
    h11 = resp(si_delays, ASYM_SI_TAPS_11, "asym-si-1")
    h22 = resp(si_delays, ASYM_SI_TAPS_22, "asym-si-2")
    if not raw:
        pl = _link_power(params)
        si = 10.0 ** (si_atten_db / 10.0)
        h21, h12 = _normalized(h21, pl), _normalized(h12, pl)
        h11, h22 = _normalized(h11, si), _normalized(h22, si)
    b = _beta(beta_db, k)
    return ChannelRealization(h21=h21, h12=h12, h11=h11, h22=h22, beta1=b, beta2=b)


CHANNEL_CSV_COLUMNS = (
    "k",
    "h21_re", "h21_im",
    "h12_re", "h12_im",
    "h11_re", "h11_im",
    "h22_re", "h22_im",
    "beta1", "beta2",
)


def channel_csv_text(ch: ChannelRealization) -> str:
    """CSV text of a realization with full double precision (``repr`` of each float)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CHANNEL_CSV_COLUMNS)
    for k in range(ch.num_subcarriers):
        row = [k]
        for h in (ch.h21, ch.h12, ch.h11, ch.h22):
            row += [repr(float(h[k].real)), repr(float(h[k].imag))]
        row += [repr(float(ch.beta1[k])), repr(float(ch.beta2[k]))]
        w.writerow(row)
    return buf.getvalue()


def write_channel_csv(ch: ChannelRealization, path) -> None:
    Path(path).write_text(channel_csv_text(ch))


def read_channel_csv(path) -> ChannelRealization:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CHANNEL_CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        rows = sorted(reader, key=lambda r: int(r["k"]))
    if not rows:
        raise ValueError(f"{path}: no sub-carrier rows")

    def col(name):
        return np.array([float(r[name]) for r in rows])

    def cplx(name):
        return col(f"{name}_re") + 1j * col(f"{name}_im")

    return ChannelRealization(
        h21=cplx("h21"), h12=cplx("h12"), h11=cplx("h11"), h22=cplx("h22"),
        beta1=col("beta1"), beta2=col("beta2"),
    )
