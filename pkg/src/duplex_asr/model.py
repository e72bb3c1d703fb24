"""System model, rate functions and their analytic derivatives.

Energies are per sub-carrier and the frame lasts one time unit, so an
energy in joules is numerically the average power in watts over the frame.
All rates are spectral efficiencies in bits/s/Hz averaged over the K
sub-carriers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

LN2 = math.log(2.0)

__all__ = [
    "SystemParams",
    "ChannelRealization",
    "HdUpaAllocation",
    "HdNupaAllocation",
    "FdUpaAllocation",
    "FdNupaAllocation",
    "RateBreakdown",
    "AbcCoefficients",
    "DegenerateAllocationError",
    "ser_from_evm_dbc",
    "noise_power_per_subcarrier",
    "abc_coefficients",
    "hd_upa_rates",
    "hd_nupa_rates",
    "fd_upa_rates",
    "fd_nupa_rates",
    "hd_upa_gradients",
    "hd_nupa_gradients",
    "fd_nupa_gradients",
    "residual_system_hd_upa",
    "residual_jacobian_hd_upa",
]


class DegenerateAllocationError(ValueError):
    """Raised when a node has energy but no transmission time."""


def ser_from_evm_dbc(evm_dbc: float) -> float:
    """Signal-to-EVM power ratio for an EVM level given in dBc."""
    return 10.0 ** (-evm_dbc / 10.0)


def _noise_watts(noise_density_dbm_hz, noise_figure_db, bandwidth_hz, num_subcarriers):
    return 10.0 ** ((noise_density_dbm_hz + noise_figure_db) / 10.0) * 1e-3 * (
        bandwidth_hz / num_subcarriers
    )


@dataclass(frozen=True)
class SystemParams:
    """Scalar system constants.

    ``n1`` is the noise power at node 1's receiver (backward link) and ``n2``
    at node 2's receiver (forward link). The raw Table-II style inputs are
    kept only for provenance; the solvers read ``gamma_e``, ``n1``, ``n2``,
    ``total_energy`` and ``num_subcarriers``.
    """

    gamma_e: float
    n1: float
    n2: float
    total_energy: float
    num_subcarriers: int
    bandwidth_hz: float = 10e6
    carrier_hz: float = 2e9
    distance_m: float = 30.0
    noise_figure_db: float = 10.0
    evm_dbc: float = -30.0
    antenna_gain_db: float = 0.0
    noise_density_dbm_hz: float = -174.0

    def __post_init__(self):
        if not self.gamma_e > 0:
            raise ValueError(f"gamma_e must be positive, got {self.gamma_e}")
        if not (self.n1 > 0 and self.n2 > 0):
            raise ValueError("noise powers n1, n2 must be positive")
        if not self.total_energy >= 0:
            raise ValueError(f"total_energy must be non-negative, got {self.total_energy}")
        if int(self.num_subcarriers) != self.num_subcarriers or self.num_subcarriers < 1:
            raise ValueError(f"num_subcarriers must be a positive integer, got {self.num_subcarriers}")

    @classmethod
    def from_table(
        cls,
        total_energy: float,
        *,
        num_subcarriers: int = 64,
        bandwidth_hz: float = 10e6,
        carrier_hz: float = 2e9,
        distance_m: float = 30.0,
        noise_figure_db: float = 10.0,
        evm_dbc: float = -30.0,
        antenna_gain_db: float = 0.0,
        noise_density_dbm_hz: float = -174.0,
        full_band_noise: bool = False,
    ) -> "SystemParams":
        """Build parameters from raw link-budget inputs (defaults: 10 MHz, K=64, -30 dBc, 30 m).

        The thermal noise is integrated over one sub-carrier's bandwidth
        ``B/K``; ``full_band_noise`` integrates it over the whole band ``B``
        instead, a calibration that puts K times more noise on every
        sub-carrier.
        """
        noise = _noise_watts(noise_density_dbm_hz, noise_figure_db, bandwidth_hz, 1 if full_band_noise else num_subcarriers)
        return cls(
            gamma_e=ser_from_evm_dbc(evm_dbc),
            n1=noise,
            n2=noise,
            total_energy=total_energy,
            num_subcarriers=num_subcarriers,
            bandwidth_hz=bandwidth_hz,
            carrier_hz=carrier_hz,
            distance_m=distance_m,
            noise_figure_db=noise_figure_db,
            evm_dbc=evm_dbc,
            antenna_gain_db=antenna_gain_db,
            noise_density_dbm_hz=noise_density_dbm_hz,
        )

    def with_energy(self, total_energy: float) -> "SystemParams":
        return replace(self, total_energy=total_energy)

    def swapped(self) -> "SystemParams":
        return replace(self, n1=self.n2, n2=self.n1)


def noise_power_per_subcarrier(params: SystemParams) -> float:
    """Thermal noise power in watts over one sub-carrier's bandwidth."""
    if not params.bandwidth_hz > 0:
        raise ValueError("bandwidth_hz must be positive")
    return _noise_watts(
        params.noise_density_dbm_hz,
        params.noise_figure_db,
        params.bandwidth_hz,
        params.num_subcarriers,
    )


def _as_vector(x, dtype) -> np.ndarray:
    arr = np.array(x, dtype=dtype).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ChannelRealization:
    """Per sub-carrier complex gains of the four links plus baseband SI factors.

    ``h21`` carries node 1 -> node 2 (forward), ``h12`` node 2 -> node 1,
    ``h11``/``h22`` are the residual SI channels after antenna and RF
    cancellation, and ``beta1``/``beta2`` the digital cancellation amplitudes.
    """

    h21: np.ndarray
    h12: np.ndarray
    h11: np.ndarray
    h22: np.ndarray
    beta1: np.ndarray
    beta2: np.ndarray

    def __post_init__(self):
        for name in ("h21", "h12", "h11", "h22"):
            object.__setattr__(self, name, _as_vector(getattr(self, name), np.complex128))
        for name in ("beta1", "beta2"):
            object.__setattr__(self, name, _as_vector(getattr(self, name), np.float64))
        k = self.h21.size
        if k < 1:
            raise ValueError("channel must have at least one sub-carrier")
        for name in ("h12", "h11", "h22", "beta1", "beta2"):
            if getattr(self, name).size != k:
                raise ValueError(f"{name} has length {getattr(self, name).size}, expected {k}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if np.any(b < 0) or np.any(b > 1):
                raise ValueError(f"{name} entries must lie in [0, 1]")

    @property
    def num_subcarriers(self) -> int:
        return self.h21.size

    def swapped(self) -> "ChannelRealization":
        """The same link seen with the node indices exchanged."""
        return ChannelRealization(
            h21=self.h12, h12=self.h21, h11=self.h22, h22=self.h11,
            beta1=self.beta2, beta2=self.beta1,
        )

    def gains(self):
        """Power gains ``(|h21|^2, |h12|^2)``."""
        return np.abs(self.h21) ** 2, np.abs(self.h12) ** 2

    def si_powers(self, gamma_e: float):
        """Effective SI power gains seen at node 2 and node 1.

        The SI signal part is attenuated by beta, the transmitter's EVM part
        is not, so node 2 sees ``gamma_e |h22 beta2|^2 + |h22|^2`` per unit of
        node 2's own energy (in the gamma-scaled denominator of the SINR).
        """
        q2 = gamma_e * np.abs(self.h22 * self.beta2) ** 2 + np.abs(self.h22) ** 2
        q1 = gamma_e * np.abs(self.h11 * self.beta1) ** 2 + np.abs(self.h11) ** 2
        return q2, q1


def _check_k(params: SystemParams, ch: ChannelRealization):
    if ch.num_subcarriers != params.num_subcarriers:
        raise ValueError(
            f"channel has {ch.num_subcarriers} sub-carriers but params say K={params.num_subcarriers}"
        )


@dataclass(frozen=True)
class HdUpaAllocation:
    t1: float
    t2: float
    eps1: float
    eps2: float

    def total_energy(self, k: int) -> float:
        return k * (self.eps1 + self.eps2)

    def violations(self, params: SystemParams, tol_time: float = 1e-9, tol_energy=None) -> list[str]:
        tol_energy = 1e-6 * params.total_energy if tol_energy is None else tol_energy
        out = []
        if abs(self.t1 + self.t2 - 1.0) > tol_time:
            out.append(f"t1 + t2 = {self.t1 + self.t2!r}")
        if min(self.t1, self.t2, self.eps1, self.eps2) < 0:
            out.append("negative time or energy")
        if abs(self.total_energy(params.num_subcarriers) - params.total_energy) > tol_energy:
            out.append("energy budget not met")
        return out


@dataclass(frozen=True)
class HdNupaAllocation:
    t1: float
    t2: float
    eps1: np.ndarray
    eps2: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "eps1", _as_vector(self.eps1, np.float64))
        object.__setattr__(self, "eps2", _as_vector(self.eps2, np.float64))

    def total_energy(self, k: int | None = None) -> float:
        return float(np.sum(self.eps1) + np.sum(self.eps2))

    def violations(self, params: SystemParams, tol_time: float = 1e-9, tol_energy=None) -> list[str]:
        tol_energy = 1e-6 * params.total_energy if tol_energy is None else tol_energy
        out = []
        if abs(self.t1 + self.t2 - 1.0) > tol_time:
            out.append(f"t1 + t2 = {self.t1 + self.t2!r}")
        if min(self.t1, self.t2) < 0 or np.any(self.eps1 < 0) or np.any(self.eps2 < 0):
            out.append("negative time or energy")
        if self.eps1.size != params.num_subcarriers or self.eps2.size != params.num_subcarriers:
            out.append("energy vectors have wrong length")
        if abs(self.total_energy() - params.total_energy) > tol_energy:
            out.append("energy budget not met")
        return out


@dataclass(frozen=True)
class FdUpaAllocation:
    eps1: float
    eps2: float

    t1 = 1.0
    t2 = 1.0

    def total_energy(self, k: int) -> float:
        return k * (self.eps1 + self.eps2)

    def violations(self, params: SystemParams, tol_time: float = 1e-9, tol_energy=None) -> list[str]:
        tol_energy = 1e-6 * params.total_energy if tol_energy is None else tol_energy
        out = []
        if min(self.eps1, self.eps2) < 0:
            out.append("negative energy")
        if abs(self.total_energy(params.num_subcarriers) - params.total_energy) > tol_energy:
            out.append("energy budget not met")
        return out


@dataclass(frozen=True)
class FdNupaAllocation:
    eps1: np.ndarray
    eps2: np.ndarray

    t1 = 1.0
    t2 = 1.0

    def __post_init__(self):
        object.__setattr__(self, "eps1", _as_vector(self.eps1, np.float64))
        object.__setattr__(self, "eps2", _as_vector(self.eps2, np.float64))

    def total_energy(self, k: int | None = None) -> float:
        return float(np.sum(self.eps1) + np.sum(self.eps2))

    def violations(self, params: SystemParams, tol_time: float = 1e-9, tol_energy=None) -> list[str]:
        tol_energy = 1e-6 * params.total_energy if tol_energy is None else tol_energy
        out = []
        if np.any(self.eps1 < 0) or np.any(self.eps2 < 0):
            out.append("negative energy")
        if self.eps1.size != params.num_subcarriers or self.eps2.size != params.num_subcarriers:
            out.append("energy vectors have wrong length")
        if abs(self.total_energy() - params.total_energy) > tol_energy:
            out.append("energy budget not met")
        return out


@dataclass(frozen=True)
class RateBreakdown:
    r1: float
    r2: float
    sum: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "r1", float(self.r1))
        object.__setattr__(self, "r2", float(self.r2))
        object.__setattr__(self, "sum", self.r1 + self.r2)


@dataclass(frozen=True)
class AbcCoefficients:
    a_k1: np.ndarray
    b_k1: np.ndarray
    c_k1: np.ndarray
    a_k2: np.ndarray
    b_k2: np.ndarray
    c_k2: np.ndarray


def abc_coefficients(params: SystemParams, ch: ChannelRealization) -> AbcCoefficients:
    """Shorthand coefficients of the HD-UPA rate expression.

    Raises ``ValueError`` when any transmission gain is exactly zero, since
    the coefficient form assumes ``A > 0``.
    """
    g21, g12 = ch.gains()
    if np.any(g21 == 0) or np.any(g12 == 0):
        raise ValueError("zero transmission-channel gain makes A_k = 0")
    return _abc(params, ch)


def _abc(params: SystemParams, ch: ChannelRealization) -> AbcCoefficients:
    _check_k(params, ch)
    g21, g12 = ch.gains()
    g = params.gamma_e
    k = ch.num_subcarriers
    return AbcCoefficients(
        a_k1=g * g21,
        b_k1=g21.copy(),
        c_k1=np.full(k, (g + 1) * params.n2),
        a_k2=g * g12,
        b_k2=g12.copy(),
        c_k2=np.full(k, (g + 1) * params.n1),
    )


# --------------------------------------------------------------------------
# rates


def _hd_link_rate(gain, eps, t, gamma_e, noise, k):
    """(t/K) * sum log2(1 + gamma b p / (b p + (gamma+1) N)) with p = eps/t."""
    eps = np.broadcast_to(np.asarray(eps, dtype=float), gain.shape)
    if t < 0:
        raise ValueError("negative time share")
    if t == 0:
        if np.any(eps > 0):
            raise DegenerateAllocationError("t = 0 with positive energy has undefined power")
        return 0.0
    # multiplied through by t so a vanishing time share cannot overflow eps/t
    s = gain * eps
    sinr = gamma_e * s / (s + (gamma_e + 1) * noise * t)
    return t / k * float(np.sum(np.log1p(sinr))) / LN2


def hd_upa_rates(params: SystemParams, ch: ChannelRealization, alloc: HdUpaAllocation) -> RateBreakdown:
    _check_k(params, ch)
    g21, g12 = ch.gains()
    k = params.num_subcarriers
    r1 = _hd_link_rate(g21, alloc.eps1, alloc.t1, params.gamma_e, params.n2, k)
    r2 = _hd_link_rate(g12, alloc.eps2, alloc.t2, params.gamma_e, params.n1, k)
    return RateBreakdown(r1, r2)


def hd_nupa_rates(params: SystemParams, ch: ChannelRealization, alloc: HdNupaAllocation) -> RateBreakdown:
    _check_k(params, ch)
    g21, g12 = ch.gains()
    k = params.num_subcarriers
    r1 = _hd_link_rate(g21, alloc.eps1, alloc.t1, params.gamma_e, params.n2, k)
    r2 = _hd_link_rate(g12, alloc.eps2, alloc.t2, params.gamma_e, params.n1, k)
    return RateBreakdown(r1, r2)


def _fd_rates(params, ch, eps1, eps2):
    _check_k(params, ch)
    g = params.gamma_e
    k = params.num_subcarriers
    g21, g12 = ch.gains()
    q2, q1 = ch.si_powers(g)
    e1 = np.broadcast_to(np.asarray(eps1, dtype=float), g21.shape)
    e2 = np.broadcast_to(np.asarray(eps2, dtype=float), g21.shape)
    sig1 = e1 * g21
    sig2 = e2 * g12
    sinr1 = g * sig1 / (sig1 + e2 * q2 + (g + 1) * params.n2)
    sinr2 = g * sig2 / (sig2 + e1 * q1 + (g + 1) * params.n1)
    r1 = float(np.sum(np.log1p(sinr1))) / (k * LN2)
    r2 = float(np.sum(np.log1p(sinr2))) / (k * LN2)
    return RateBreakdown(r1, r2)


def fd_upa_rates(params: SystemParams, ch: ChannelRealization, alloc: FdUpaAllocation) -> RateBreakdown:
    return _fd_rates(params, ch, alloc.eps1, alloc.eps2)


def fd_nupa_rates(params: SystemParams, ch: ChannelRealization, alloc: FdNupaAllocation) -> RateBreakdown:
    return _fd_rates(params, ch, alloc.eps1, alloc.eps2)


# --------------------------------------------------------------------------
# derivatives


class HdUpaGradient(NamedTuple):
    d_eps1: float
    d_eps2: float
    d_t1: float
    d_t2: float


class HdNupaGradient(NamedTuple):
    d_eps1: np.ndarray
    d_eps2: np.ndarray
    d_t1: float
    d_t2: float


def _marginal_sum(a, b, c, p):
    # sum_k A C / [((A+B) p + C)(B p + C)]
    return float(np.sum(a * c / (((a + b) * p + c) * (b * p + c))))


def _log_sum(a, b, c, p):
    # sum_k log2(1 + A p / (B p + C))
    return float(np.sum(np.log1p(a * p / (b * p + c)))) / LN2


def hd_upa_gradients(params: SystemParams, ch: ChannelRealization, alloc: HdUpaAllocation) -> HdUpaGradient:
    """Partial derivatives of the HD-UPA sum rate, with t1 and t2 treated as independent."""
    t1, t2, e1, e2 = alloc.t1, alloc.t2, alloc.eps1, alloc.eps2
    if min(t1, t2, e1, e2) <= 0:
        raise ZeroDivisionError("HD-UPA gradients need t1, t2, eps1, eps2 > 0")
    c = abc_coefficients(params, ch)
    k = params.num_subcarriers
    p1, p2 = e1 / t1, e2 / t2
    s1 = _marginal_sum(c.a_k1, c.b_k1, c.c_k1, p1)
    s2 = _marginal_sum(c.a_k2, c.b_k2, c.c_k2, p2)
    d_e1 = s1 / (k * LN2)
    d_e2 = s2 / (k * LN2)
    d_t1 = _log_sum(c.a_k1, c.b_k1, c.c_k1, p1) / k - p1 * s1 / (k * LN2)
    d_t2 = _log_sum(c.a_k2, c.b_k2, c.c_k2, p2) / k - p2 * s2 / (k * LN2)
    return HdUpaGradient(d_e1, d_e2, d_t1, d_t2)


def _hd_energy_derivative(gain, eps, t, gamma_e, noise, k):
    # t^2 gamma |h|^2 N / (K ln2 (x + (gamma+1) N t)(x + N t)),  x = eps |h|^2
    x = eps * gain
    return t * t * gamma_e * gain * noise / (k * LN2 * (x + (gamma_e + 1) * noise * t) * (x + noise * t))


def _hd_time_derivative(gain, eps, t, gamma_e, noise, k):
    x = eps * gain
    u = x + noise * t
    v = x + (gamma_e + 1) * noise * t
    logs = np.sum(np.log((gamma_e + 1) * u / v)) / LN2
    tail = t / LN2 * np.sum(x * gamma_e * noise / (u * v))
    return float(logs - tail) / k


def hd_nupa_gradients(params: SystemParams, ch: ChannelRealization, alloc: HdNupaAllocation) -> HdNupaGradient:
    """Per sub-carrier energy derivatives and the two time derivatives of the HD-NUPA rate.

    The energy derivative keeps the full ``t**2 / ln 2`` factor, which is
    what differentiating the rate actually yields; it stays finite at zero
    energy where it equals ``gamma |h|^2 / (K ln2 (gamma+1) N)``.
    """
    _check_k(params, ch)
    t1, t2 = alloc.t1, alloc.t2
    if not (0 < t1 < 1 and 0 < t2 < 1):
        raise ValueError("HD-NUPA gradients need interior time shares")
    g21, g12 = ch.gains()
    g, k = params.gamma_e, params.num_subcarriers
    return HdNupaGradient(
        _hd_energy_derivative(g21, alloc.eps1, t1, g, params.n2, k),
        _hd_energy_derivative(g12, alloc.eps2, t2, g, params.n1, k),
        _hd_time_derivative(g21, alloc.eps1, t1, g, params.n2, k),
        _hd_time_derivative(g12, alloc.eps2, t2, g, params.n1, k),
    )


def fd_subcarrier_terms(params: SystemParams, ch: ChannelRealization):
    """Per sub-carrier coefficients ``(a1, q2, c1, a2, q1, c2)`` of the FD rate.

    Forward SINR is ``gamma a1 e1 / (a1 e1 + q2 e2 + c1)``; backward mirrors it.
    """
    _check_k(params, ch)
    g21, g12 = ch.gains()
    q2, q1 = ch.si_powers(params.gamma_e)
    g = params.gamma_e
    k = params.num_subcarriers
    return (g21, q2, np.full(k, (g + 1) * params.n2), g12, q1, np.full(k, (g + 1) * params.n1))


def fd_pair_derivatives(gamma_e, k, terms, e1, e2, hessian=False):
    """Gradient (and optionally Hessian) of the per sub-carrier FD sum rate.

    Each link's rate is ``(ln U - ln D)/(K ln2)`` with ``D`` the SINR
    denominator and ``U = D + gamma a e``, both affine in the energies, so
    all derivatives are ratios of the affine coefficients.
    """
    a1, q2, c1, a2, q1, c2 = terms
    g = gamma_e
    d1 = a1 * e1 + q2 * e2 + c1
    u1 = d1 + g * a1 * e1
    d2 = a2 * e2 + q1 * e1 + c2
    u2 = d2 + g * a2 * e2
    # coefficients of e1, e2 in U1, D1, U2, D2
    u1x, u1y = (g + 1) * a1, q2
    d1x, d1y = a1, q2
    u2x, u2y = q1, (g + 1) * a2
    d2x, d2y = q1, a2
    s = 1.0 / (k * LN2)
    g1 = s * (u1x / u1 - d1x / d1 + u2x / u2 - d2x / d2)
    g2 = s * (u1y / u1 - d1y / d1 + u2y / u2 - d2y / d2)
    if not hessian:
        return g1, g2
    h11 = s * (-(u1x / u1) ** 2 + (d1x / d1) ** 2 - (u2x / u2) ** 2 + (d2x / d2) ** 2)
    h22 = s * (-(u1y / u1) ** 2 + (d1y / d1) ** 2 - (u2y / u2) ** 2 + (d2y / d2) ** 2)
    h12 = s * (
        -u1x * u1y / u1**2 + d1x * d1y / d1**2 - u2x * u2y / u2**2 + d2x * d2y / d2**2
    )
    return g1, g2, h11, h12, h22


def fd_pair_rate(gamma_e, k, terms, e1, e2):
    """Per sub-carrier contribution to the FD sum rate (already divided by K)."""
    a1, q2, c1, a2, q1, c2 = terms
    d1 = a1 * e1 + q2 * e2 + c1
    d2 = a2 * e2 + q1 * e1 + c2
    return (np.log1p(gamma_e * a1 * e1 / d1) + np.log1p(gamma_e * a2 * e2 / d2)) / (k * LN2)


def fd_nupa_gradients(params: SystemParams, ch: ChannelRealization, alloc: FdNupaAllocation):
    """``(dr/d eps1[k], dr/d eps2[k])`` of the FD sum rate."""
    terms = fd_subcarrier_terms(params, ch)
    return fd_pair_derivatives(params.gamma_e, params.num_subcarriers, terms, alloc.eps1, alloc.eps2)


# --------------------------------------------------------------------------
# HD-UPA stationarity system in (p1, p2)


def residual_system_hd_upa(params: SystemParams, ch: ChannelRealization, p1: float, p2: float):
    """Stationarity residuals ``(f1, f2)`` of the HD-UPA problem.

    ``f1`` equates the marginal rates of the two links (times K ln2).
    ``f2`` is K times the difference of the two time derivatives, simplified
    with ``f1 = 0``; that simplification leaves ``(p1 - p2)`` multiplying the
    marginal-rate sum.
    """
    return hd_upa_residuals(abc_coefficients(params, ch), p1, p2)


def hd_upa_residuals(c: AbcCoefficients, p1: float, p2: float):
    """``residual_system_hd_upa`` on precomputed coefficients (zero gains allowed)."""
    s1 = _marginal_sum(c.a_k1, c.b_k1, c.c_k1, p1)
    s2 = _marginal_sum(c.a_k2, c.b_k2, c.c_k2, p2)
    f1 = s1 - s2
    f2 = (
        _log_sum(c.a_k1, c.b_k1, c.c_k1, p1)
        - _log_sum(c.a_k2, c.b_k2, c.c_k2, p2)
        - (p1 - p2) * s1 / LN2
    )
    return f1, f2


def _marginal_sum_derivative(a, b, c, p):
    u = (a + b) * p + c
    v = b * p + c
    return -float(np.sum(a * c * ((a + b) * v + b * u) / (u * v) ** 2))


def residual_jacobian_hd_upa(params: SystemParams, ch: ChannelRealization, p1: float, p2: float) -> np.ndarray:
    """Analytic Jacobian of ``residual_system_hd_upa`` w.r.t. ``(p1, p2)``."""
    return hd_upa_residual_jacobian(abc_coefficients(params, ch), p1, p2)


def hd_upa_residual_jacobian(c: AbcCoefficients, p1: float, p2: float) -> np.ndarray:
    s1 = _marginal_sum(c.a_k1, c.b_k1, c.c_k1, p1)
    s2 = _marginal_sum(c.a_k2, c.b_k2, c.c_k2, p2)
    ds1 = _marginal_sum_derivative(c.a_k1, c.b_k1, c.c_k1, p1)
    ds2 = _marginal_sum_derivative(c.a_k2, c.b_k2, c.c_k2, p2)
    return np.array(
        [
            [ds1, -ds2],
            [-(p1 - p2) * ds1 / LN2, (s1 - s2) / LN2],
        ]
    )
