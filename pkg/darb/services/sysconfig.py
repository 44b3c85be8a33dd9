"""Power consumption and energy-efficiency arithmetic for RIS and multi-antenna transmitters.

All dB-scaled inputs are converted to watts before they reach these functions;
everything here is linear-scale arithmetic.
"""
from __future__ import annotations

import math
from typing import TYPE_CHECKING

from darb.exceptions import DomainError

if TYPE_CHECKING:
    from darb.models.schemas import PowerModel, SystemConfig


# ── Unit conversions ──

def dbm_to_watts(x: float) -> float:
    """Convert dBm to watts: 30 dBm is 1 W."""
    if not math.isfinite(x):
        raise DomainError(f"dBm value must be finite, got {x}")
    return 10.0 ** ((x - 30.0) / 10.0)


def dbw_to_watts(x: float) -> float:
    if not math.isfinite(x):
        raise DomainError(f"dBW value must be finite, got {x}")
    return 10.0 ** (x / 10.0)


def watts_to_dbw(p: float) -> float:
    if p <= 0:
        raise DomainError(f"power must be positive to express in dBW, got {p}")
    return 10.0 * math.log10(p)


def watts_to_dbm(p: float) -> float:
    return watts_to_dbw(p) + 30.0


# ── Defaults ──

def table_one_power_model() -> PowerModel:
    """Hardware constants of the published simulation setup (all in watts)."""
    from darb.models.schemas import PowerModel
    return PowerModel()


def default_system_config(**overrides) -> SystemConfig:
    """Published scenario: 180 kHz, -80 dBm noise, 60 m square, Q = 4, alpha = 0.1."""
    from darb.models.schemas import SystemConfig
    return SystemConfig(**overrides)


# ── Power models ──

def ris_power(pm: PowerModel, n_elements: int) -> float:
    """FPGA controller plus one PIN diode per RIS element."""
    if n_elements < 0:
        raise DomainError(f"n_elements must be >= 0, got {n_elements}")
    return pm.p_fpga + n_elements * pm.p_pin


def circuit_power_ris(pm: PowerModel, l_beams: int) -> float:
    """One active antenna chain plus one receive chain per beam."""
    if l_beams < 1:
        raise DomainError(f"l_beams must be >= 1, got {l_beams}")
    return pm.p_a + l_beams * pm.p_u


def ris_total_power(pm: PowerModel, l_beams: int, p_t: float, k_users: int) -> float:
    """Total RIS-assisted consumption for explicit (L, P_T, K); N = L^2 elements."""
    return (p_t / pm.eta_t
            + ris_power(pm, l_beams * l_beams)
            + circuit_power_ris(pm, l_beams)
            + pm.p_sr
            + k_users * pm.p_uk)


def ma_total_power(pm: PowerModel, m_antennas: int, p_t: float, k_users: int) -> float:
    """Total consumption of an M-antenna transmitter with M full RF chains."""
    if m_antennas < 1:
        raise DomainError(f"m_antennas must be >= 1, got {m_antennas}")
    return (p_t / pm.eta_t
            + m_antennas * (pm.p_a + pm.p_u)
            + pm.p_sa
            + k_users * pm.p_uk)


def total_power_ris(pm: PowerModel, cfg: SystemConfig) -> float:
    return ris_total_power(pm, cfg.l_beams, cfg.p_t, cfg.k_users)


def total_power_ma(pm: PowerModel, cfg: SystemConfig, m_antennas: int) -> float:
    return ma_total_power(pm, m_antennas, cfg.p_t, cfg.k_users)


def power_breakdown_ris(pm: PowerModel, cfg: SystemConfig) -> dict:
    """Each additive term of the RIS-assisted total, for reporting."""
    return {
        "amplifier_w": cfg.p_t / pm.eta_t,
        "ris_w": ris_power(pm, cfg.n_elements),
        "circuit_w": circuit_power_ris(pm, cfg.l_beams),
        "static_w": pm.p_sr,
        "users_w": cfg.k_users * pm.p_uk,
    }


def power_breakdown_ma(pm: PowerModel, cfg: SystemConfig, m_antennas: int) -> dict:
    return {
        "amplifier_w": cfg.p_t / pm.eta_t,
        "circuit_w": m_antennas * (pm.p_a + pm.p_u),
        "static_w": pm.p_sa,
        "users_w": cfg.k_users * pm.p_uk,
    }


# ── Energy efficiency ──

def energy_efficiency(rate_bits_per_s: float, power: float) -> float:
    """Delivered rate per consumed watt (bits/joule when the rate is in bits/s)."""
    if power <= 0:
        raise DomainError(f"power must be positive, got {power}")
    return rate_bits_per_s / power


def rate_to_ee(spectral_rate: float, power: float, bandwidth: float, spectral: bool = False) -> float:
    """EE from a spectral rate: bits/joule by default, bits/s/Hz per watt if `spectral`."""
    rate = spectral_rate if spectral else spectral_rate * bandwidth
    return energy_efficiency(rate, power)
