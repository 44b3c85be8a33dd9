"""Closed-form SINR statistics, sum-rate integrals and the asymptotic EE objective.

With h ~ CN(0, beta I) both chi-square terms of the SINR scale by beta, so
every law here depends on the effective SNR rho = beta * P_T / sigma^2.
Rates are in bits (log2). The inner "log K" of the multiuser-diversity
term is natural by default; `log_base="binary"` is available for sensitivity runs.
"""
import logging
import math

import numpy as np
from scipy import integrate, optimize

from darb.exceptions import DomainError, QuadratureError
from darb.models.schemas import LinkStats, PowerModel
from darb.services.sysconfig import ris_total_power

logger = logging.getLogger(__name__)

QUAD_RTOL = 1e-8
QUAD_ATOL = 1e-12
QUAD_FAIL_RTOL = 1e-6  # error estimates above this are treated as non-convergence


def _check_gamma(gamma):
    g = np.asarray(gamma, dtype=float)
    if np.any(g < 0) or np.any(np.isnan(g)):
        raise DomainError("gamma must be >= 0")
    return g


def _as_output(values):
    return float(values) if np.ndim(values) == 0 else values


def _tail(g: np.ndarray, stats: LinkStats) -> np.ndarray:
    """1 - F(gamma) = exp(-L gamma / rho) / (1 + gamma)^(L-1)."""
    l = stats.l_beams
    return np.exp(-l * g / stats.snr_eff - (l - 1) * np.log1p(g))


def sinr_cdf(gamma, stats: LinkStats):
    """CDF of a single user's SINR on one beam."""
    g = _check_gamma(gamma)
    return _as_output(-np.expm1(-stats.l_beams * g / stats.snr_eff - (stats.l_beams - 1) * np.log1p(g)))


def sinr_pdf(gamma, stats: LinkStats):
    """Density of a single user's SINR: dF/dgamma."""
    g = _check_gamma(gamma)
    l, rho = stats.l_beams, stats.snr_eff
    return _as_output(_tail(g, stats) / (1.0 + g) * ((l / rho) * (1.0 + g) + l - 1))


def selected_sinr_cdf(gamma, stats: LinkStats):
    """F(gamma)^K: CDF of the best of K i.i.d. users on one beam."""
    return _as_output(np.asarray(sinr_cdf(gamma, stats)) ** stats.k_users)


def selected_sinr_pdf(gamma, stats: LinkStats):
    """K f(gamma) F(gamma)^(K-1)."""
    g = _check_gamma(gamma)
    f = np.asarray(sinr_pdf(g, stats))
    big_f = np.asarray(sinr_cdf(g, stats))
    return _as_output(stats.k_users * f * big_f ** (stats.k_users - 1))


def selected_sinr_quantile(q: float, stats: LinkStats) -> float:
    """gamma with F(gamma)^K = q."""
    if not 0.0 < q < 1.0:
        raise DomainError(f"quantile level must lie in (0, 1), got {q}")
    target = q ** (1.0 / stats.k_users)
    hi = 1.0
    while sinr_cdf(hi, stats) < target:
        hi *= 2.0
    return optimize.brentq(lambda g: sinr_cdf(g, stats) - target, 0.0, hi, xtol=1e-12)


def rate_integral_result(stats: LinkStats, rtol: float = QUAD_RTOL, atol: float = QUAD_ATOL) -> tuple:
    """L * integral of log2(1 + gamma) f_{k*}(gamma) over [0, inf).

    Mapped onto [0, 1) with gamma = u / (1 - u); the selected-SINR quantiles
    are passed as breakpoints so the peak is never missed for large K.
    Returns (value, error_estimate, evaluations).
    """
    def integrand(u: float) -> float:
        if u >= 1.0:
            return 0.0
        gamma = u / (1.0 - u)
        # log2(1 + gamma) = -log2(1 - u)
        return -math.log2(1.0 - u) * float(selected_sinr_pdf(gamma, stats)) / (1.0 - u) ** 2

    breakpoints = sorted({
        g / (1.0 + g)
        for g in (selected_sinr_quantile(q, stats) for q in (0.01, 0.5, 0.99))
        if 0.0 < g / (1.0 + g) < 1.0
    })
    out = integrate.quad(integrand, 0.0, 1.0, epsrel=rtol, epsabs=atol, limit=500,
                         points=breakpoints or None, full_output=1)
    value, abserr, info = out[0], out[1], out[2]
    params = {"l_beams": stats.l_beams, "k_users": stats.k_users, "snr_eff": stats.snr_eff}
    if not math.isfinite(value) or abserr > QUAD_FAIL_RTOL * max(1.0, abs(value)):
        raise QuadratureError("sum-rate quadrature did not converge", value, abserr, params)
    if len(out) > 3:
        logger.warning("Quadrature flagged (%s); error estimate %.3g accepted", out[3].split(".")[0], abserr)
    return stats.l_beams * value, stats.l_beams * abserr, info["neval"]


def darb_sum_rate_integral(stats: LinkStats, rtol: float = QUAD_RTOL) -> float:
    """Finite-K sum rate of random beamforming with max-SINR scheduling (bits/s/Hz)."""
    return rate_integral_result(stats, rtol=rtol)[0]


def _inner_log(k_users, log_base: str):
    if log_base == "natural":
        return np.log(k_users)
    if log_base == "binary":
        return np.log2(k_users)
    raise DomainError(f"unknown log base '{log_base}' (expected natural|binary)")


def asymptotic_sum_rate(l_beams, p_t, k_users: int, beta: float, sigma2: float, log_base: str = "natural"):
    """L log2(beta log K) + L log2(P_T / (L sigma^2)); may be negative. Accepts arrays."""
    if k_users <= 1:
        raise DomainError(f"asymptotic rate needs K > 1, got {k_users}")
    if beta <= 0 or sigma2 <= 0:
        raise DomainError(f"beta and sigma2 must be positive, got {beta}, {sigma2}")
    l = np.asarray(l_beams, dtype=float)
    p = np.asarray(p_t, dtype=float)
    return _as_output(l * np.log2(beta * _inner_log(k_users, log_base)) + l * np.log2(p / (l * sigma2)))


def darb_sum_rate_asymptotic(stats: LinkStats, beta: float = 1.0, log_base: str = "natural") -> float:
    """Large-K sum rate; P_T / sigma^2 is recovered as snr_eff / beta (so beta cancels)."""
    value = asymptotic_sum_rate(stats.l_beams, stats.snr_eff / beta, stats.k_users, beta, 1.0, log_base)
    if value < 0:
        logger.warning("Asymptotic rate is negative (%.4g): beta*log K too small for the large-K regime", value)
    return value


def tfs_sum_rate(stats: LinkStats, alpha: float) -> float:
    """[1 - F(alpha)^K] R_Darb: a beam idles when no user clears the threshold."""
    if alpha < 0:
        raise DomainError(f"alpha must be >= 0, got {alpha}")
    return (1.0 - float(sinr_cdf(alpha, stats)) ** stats.k_users) * darb_sum_rate_integral(stats)


def ee_darb_parts(l_beams: int, p_t: float, pm: PowerModel, k_users: int, beta: float, sigma2: float,
                  log_base: str = "natural", warn: bool = True) -> tuple:
    """(rate bits/s/Hz clamped at 0, total power W, clamped flag) of the EE objective."""
    if p_t <= 0 or l_beams < 1:
        raise DomainError(f"need p_t > 0 and l_beams >= 1, got {p_t}, {l_beams}")
    power = ris_total_power(pm, l_beams, p_t, k_users)
    if k_users <= 1:
        rate = -math.inf
    else:
        rate = float(asymptotic_sum_rate(l_beams, p_t, k_users, beta, sigma2, log_base))
    clamped = rate < 0
    if clamped:
        if warn:
            logger.warning("Asymptotic rate %.4g at L=%d, P_T=%.4g W clamped to 0", rate, l_beams, p_t)
        rate = 0.0
    return rate, power, clamped


def ee_darb(l_beams: int, p_t: float, pm: PowerModel, k_users: int, beta: float, sigma2: float,
            bandwidth: float = 180e3, spectral: bool = False, log_base: str = "natural") -> float:
    """Asymptotic-rate energy efficiency: bits/joule, or bits/s/Hz per watt if `spectral`."""
    rate, power, _ = ee_darb_parts(l_beams, p_t, pm, k_users, beta, sigma2, log_base)
    return (rate if spectral else rate * bandwidth) / power
