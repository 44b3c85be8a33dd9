"""Joint selection of the RIS row count L and transmit power P_T.

The objective is the asymptotic-rate energy efficiency

    EE(L, P) = s * [L log2(beta log K) + L log2(P / (L sigma^2))]
                 / [P / eta + L^2 P_PIN + L P_U + P_1]

with s = bandwidth (bits/joule) or 1 (spectral EE). For fixed P it is a
ratio of a concave to a convex positive function of L, for fixed L a ratio
of a concave to an affine function of P; both are pseudo-concave, so each
1-D problem is solved by bisection on the sign of the derivative.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from darb.exceptions import DomainError, InfeasibleSubproblemError
from darb import config
from darb.models.schemas import (
    IterationRecord, OptimizationResult, OptimizerConfig, PowerModel, Seed, SystemConfig,
)
from darb.services.analytic import asymptotic_sum_rate, ee_darb
from darb.services.beamsim import monte_carlo_sum_rate
from darb.services.channel import uniform_layout
from darb.services.sysconfig import ris_total_power

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)
ASCENT_SLACK = 1e-12


@dataclass(frozen=True)
class EEContext:
    """Everything the EE objective needs besides (L, P_T)."""
    pm: PowerModel
    k_users: int
    beta: float
    sigma2: float
    bandwidth: float = 180e3
    spectral: bool = False
    c_variant: str = "corrected"
    log_base: str = "natural"

    def __post_init__(self):
        if self.k_users < 2:
            raise DomainError(f"EE objective needs K >= 2, got {self.k_users}")
        if self.beta <= 0 or self.sigma2 <= 0:
            raise DomainError("beta and sigma2 must be positive")
        if self.c_variant not in ("corrected", "paper"):
            raise DomainError(f"unknown c variant '{self.c_variant}'")

    @property
    def scale(self) -> float:
        return 1.0 if self.spectral else self.bandwidth

    @property
    def diversity(self) -> float:
        """log2(beta log K), the per-beam multiuser-diversity term."""
        inner = math.log(self.k_users) if self.log_base == "natural" else math.log2(self.k_users)
        return math.log2(self.beta * inner)

    @property
    def static_power(self) -> float:
        """P_1 = P_FPGA + P_A + P_SR + K P_U,k."""
        pm = self.pm
        return pm.p_fpga + pm.p_a + pm.p_sr + self.k_users * pm.p_uk

    def ee(self, l_beams: int, p_t: float) -> float:
        return ee_darb(l_beams, p_t, self.pm, self.k_users, self.beta, self.sigma2,
                       bandwidth=self.bandwidth, spectral=self.spectral, log_base=self.log_base)

    def ee_grid(self, l_beams: int, p_t: np.ndarray) -> np.ndarray:
        """Vectorised EE over powers, rate clamped at 0, no warnings."""
        pm = self.pm
        rate = np.maximum(asymptotic_sum_rate(l_beams, p_t, self.k_users, self.beta, self.sigma2, self.log_base), 0.0)
        power = p_t / pm.eta_t + l_beams * l_beams * pm.p_pin + l_beams * pm.p_u + self.static_power
        return self.scale * rate / power

    def p4_constant(self, l_beams: int) -> float:
        """c of the power subproblem."""
        pm = self.pm
        if self.c_variant == "paper":
            # multi-antenna circuit and static terms with M = L
            return l_beams * (pm.p_a + pm.p_u) + pm.p_sa + self.k_users * pm.p_uk
        return l_beams * l_beams * pm.p_pin + l_beams * pm.p_u + self.static_power


@dataclass(frozen=True)
class ElementSolution:
    l_continuous: float
    l_integer: int
    ee: float


@dataclass(frozen=True)
class PowerSolution:
    p_t: float
    objective: float
    p_lo: float


def central_difference(fn, x: float, step: float | None = None) -> float:
    h = step if step is not None else 1e-6 * max(1.0, abs(x))
    return (fn(x + h) - fn(x - h)) / (2.0 * h)


def _bisect_sign(deriv, lo: float, hi: float, rtol: float, log_space: bool = False) -> float:
    """Root of a decreasing derivative sign on [lo, hi] (deriv(lo) > 0 > deriv(hi))."""
    a, b = (math.log(lo), math.log(hi)) if log_space else (lo, hi)
    transform = math.exp if log_space else (lambda v: v)
    for _ in range(400):
        mid = 0.5 * (a + b)
        if deriv(transform(mid)) > 0:
            a = mid
        else:
            b = mid
        if abs(transform(b) - transform(a)) <= rtol * abs(transform(b)):
            break
    return transform(0.5 * (a + b))


def _checked(value: float, fallback) -> float:
    return value if math.isfinite(value) else fallback()


# ── P3: number of RIS rows at fixed power ──

def element_objective(l: float, p_t: float, ctx: EEContext) -> float:
    """f(l) with the rate left unclamped (the continuous P3 objective)."""
    numerator = l * (ctx.diversity + math.log2(p_t / ctx.sigma2) - math.log2(l))
    denominator = l * l * ctx.pm.p_pin + l * ctx.pm.p_u + p_t / ctx.pm.eta_t + ctx.static_power
    return ctx.scale * numerator / denominator


def element_derivative(l: float, p_t: float, ctx: EEContext) -> float:
    """df/dl by the quotient rule."""
    pm = ctx.pm
    c = ctx.diversity + math.log2(p_t / ctx.sigma2)
    numerator = l * (c - math.log2(l))
    d_numerator = c - math.log2(l) - 1.0 / LN2
    denominator = l * l * pm.p_pin + l * pm.p_u + p_t / pm.eta_t + ctx.static_power
    d_denominator = 2.0 * l * pm.p_pin + pm.p_u
    value = ctx.scale * (d_numerator * denominator - numerator * d_denominator) / denominator ** 2
    return _checked(value, lambda: central_difference(lambda x: element_objective(x, p_t, ctx), l))


def check_unimodal(ctx: EEContext, p_t: float, l_max: int) -> bool:
    """True if f(l+1) - f(l) changes sign at most once over 1..l_max."""
    values = [element_objective(l, p_t, ctx) for l in range(1, l_max + 1)]
    signs = [np.sign(b - a) for a, b in zip(values, values[1:]) if b != a]
    changes = sum(1 for s, t in zip(signs, signs[1:]) if s != t)
    if changes > 1:
        logger.warning("EE(l) at P_T=%.4g W is not unimodal on 1..%d (%d sign changes)", p_t, l_max, changes)
    return changes <= 1


def solve_p3_elements(p_t: float, ctx: EEContext, l_max: int, rtol: float = 1e-10) -> ElementSolution:
    """Best row count for fixed P_T: stationary point of f(l), then the better of floor/ceil."""
    if p_t <= 0:
        raise DomainError(f"p_t must be positive, got {p_t}")
    if l_max < 1:
        raise DomainError(f"l_max must be >= 1, got {l_max}")

    c = ctx.diversity + math.log2(p_t / ctx.sigma2)
    if c <= 0:
        raise InfeasibleSubproblemError(
            f"no positive-rate row count at P_T={p_t:.4g} W (per-beam rate {c:.3g} at L=1)")

    # the rate l (c - log2 l) is positive only for l < 2^c
    l_hi = min(float(l_max), 2.0 ** c)
    check_unimodal(ctx, p_t, min(l_max, max(1, int(l_hi))))

    deriv = lambda l: element_derivative(l, p_t, ctx)  # noqa: E731
    if l_hi <= 1.0 or deriv(1.0) <= 0:
        l_star = 1.0
    elif deriv(l_hi) >= 0:
        l_star = l_hi
    else:
        l_star = _bisect_sign(deriv, 1.0, l_hi, rtol)

    candidates = sorted({min(max(math.floor(l_star), 1), l_max), min(max(math.ceil(l_star), 1), l_max)})
    scored = [(ctx.ee(l, p_t), -l) for l in candidates]
    best_ee, neg_l = max(scored)  # ties -> smaller L
    return ElementSolution(l_continuous=l_star, l_integer=-neg_l, ee=best_ee)


# ── P4: transmit power at fixed row count ──

def power_objective(p: float, l_beams: int, ctx: EEContext) -> float:
    """(L log2(p / (L sigma^2)) + b) / (p / eta + c) with the selected c variant."""
    b = l_beams * ctx.diversity
    numerator = l_beams * math.log2(p / (l_beams * ctx.sigma2)) + b
    return ctx.scale * numerator / (p / ctx.pm.eta_t + ctx.p4_constant(l_beams))


def power_derivative(p: float, l_beams: int, ctx: EEContext) -> float:
    eta = ctx.pm.eta_t
    c = ctx.p4_constant(l_beams)
    numerator = l_beams * math.log2(p / (l_beams * ctx.sigma2)) + l_beams * ctx.diversity
    denominator = p / eta + c
    value = ctx.scale * (l_beams / (p * LN2) * denominator - numerator / eta) / denominator ** 2
    return _checked(value, lambda: central_difference(lambda x: power_objective(x, l_beams, ctx), p))


def solve_p4_power(l_beams: int, ctx: EEContext, p_max: float, rtol: float = 1e-10) -> PowerSolution:
    """Best P_T in (p_lo, p_max] for fixed L; p_lo is where the rate turns positive."""
    if l_beams < 1:
        raise DomainError(f"l_beams must be >= 1, got {l_beams}")
    p_lo = l_beams * ctx.sigma2 * 2.0 ** (-ctx.diversity)
    if p_lo >= p_max:
        raise InfeasibleSubproblemError(
            f"no positive-rate power below p_max={p_max:.4g} W at L={l_beams} (needs > {p_lo:.4g} W)")

    deriv = lambda p: power_derivative(p, l_beams, ctx)  # noqa: E731
    if deriv(p_max) >= 0:
        p_star = p_max
    else:
        p_star = _bisect_sign(deriv, p_lo, p_max, rtol, log_space=True)
    return PowerSolution(p_t=p_star, objective=power_objective(p_star, l_beams, ctx), p_lo=p_lo)


# ── Alternating optimization ──

def alternating_optimize(cfg: OptimizerConfig, ctx: EEContext) -> OptimizationResult:
    """Alternate P3 (rows) and P4 (power) from L = 1 until the EE gain drops below epsilon."""
    l_cur, p_cur = 1, cfg.initial_power()
    ee_cur = ctx.ee(l_cur, p_cur)
    trace = [IterationRecord(0, l_cur, p_cur, ee_cur)]
    converged = False

    for t in range(1, cfg.max_iterations + 1):
        try:
            rows = solve_p3_elements(p_cur, ctx, cfg.l_max, cfg.bisection_rtol)
        except InfeasibleSubproblemError as e:
            raise InfeasibleSubproblemError(f"iteration {t}, rows step: {e}", trace) from e
        l_new, ee_rows = rows.l_integer, rows.ee
        if ee_rows < ee_cur - ASCENT_SLACK:
            logger.warning("Row step lowered EE at t=%d; keeping L=%d", t, l_cur)
            l_new, ee_rows = l_cur, ee_cur

        try:
            power = solve_p4_power(l_new, ctx, cfg.p_max, cfg.bisection_rtol)
        except InfeasibleSubproblemError as e:
            raise InfeasibleSubproblemError(f"iteration {t}, power step: {e}", trace) from e
        p_new, ee_new = power.p_t, ctx.ee(l_new, power.p_t)
        if ee_new < ee_rows - ASCENT_SLACK:
            # only possible with the "paper" c, whose P4 objective differs from EE
            logger.warning("Power step (c=%s) lowered EE at t=%d; keeping P_T=%.4g W", ctx.c_variant, t, p_cur)
            p_new, ee_new = p_cur, ee_rows

        trace.append(IterationRecord(t, l_new, p_new, ee_new))
        logger.debug("AO t=%d: L=%d P_T=%.6g W EE=%.6g", t, l_new, p_new, ee_new)
        increment = ee_new - ee_cur
        l_cur, p_cur, ee_cur = l_new, p_new, ee_new
        if increment < cfg.epsilon:
            converged = True
            break

    result = OptimizationResult(l_opt=l_cur, p_t_opt=p_cur, ee_opt=ee_cur, trace=trace,
                                converged=converged, iterations=len(trace) - 1)
    logger.info("AO %s after %d iteration(s): L=%d, P_T=%.4f dBW, EE=%.6g",
                "converged" if converged else "stopped", result.iterations, l_cur, result.p_t_opt_dbw, ee_cur)
    return result


def grid_oracle(ctx: EEContext, cfg: OptimizerConfig, points: int = 1000, p_min: float | None = None) -> tuple:
    """Exhaustive search over L in 1..l_max and log-spaced P_T; returns (L, P_T, EE)."""
    p_min = p_min if p_min is not None else cfg.p_max * 1e-4
    powers = np.logspace(math.log10(p_min), math.log10(cfg.p_max), points)
    best = (1, powers[0], -math.inf)
    for l in range(1, cfg.l_max + 1):
        values = ctx.ee_grid(l, powers)
        j = int(np.argmax(values))
        if values[j] > best[2]:
            best = (l, float(powers[j]), float(values[j]))
    return best


def monte_carlo_ee_at(result: OptimizationResult, ctx: EEContext, system: SystemConfig, trials: int,
                      seed: Seed, mode: str = "full", method: str = config.PHI_METHOD,
                      workers: int = 1, chunk_trials: int = config.CHUNK_TRIALS) -> tuple:
    """Simulated (EE, stderr) at the optimum with K i.i.d. users of gain ctx.beta."""
    cfg = SystemConfig(**{
        **system.model_dump(),
        "k_users": ctx.k_users,
        "l_beams": result.l_opt,
        "p_t": result.p_t_opt,
    })
    estimate = monte_carlo_sum_rate(cfg, uniform_layout(ctx.k_users, ctx.beta), trials, mode=mode, seed=seed,
                                    method=method, workers=workers, chunk_trials=chunk_trials)
    power = ris_total_power(ctx.pm, result.l_opt, result.p_t_opt, ctx.k_users)
    return ctx.scale * estimate.mean / power, ctx.scale * estimate.stderr / power
