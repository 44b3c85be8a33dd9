"""Random RIS beams, SINR evaluation, max-SINR scheduling and Monte Carlo sum rate.

Scheduling modes:
  ideal -- every beam takes the best of all K users (per-column argmax)
  full  -- each user reports only its best beam; beams nobody reports idle
  tfs   -- as `full`, but a user reports only if its best SINR exceeds alpha
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import dft

from darb import config
from darb.exceptions import DomainError
from darb.models.schemas import (
    NO_USER, BeamMatrix, ChannelRealization, RateEstimate, ScheduleOutcome, Seed,
    SinrTable, SystemConfig, UserLayout,
)
from darb.services.channel import BEAM_KEY, draw_user_channels

logger = logging.getLogger(__name__)

PHI_METHODS = ("haar", "phase-dft")
SCHEDULE_MODES = ("ideal", "full", "tfs")


# ── Random beams ──

def random_unitary_batch(rng: np.random.Generator, l_beams: int, trials: int, method: str) -> np.ndarray:
    """Stack of `trials` random L x L unitaries, shape (trials, L, L)."""
    if l_beams < 1:
        raise DomainError(f"l_beams must be >= 1, got {l_beams}")
    if method == "haar":
        # Ginibre matrix -> QR, then fix the phases of R's diagonal
        z = (rng.standard_normal((trials, l_beams, l_beams))
             + 1j * rng.standard_normal((trials, l_beams, l_beams))) / np.sqrt(2.0)
        q, r = np.linalg.qr(z)
        d = np.diagonal(r, axis1=-2, axis2=-1)
        return q * (d / np.abs(d))[..., None, :]
    if method == "phase-dft":
        theta = rng.uniform(0.0, 2.0 * np.pi, size=(trials, l_beams))
        return np.exp(1j * theta)[..., :, None] * dft(l_beams, scale="sqrtn")[None, :, :]
    raise DomainError(f"unknown beam construction '{method}' (expected one of {PHI_METHODS})")


def random_unitary(seed: Seed | np.random.Generator, l_beams: int, method: str = "phase-dft") -> BeamMatrix:
    """One random beam matrix Phi = [phi_1 ... phi_L]."""
    rng = seed.generator(BEAM_KEY) if isinstance(seed, Seed) else seed
    return BeamMatrix(phi=random_unitary_batch(rng, l_beams, 1, method)[0], method=method)


# ── SINR ──

def sinr_batch(h: np.ndarray, phi: np.ndarray, p_t: float, sigma2: float) -> np.ndarray:
    """gamma = z_i / (sum_{l != i} z_l + L sigma2 / P_T) with z_i = |h^T phi_i|^2.

    h is (..., K, L), phi is (..., L, L); leading axes broadcast.
    """
    if p_t <= 0 or sigma2 <= 0:
        raise DomainError(f"p_t and sigma2 must be positive, got {p_t}, {sigma2}")
    l_beams = phi.shape[-1]
    proj = np.abs(h @ phi) ** 2
    interference = np.maximum(proj.sum(axis=-1, keepdims=True) - proj, 0.0)
    return proj / (interference + l_beams * sigma2 / p_t)


def compute_sinr(h: ChannelRealization, phi: BeamMatrix, p_t: float, sigma2: float) -> SinrTable:
    if h.h.ndim != 2 or phi.phi.ndim != 2:
        raise DomainError("compute_sinr expects a single K x L channel and one L x L beam matrix")
    if h.l_beams != phi.phi.shape[0]:
        raise DomainError(f"channel length {h.l_beams} does not match beam matrix {phi.phi.shape}")
    return SinrTable(gamma=sinr_batch(h.h, phi.phi, p_t, sigma2))


# ── Feedback accounting ──

def index_bits(l_beams: int) -> int:
    """ceil(log2 L) bits to name a beam."""
    if l_beams < 1:
        raise DomainError(f"l_beams must be >= 1, got {l_beams}")
    return (l_beams - 1).bit_length()


def feedback_overhead(k_users: int, l_beams: int, q_bits: int) -> int:
    """Every user reports Q SINR bits plus a beam index."""
    if k_users < 0 or q_bits < 0:
        raise DomainError(f"k_users and q_bits must be >= 0, got {k_users}, {q_bits}")
    return k_users * q_bits + k_users * index_bits(l_beams)


def feedback_overhead_tfs(k_users: int, l_beams: int, q_bits: int, alpha: float, cdf_at_alpha: float) -> float:
    """Expected overhead when only users above the threshold report: [1 - F(alpha)] FO."""
    if alpha < 0:
        raise DomainError(f"alpha must be >= 0, got {alpha}")
    if not 0.0 <= cdf_at_alpha <= 1.0:
        raise DomainError(f"cdf_at_alpha must lie in [0, 1], got {cdf_at_alpha}")
    return (1.0 - cdf_at_alpha) * feedback_overhead(k_users, l_beams, q_bits)


# ── Scheduling ──

def schedule_batch(gamma: np.ndarray, mode: str, alpha: float = 0.0, q_bits: int = 4):
    """Schedule a (T, K, L) stack of SINR tables.

    Returns (selected (T, L), beam_sinr (T, L), messages (T,), bits (T,)).
    Ties go to the lowest user index.
    """
    if mode not in SCHEDULE_MODES:
        raise DomainError(f"unknown scheduling mode '{mode}' (expected one of {SCHEDULE_MODES})")
    trials, k_users, l_beams = gamma.shape

    if mode == "ideal":
        selected = np.argmax(gamma, axis=1)
        beam_sinr = np.take_along_axis(gamma, selected[:, None, :], axis=1)[:, 0, :]
        messages = np.full(trials, k_users)
    else:
        best = np.argmax(gamma, axis=2)
        best_val = np.take_along_axis(gamma, best[..., None], axis=2)[..., 0]
        # alpha = 0 disables the threshold, so even an all-zero user reports
        thresholded = mode == "tfs" and alpha > 0
        feeds = best_val > alpha if thresholded else np.ones_like(best, dtype=bool)
        claims = feeds[..., None] & (best[..., None] == np.arange(l_beams))
        masked = np.where(claims, gamma, -np.inf)
        winners = np.argmax(masked, axis=1)
        claimed = claims.any(axis=1)
        beam_sinr = np.where(claimed, np.take_along_axis(masked, winners[:, None, :], axis=1)[:, 0, :], 0.0)
        selected = np.where(claimed, winners, NO_USER)
        messages = feeds.sum(axis=1)

    bits = messages * (q_bits + index_bits(l_beams))
    return selected, beam_sinr, messages, bits


def _outcome(table: SinrTable, mode: str, alpha: float, q_bits: int) -> ScheduleOutcome:
    selected, beam_sinr, messages, bits = schedule_batch(table.gamma[None], mode, alpha, q_bits)
    return ScheduleOutcome(selected=selected[0], beam_sinr=beam_sinr[0],
                           feedback_messages=int(messages[0]), feedback_bits=int(bits[0]))


def schedule_max_sinr(table: SinrTable, q_bits: int = 4) -> ScheduleOutcome:
    """Per-beam argmax over all K users; every user is charged a full report."""
    return _outcome(table, "ideal", 0.0, q_bits)


def schedule_best_beam(table: SinrTable, q_bits: int = 4) -> ScheduleOutcome:
    """Each user reports only its best (SINR, beam) pair; beams compete among their reporters."""
    return _outcome(table, "full", 0.0, q_bits)


def schedule_with_threshold(table: SinrTable, alpha: float, q_bits: int = 4) -> ScheduleOutcome:
    """Best-beam reporting restricted to users whose best SINR exceeds alpha (everyone at alpha = 0)."""
    if alpha < 0:
        raise DomainError(f"alpha must be >= 0, got {alpha}")
    return _outcome(table, "tfs", alpha, q_bits)


# ── Monte Carlo ──

@dataclass
class RunningMoments:
    """Count/mean/M2 accumulator; `merge` is associative."""
    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def of(cls, samples: np.ndarray) -> "RunningMoments":
        samples = np.asarray(samples, dtype=float)
        if samples.size == 0:
            return cls()
        mean = float(samples.mean())
        return cls(count=samples.size, mean=mean, m2=float(np.sum((samples - mean) ** 2)))

    def merge(self, other: "RunningMoments") -> "RunningMoments":
        if other.count == 0:
            return self
        if self.count == 0:
            return other
        count = self.count + other.count
        delta = other.mean - self.mean
        return RunningMoments(
            count=count,
            mean=self.mean + delta * other.count / count,
            m2=self.m2 + other.m2 + delta * delta * self.count * other.count / count,
        )

    @property
    def stderr(self) -> float:
        if self.count < 2:
            return 0.0
        return math.sqrt(self.m2 / (self.count - 1)) / math.sqrt(self.count)


@dataclass(frozen=True)
class _ChunkJob:
    root: int
    stream: int
    chunk: int
    offset: int
    trials: int
    betas: np.ndarray
    l_beams: int
    p_t: float
    sigma2: float
    mode: str
    alpha: float
    q_bits: int
    method: str
    keep_trace: bool


def sample_sinr_tables(seed: Seed, betas: np.ndarray, l_beams: int, p_t: float, sigma2: float,
                       trials: int, method: str = "phase-dft", chunk: int = 0) -> np.ndarray:
    """(trials, K, L) SINR tables, fresh channels and beams per trial."""
    h = draw_user_channels(seed, betas, l_beams, trials, chunk)
    phi = random_unitary_batch(seed.generator(BEAM_KEY, chunk), l_beams, trials, method)
    return sinr_batch(h, phi, p_t, sigma2)


def _run_chunk(job: _ChunkJob) -> dict:
    gamma = sample_sinr_tables(Seed(job.root, job.stream), job.betas, job.l_beams,
                               job.p_t, job.sigma2, job.trials, job.method, job.chunk)
    selected, beam_sinr, _, bits = schedule_batch(gamma, job.mode, job.alpha, job.q_bits)
    beam_rates = np.log2(1.0 + beam_sinr)
    rates = beam_rates.sum(axis=1)

    trace = []
    if job.keep_trace:
        for t in range(job.trials):
            for i in range(job.l_beams):
                trace.append({
                    "trial": job.offset + t,
                    "beam": i,
                    "selected_user": int(selected[t, i]),
                    "sinr": float(beam_sinr[t, i]),
                    "rate": float(beam_rates[t, i]),
                    "fed_back_bits": int(bits[t]),
                })
    return {
        "rate": RunningMoments.of(rates),
        "bits": RunningMoments.of(bits),
        "idle": int(np.sum(selected == NO_USER)),
        "trace": trace,
    }


def _chunk_jobs(seed: Seed, betas: np.ndarray, cfg: SystemConfig, trials: int, mode: str,
                alpha: float, method: str, chunk_trials: int, keep_trace: bool) -> list:
    jobs = []
    for chunk, offset in enumerate(range(0, trials, chunk_trials)):
        jobs.append(_ChunkJob(
            root=seed.root, stream=seed.stream, chunk=chunk, offset=offset,
            trials=min(chunk_trials, trials - offset), betas=betas, l_beams=cfg.l_beams,
            p_t=cfg.p_t, sigma2=cfg.sigma2, mode=mode, alpha=alpha, q_bits=cfg.q_bits,
            method=method, keep_trace=keep_trace,
        ))
    return jobs


def monte_carlo_sum_rate(cfg: SystemConfig, layout: UserLayout, trials: int, mode: str = "full",
                         seed: Seed | None = None, method: str = config.PHI_METHOD,
                         alpha: float | None = None, workers: int = 1,
                         chunk_trials: int = config.CHUNK_TRIALS, keep_trace: bool = False) -> RateEstimate:
    """Average sum over beams of log2(1 + SINR), redrawing channels and beams per trial.

    Trials run in fixed-size chunks keyed by (seed, chunk index), so the
    estimate is identical for any number of workers.
    """
    if trials < 1:
        raise DomainError(f"trials must be >= 1, got {trials}")
    if mode not in SCHEDULE_MODES:
        raise DomainError(f"unknown scheduling mode '{mode}' (expected one of {SCHEDULE_MODES})")
    seed = seed or Seed(config.DEFAULT_SEED)
    alpha = cfg.alpha if alpha is None else alpha
    betas = np.asarray(layout.betas, dtype=float)

    jobs = _chunk_jobs(seed, betas, cfg, trials, mode, alpha, method, chunk_trials, keep_trace)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(job) for job in jobs]

    rate, bits, idle, trace = RunningMoments(), RunningMoments(), 0, []
    for part in parts:
        rate = rate.merge(part["rate"])
        bits = bits.merge(part["bits"])
        idle += part["idle"]
        trace.extend(part["trace"])

    logger.debug("MC K=%d L=%d mode=%s trials=%d: rate=%.5g +/- %.2g",
                 len(betas), cfg.l_beams, mode, trials, rate.mean, rate.stderr)
    return RateEstimate(
        mean=rate.mean,
        stderr=rate.stderr,
        trials=rate.count,
        feedback_bits_mean=bits.mean,
        feedback_bits_stderr=bits.stderr,
        outage_fraction=idle / (trials * cfg.l_beams),
        trace=trace,
    )


# ── Empirical samples for distribution checks ──

def _sample_gamma(k_users: int, l_beams: int, snr: float, trials: int, seed: Seed, method: str,
                  chunk_trials: int) -> np.ndarray:
    betas = np.ones(k_users)
    parts = [
        sample_sinr_tables(seed, betas, l_beams, snr, 1.0, min(chunk_trials, trials - offset), method, chunk)
        for chunk, offset in enumerate(range(0, trials, chunk_trials))
    ]
    return np.concatenate(parts, axis=0)


def sample_sinr_entries(l_beams: int, snr: float, trials: int, seed: Seed,
                        method: str = "phase-dft", chunk_trials: int = 10_000) -> np.ndarray:
    """gamma_{0,0} for unit-gain users, one independent sample per trial."""
    return _sample_gamma(1, l_beams, snr, trials, seed, method, chunk_trials)[:, 0, 0]


def sample_max_sinr(k_users: int, l_beams: int, snr: float, trials: int, seed: Seed,
                    method: str = "phase-dft", chunk_trials: int = 10_000) -> np.ndarray:
    """max_k gamma_{k,0} over K unit-gain users, one sample per trial."""
    return _sample_gamma(k_users, l_beams, snr, trials, seed, method, chunk_trials)[:, :, 0].max(axis=1)


def feedback_probability_mc(l_beams: int, snr: float, alpha: float, trials: int, seed: Seed,
                            method: str = "phase-dft") -> float:
    """Fraction of unit-gain users whose best SINR exceeds alpha.

    This is 1 - P(max_i gamma_i <= alpha), which is >= 1 - F(alpha) and equal to
    it only for L = 1.
    """
    gamma = sample_sinr_entries_all_beams(l_beams, snr, trials, seed, method)
    return float(np.mean(gamma.max(axis=1) > alpha))


def sample_sinr_entries_all_beams(l_beams: int, snr: float, trials: int, seed: Seed,
                                  method: str = "phase-dft") -> np.ndarray:
    """(trials, L): one unit-gain user's SINR on every beam."""
    return _sample_gamma(1, l_beams, snr, trials, seed, method, 10_000)[:, 0, :]
