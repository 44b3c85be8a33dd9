"""Data models for darb: validated configuration and result records."""
from dataclasses import dataclass, field, asdict
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from darb import config
from darb.exceptions import DomainError
from darb.services.sysconfig import dbm_to_watts, dbw_to_watts, watts_to_dbw

PhiMethod = Literal["haar", "phase-dft"]
ScheduleMode = Literal["ideal", "full", "tfs"]
CVariant = Literal["corrected", "paper"]
LogBase = Literal["natural", "binary"]
Placement = Literal["corner", "center"]
ExperimentName = Literal["fig2", "fig3", "fig4", "optimize", "sweep"]
ChannelGain = Literal["path-loss", "unit"]

NO_USER = -1  # beam left idle (no feedback for it)


# ── Validated configuration (pydantic) ──

class _UnitAwareModel(BaseModel):
    """Frozen model accepting `<field>_dbm` / `<field>_dbw` keys, stored in watts."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    @model_validator(mode="before")
    @classmethod
    def _convert_db_fields(cls, data):
        if not isinstance(data, dict):
            return data
        converted = {}
        for key, value in data.items():
            for suffix, convert in (("_dbm", dbm_to_watts), ("_dbw", dbw_to_watts)):
                base = key[: -len(suffix)]
                if key.endswith(suffix) and base in cls.model_fields:
                    if base in data:
                        raise ValueError(f"'{base}' given both in watts and as '{key}'")
                    converted[base] = convert(float(value))
                    break
            else:
                converted[key] = value
        return converted


class PowerModel(_UnitAwareModel):
    """Hardware power constants in watts; defaults are the published table."""
    p_fpga: float = Field(default=dbm_to_watts(27.0), ge=0)   # RIS controller board
    p_pin: float = Field(default=dbm_to_watts(7.0), ge=0)     # per RIS element
    p_a: float = Field(default=dbm_to_watts(20.0), ge=0)      # per active antenna chain
    p_u: float = Field(default=dbm_to_watts(20.0), ge=0)      # per receive chain
    p_sr: float = Field(default=dbm_to_watts(30.0), ge=0)     # RIS-transmitter static
    p_sa: float = Field(default=dbm_to_watts(33.0), ge=0)     # multi-antenna static
    p_uk: float = Field(default=dbm_to_watts(10.0), ge=0)     # per-user static
    eta_t: float = Field(default=0.8, gt=0, le=1)


class SystemConfig(_UnitAwareModel):
    """Scenario parameters. Per-beam power is p_t / l_beams."""
    k_users: int = Field(default=100, ge=1)
    l_beams: int = Field(default=18, ge=1)
    p_t: float = Field(default=dbw_to_watts(1.14), gt=0)
    sigma2: float = Field(default=dbm_to_watts(-80.0), gt=0)
    bandwidth: float = Field(default=180e3, gt=0)
    area_side: float = Field(default=60.0, gt=0)
    q_bits: int = Field(default=4, ge=1)
    alpha: float = Field(default=0.1, ge=0)
    epsilon: float = Field(default=0.05, gt=0)
    l_max: int = Field(default=20, ge=1)
    p_max: float = Field(default=dbw_to_watts(13.0), gt=0)
    placement: Placement = "corner"
    d_min: float = Field(default=1.0, gt=0)

    @model_validator(mode="after")
    def _check_bounds(self):
        if self.p_t > self.p_max:
            raise ValueError(f"p_t ({self.p_t:.4g} W) exceeds p_max ({self.p_max:.4g} W)")
        if self.l_beams > self.l_max:
            raise ValueError(f"l_beams ({self.l_beams}) exceeds l_max ({self.l_max})")
        return self

    @property
    def n_elements(self) -> int:
        return self.l_beams * self.l_beams

    @property
    def n_max(self) -> int:
        return self.l_max * self.l_max

    @property
    def per_beam_power(self) -> float:
        return self.p_t / self.l_beams


class OptimizerConfig(_UnitAwareModel):
    """Settings of the alternating (L, P_T) optimization."""
    l_max: int = Field(default=20, ge=1)
    p_max: float = Field(default=dbw_to_watts(13.0), gt=0)
    epsilon: float = Field(default=0.05, gt=0)
    max_iterations: int = Field(default=50, ge=1)
    bisection_rtol: float = Field(default=1e-10, gt=0, lt=1)
    p_t_init: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _check_init(self):
        if self.p_t_init is not None and self.p_t_init > self.p_max:
            raise ValueError("p_t_init must not exceed p_max")
        return self

    def initial_power(self) -> float:
        # The published start P_T = 0 is outside the feasible set; use half the budget.
        return self.p_t_init if self.p_t_init is not None else self.p_max / 2.0

    @classmethod
    def from_system(cls, cfg: SystemConfig, **overrides) -> "OptimizerConfig":
        values = {"l_max": cfg.l_max, "p_max": cfg.p_max, "epsilon": cfg.epsilon}
        values.update(overrides)
        return cls(**values)


class ExperimentSpec(BaseModel):
    """One CLI experiment: which figure, which grids, which assumptions."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: ExperimentName
    system: SystemConfig = Field(default_factory=SystemConfig)
    power: PowerModel = Field(default_factory=PowerModel)
    k_list: list[int] = Field(default_factory=lambda: list(config.DEFAULT_K_LIST), min_length=1)
    l_list: list[int] = Field(default_factory=lambda: list(config.DEFAULT_L_LIST), min_length=1)
    m_list: Optional[list[int]] = None
    trials: int = Field(default=config.DEFAULT_TRIALS, ge=1)
    seed: int = Field(default=config.DEFAULT_SEED, ge=0)
    out: Optional[str] = None
    trace_out: Optional[str] = None
    layout_in: Optional[str] = None
    layout_out: Optional[str] = None
    # "unit": simulated users share one gain chosen so that beta * p_t / sigma2 = snr_eff
    channel_gain: ChannelGain = "path-loss"
    snr_eff: float = Field(default=config.UNIT_SNR_EFF, gt=0)
    oracle: bool = False
    mode: ScheduleMode = "full"
    phi_method: PhiMethod = config.PHI_METHOD
    beta_ref_dist: float = Field(default=config.BETA_REF_DIST, gt=0)
    c_variant: CVariant = config.C_VARIANT
    log_base: LogBase = "natural"
    spectral_ee: bool = config.SPECTRAL_EE
    workers: int = Field(default=config.DEFAULT_WORKERS, ge=1)
    chunk_trials: int = Field(default=config.CHUNK_TRIALS, ge=1)

    @field_validator("k_list", "l_list", "m_list")
    @classmethod
    def _positive_sorted(cls, values):
        if values is None:
            return values
        if not values:
            raise ValueError("sweep lists must be nonempty")
        if any(v < 1 for v in values):
            raise ValueError(f"sweep values must be positive integers, got {values}")
        return sorted(set(values))

    @model_validator(mode="after")
    def _check_l_list(self):
        if max(self.l_list) > self.system.l_max or max(self.antennas) > self.system.l_max:
            raise ValueError(f"l_list and m_list must not exceed l_max ({self.system.l_max})")
        return self

    @property
    def antennas(self) -> list[int]:
        return self.m_list if self.m_list is not None else self.l_list

    def canonical(self) -> dict:
        """Everything that determines the numbers (output paths excluded)."""
        data = self.model_dump(mode="json")
        data.pop("out", None)
        data.pop("trace_out", None)
        data.pop("layout_out", None)
        data.pop("workers", None)
        return data


# ── Simulation records (dataclasses) ──

@dataclass(frozen=True)
class Seed:
    """Root seed plus stream index; identical (root, stream, keys) give identical draws.

    Generators are PCG64 seeded by SeedSequence(root, spawn_key=(stream, *keys)).
    """
    root: int
    stream: int = 0

    def __post_init__(self):
        if self.root < 0 or self.stream < 0:
            raise DomainError(f"seed root and stream must be >= 0, got {self.root}, {self.stream}")

    def generator(self, *keys: int) -> np.random.Generator:
        sequence = np.random.SeedSequence(self.root, spawn_key=(self.stream, *keys))
        return np.random.Generator(np.random.PCG64(sequence))

    def child(self, stream: int) -> "Seed":
        return Seed(self.root, stream)


@dataclass(frozen=True, eq=False)
class UserLayout:
    """User positions (K x 2, metres), distances to the transmitter and path-loss gains."""
    positions: np.ndarray
    distances: np.ndarray
    betas: np.ndarray

    @property
    def k_users(self) -> int:
        return len(self.betas)


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """h[..., k, c]: user k's channel vector; an optional leading axis indexes trials."""
    h: np.ndarray

    @property
    def k_users(self) -> int:
        return self.h.shape[-2]

    @property
    def l_beams(self) -> int:
        return self.h.shape[-1]


@dataclass(frozen=True, eq=False)
class BeamMatrix:
    phi: np.ndarray
    method: str

    @property
    def l_beams(self) -> int:
        return self.phi.shape[-1]


@dataclass(frozen=True, eq=False)
class SinrTable:
    """gamma[k, i]: SINR of user k on beam i."""
    gamma: np.ndarray

    def __post_init__(self):
        if self.gamma.ndim != 2 or self.gamma.size == 0:
            raise DomainError(f"SINR table must be a nonempty K x L matrix, got shape {self.gamma.shape}")
        if not np.all(np.isfinite(self.gamma)) or np.any(self.gamma < 0):
            raise DomainError("SINR entries must be finite and nonnegative")


@dataclass(frozen=True, eq=False)
class ScheduleOutcome:
    """Per-beam winners (NO_USER when idle) with their SINR and the uplink cost."""
    selected: np.ndarray
    beam_sinr: np.ndarray
    feedback_messages: int
    feedback_bits: int

    def winner(self, beam: int) -> Optional[int]:
        user = int(self.selected[beam])
        return None if user == NO_USER else user

    @property
    def sum_rate(self) -> float:
        return float(np.sum(np.log2(1.0 + self.beam_sinr)))


@dataclass
class RateEstimate:
    """Monte Carlo sum rate (bits/s/Hz) with its standard error."""
    mean: float
    stderr: float
    trials: int
    feedback_bits_mean: float = 0.0
    feedback_bits_stderr: float = 0.0
    outage_fraction: float = 0.0
    trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        data = asdict(self)
        data.pop("trace")
        return data


@dataclass(frozen=True)
class LinkStats:
    """Parameters of the i.i.d. SINR law: L beams, effective SNR beta*P_T/sigma^2, K users."""
    l_beams: int
    snr_eff: float
    k_users: int = 1

    def __post_init__(self):
        if self.l_beams < 1:
            raise DomainError(f"l_beams must be >= 1, got {self.l_beams}")
        if not self.snr_eff > 0:
            raise DomainError(f"snr_eff must be positive, got {self.snr_eff}")
        if self.k_users < 1:
            raise DomainError(f"k_users must be >= 1, got {self.k_users}")

    @classmethod
    def from_physical(cls, l_beams: int, k_users: int, p_t: float, sigma2: float, beta: float = 1.0) -> "LinkStats":
        return cls(l_beams=l_beams, snr_eff=beta * p_t / sigma2, k_users=k_users)


@dataclass(frozen=True)
class IterationRecord:
    t: int
    l_value: int
    p_t_value: float
    ee_value: float

    def to_row(self) -> dict:
        return {
            "t": self.t,
            "L": self.l_value,
            "P_T_w": self.p_t_value,
            "P_T_dbw": watts_to_dbw(self.p_t_value),
            "EE": self.ee_value,
        }


@dataclass
class OptimizationResult:
    l_opt: int
    p_t_opt: float
    ee_opt: float
    trace: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0

    @property
    def p_t_opt_dbw(self) -> float:
        return watts_to_dbw(self.p_t_opt)

    def to_dict(self) -> dict:
        return {
            "l_opt": self.l_opt,
            "p_t_opt_w": self.p_t_opt,
            "p_t_opt_dbw": self.p_t_opt_dbw,
            "ee_opt": self.ee_opt,
            "converged": self.converged,
            "iterations": self.iterations,
        }


@dataclass
class Dataset:
    """Tabular experiment output: a header and rows in header order."""
    header: list
    rows: list = field(default_factory=list)

    def add(self, **values):
        missing = [c for c in self.header if c not in values]
        if missing:
            raise KeyError(f"row is missing columns {missing}")
        self.rows.append([values[c] for c in self.header])

    def column(self, name: str) -> list:
        idx = self.header.index(name)
        return [row[idx] for row in self.rows]


@dataclass
class ExperimentOutput:
    """What one experiment run produced, and where it was written."""
    name: str
    dataset: Dataset
    result: Optional[OptimizationResult] = None
    oracle: Optional[tuple] = None
    mc_ee: Optional[tuple] = None
    layout: Optional[UserLayout] = None
    trial_trace: list = field(default_factory=list)
    paths: list = field(default_factory=list)

    @property
    def oracle_gap(self) -> Optional[float]:
        """Relative EE shortfall of the optimizer against the grid oracle."""
        if self.result is None or self.oracle is None or self.oracle[2] <= 0:
            return None
        return (self.oracle[2] - self.result.ee_opt) / self.oracle[2]
