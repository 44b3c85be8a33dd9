"""Experiment runners behind the darb CLI.

Every runner takes a validated ExperimentSpec and returns an ExperimentOutput
whose dataset rows are ordered by the loops below, so identical (seed,
config) always gives identical CSV bytes.
"""
import logging
from pathlib import Path

from tqdm import tqdm

from darb import config
from darb.exceptions import ConfigError, DarbError, InfeasibleSubproblemError
from darb.integrations.csv_store import (
    TRACE_HEADER, provenance_line, read_layout, write_dataset, write_layout, write_trial_trace,
)
from darb.models.schemas import (
    Dataset, ExperimentOutput, ExperimentSpec, LinkStats, OptimizerConfig, Seed, SystemConfig, UserLayout,
)
from darb.services.analytic import ee_darb_parts, sinr_cdf
from darb.services.beamsim import feedback_overhead_tfs, monte_carlo_sum_rate
from darb.services.channel import nested_layout, path_loss, place_users, uniform_layout
from darb.services.optimizer import EEContext, alternating_optimize, grid_oracle, monte_carlo_ee_at
from darb.services.sysconfig import ma_total_power, rate_to_ee, ris_total_power, watts_to_dbw

logger = logging.getLogger(__name__)


def unit_gain(spec: ExperimentSpec) -> float:
    """Common user gain that puts beta * p_t / sigma2 at spec.snr_eff."""
    return spec.snr_eff * spec.system.sigma2 / spec.system.p_t


def build_layout(spec: ExperimentSpec) -> UserLayout:
    """Users for the simulated experiments, read from layout_in when it is set."""
    k_max = max(spec.k_list)
    if spec.layout_in:
        layout = read_layout(spec.layout_in)
        if layout.k_users < k_max:
            raise ConfigError(f"{spec.layout_in}: {layout.k_users} user(s), the K grid needs {k_max}")
        logger.info("Loaded %d user(s) from %s", layout.k_users, spec.layout_in)
        return layout
    if spec.channel_gain == "unit":
        return uniform_layout(k_max, unit_gain(spec))
    system = spec.system
    return place_users(Seed(spec.seed), k_max, system.area_side, system.placement, system.d_min)


class RunState:
    """Per-run caches: the user layout, simulated rates and trial-trace rows."""

    def __init__(self, spec: ExperimentSpec):
        self.spec = spec
        self.layout = build_layout(spec)
        self.rates = {}
        self.trial_rows = []

    def system(self, **changes) -> SystemConfig:
        return SystemConfig(**{**self.spec.system.model_dump(), **changes})

    def rate(self, k_users: int, l_beams: int, p_t: float | None = None, mode: str | None = None):
        """Monte Carlo RateEstimate; stream = L, so each L has its own channels and beams."""
        spec = self.spec
        p_t = spec.system.p_t if p_t is None else p_t
        mode = mode or spec.mode
        key = (k_users, l_beams, p_t, mode)
        if key not in self.rates:
            estimate = monte_carlo_sum_rate(
                self.system(k_users=k_users, l_beams=l_beams, p_t=p_t),
                nested_layout(self.layout, k_users),
                spec.trials,
                mode=mode,
                seed=Seed(spec.seed, stream=l_beams),
                method=spec.phi_method,
                workers=spec.workers,
                chunk_trials=spec.chunk_trials,
                keep_trace=spec.trace_out is not None,
            )
            for row in estimate.trace:
                self.trial_rows.append({"k_users": k_users, "l_beams": l_beams, "mode": mode, **row})
            estimate.trace = []
            self.rates[key] = estimate
        return self.rates[key]


def _progress(items, desc: str):
    return tqdm(items, desc=desc, disable=not config.SHOW_PROGRESS, leave=False)


def ee_column(spec: ExperimentSpec, name: str = "ee") -> str:
    return f"{name}_bps_hz_per_w" if spec.spectral_ee else f"{name}_bits_per_j"


def reference_beta(spec: ExperimentSpec, d_ref: float | None = None) -> float:
    """Scalar path-loss gain of the analytic and optimizer paths."""
    return path_loss(spec.beta_ref_dist if d_ref is None else d_ref, spec.system.d_min)


def ee_context(spec: ExperimentSpec, k_users: int, beta: float | None = None,
               c_variant: str | None = None) -> EEContext:
    return EEContext(
        pm=spec.power,
        k_users=k_users,
        beta=reference_beta(spec) if beta is None else beta,
        sigma2=spec.system.sigma2,
        bandwidth=spec.system.bandwidth,
        spectral=spec.spectral_ee,
        c_variant=c_variant or spec.c_variant,
        log_base=spec.log_base,
    )


def _ee(spec: ExperimentSpec, rate: float, power: float) -> float:
    return rate_to_ee(rate, power, spec.system.bandwidth, spectral=spec.spectral_ee)


# ── fig2: simulated EE of the RIS transmitter vs the multi-antenna baseline ──

def run_fig2(spec: ExperimentSpec, state: RunState | None = None) -> ExperimentOutput:
    state = state or RunState(spec)
    ee, ee_err = ee_column(spec), ee_column(spec, "ee_stderr")
    dataset = Dataset(header=["k_users", "system", "l_or_m", "rate_bps_hz", "rate_stderr_bps_hz",
                              "power_w", ee, ee_err])
    p_t = spec.system.p_t

    for k in _progress(spec.k_list, "fig2"):
        for system, sizes in (("ris", spec.l_list), ("ma", spec.antennas)):
            for n in sizes:
                # the baseline with M antennas sees the same L = M beam statistics
                estimate = state.rate(k, n)
                if system == "ris":
                    power = ris_total_power(spec.power, n, p_t, k)
                else:
                    power = ma_total_power(spec.power, n, p_t, k)
                dataset.add(**{
                    "k_users": k, "system": system, "l_or_m": n,
                    "rate_bps_hz": estimate.mean, "rate_stderr_bps_hz": estimate.stderr,
                    "power_w": power,
                    ee: _ee(spec, estimate.mean, power), ee_err: _ee(spec, estimate.stderr, power),
                })
    return ExperimentOutput(name=spec.name, dataset=dataset, trial_trace=state.trial_rows, layout=state.layout)


# ── fig3: fixed Darb vs jointly optimized (Jeta) vs multi-antenna ──

def run_fig3(spec: ExperimentSpec, state: RunState | None = None) -> ExperimentOutput:
    state = state or RunState(spec)
    cfg = spec.system
    l_fix, p_fix = cfg.l_beams, cfg.p_t
    curves = ("darb", "jeta", "ma")
    header = ["k_users", "l_fixed", "p_t_fixed_dbw", "l_opt", "p_t_opt_w", "p_t_opt_dbw", "ao_iterations"]
    header += [ee_column(spec, f"ee_{c}") for c in curves]
    header += [ee_column(spec, f"ee_{c}_mc") for c in curves]
    dataset = Dataset(header=header)
    opt_cfg = OptimizerConfig.from_system(cfg)

    for k in _progress(spec.k_list, "fig3"):
        ctx = ee_context(spec, k)
        result = alternating_optimize(opt_cfg, ctx)
        rate_ma, _, _ = ee_darb_parts(l_fix, p_fix, spec.power, k, ctx.beta, ctx.sigma2, ctx.log_base)
        analytic = {
            "darb": ctx.ee(l_fix, p_fix),
            "jeta": result.ee_opt,
            "ma": ctx.scale * rate_ma / ma_total_power(spec.power, l_fix, p_fix, k),
        }
        rate_fix = state.rate(k, l_fix, p_fix).mean
        rate_opt = state.rate(k, result.l_opt, result.p_t_opt).mean
        simulated = {
            "darb": _ee(spec, rate_fix, ris_total_power(spec.power, l_fix, p_fix, k)),
            "jeta": _ee(spec, rate_opt, ris_total_power(spec.power, result.l_opt, result.p_t_opt, k)),
            "ma": _ee(spec, rate_fix, ma_total_power(spec.power, l_fix, p_fix, k)),
        }
        row = {
            "k_users": k, "l_fixed": l_fix, "p_t_fixed_dbw": watts_to_dbw(p_fix),
            "l_opt": result.l_opt, "p_t_opt_w": result.p_t_opt, "p_t_opt_dbw": result.p_t_opt_dbw,
            "ao_iterations": result.iterations,
        }
        for c in curves:
            row[ee_column(spec, f"ee_{c}")] = analytic[c]
            row[ee_column(spec, f"ee_{c}_mc")] = simulated[c]
        dataset.add(**row)
    return ExperimentOutput(name=spec.name, dataset=dataset, trial_trace=state.trial_rows, layout=state.layout)


# ── fig4: rate and feedback with and without the threshold ──

def run_fig4(spec: ExperimentSpec, state: RunState | None = None) -> ExperimentOutput:
    state = state or RunState(spec)
    cfg = spec.system
    dataset = Dataset(header=[
        "k_users", "l_beams", "alpha",
        "rate_no_tfs_bps_hz", "rate_no_tfs_stderr_bps_hz", "rate_tfs_bps_hz", "rate_tfs_stderr_bps_hz",
        "fo_no_tfs_bits", "fo_tfs_bits", "fo_tfs_stderr_bits", "fo_tfs_formula_bits",
    ])
    unit = spec.channel_gain == "unit" and not spec.layout_in
    beta = unit_gain(spec) if unit else reference_beta(spec)

    for k in _progress(spec.k_list, "fig4"):
        for l in spec.l_list:
            plain = state.rate(k, l, mode="full")
            threshold = state.rate(k, l, mode="tfs")
            stats = LinkStats.from_physical(l, k, cfg.p_t, cfg.sigma2, beta)
            cdf_alpha = float(sinr_cdf(cfg.alpha, stats))
            dataset.add(
                k_users=k, l_beams=l, alpha=cfg.alpha,
                rate_no_tfs_bps_hz=plain.mean, rate_no_tfs_stderr_bps_hz=plain.stderr,
                rate_tfs_bps_hz=threshold.mean, rate_tfs_stderr_bps_hz=threshold.stderr,
                fo_no_tfs_bits=plain.feedback_bits_mean,
                fo_tfs_bits=threshold.feedback_bits_mean,
                fo_tfs_stderr_bits=threshold.feedback_bits_stderr,
                fo_tfs_formula_bits=feedback_overhead_tfs(k, l, cfg.q_bits, cfg.alpha, cdf_alpha),
            )
    return ExperimentOutput(name=spec.name, dataset=dataset, trial_trace=state.trial_rows, layout=state.layout)


# ── Single optimization run ──

def run_optimize(spec: ExperimentSpec) -> ExperimentOutput:
    """Alternating optimization at K = system.k_users; the trace is the dataset.

    InfeasibleSubproblemError propagates (the CLI maps it to its own exit code).
    """
    cfg = spec.system
    ctx = ee_context(spec, cfg.k_users)
    opt_cfg = OptimizerConfig.from_system(cfg)
    result = alternating_optimize(opt_cfg, ctx)

    dataset = Dataset(header=list(TRACE_HEADER))
    for record in result.trace:
        dataset.add(**record.to_row())

    oracle = None
    if spec.oracle:
        oracle = grid_oracle(ctx, opt_cfg)
        logger.info("Grid oracle: L=%d, P_T=%.4f dBW, EE=%.6g", oracle[0], watts_to_dbw(oracle[1]), oracle[2])

    mc_ee = None
    try:
        mc_ee = monte_carlo_ee_at(result, ctx, cfg, spec.trials, Seed(spec.seed, stream=result.l_opt),
                                  mode=spec.mode, method=spec.phi_method,
                                  workers=spec.workers, chunk_trials=spec.chunk_trials)
    except DarbError as e:
        logger.error("Monte Carlo EE at the optimum failed: %s", e)

    output = ExperimentOutput(name=spec.name, dataset=dataset, result=result, oracle=oracle, mc_ee=mc_ee)
    if oracle is not None and oracle[2] - result.ee_opt > max(cfg.epsilon, 1e-6 * abs(oracle[2])):
        logger.warning("Optimizer EE is %.3g%% below the grid oracle", 100 * output.oracle_gap)
    return output


# ── Optimum sensitivity over the reference distance and the P4 constant ──

def matches_published(l_opt: int, p_t_opt_dbw: float) -> bool:
    return (abs(l_opt - config.PUBLISHED_OPTIMUM_L) <= config.OPTIMUM_L_TOLERANCE
            and abs(p_t_opt_dbw - config.PUBLISHED_OPTIMUM_P_T_DBW) <= config.OPTIMUM_P_T_TOLERANCE_DB)


def run_sweep(spec: ExperimentSpec) -> ExperimentOutput:
    ee = ee_column(spec)
    dataset = Dataset(header=["d_ref_m", "c_variant", "k_users", "status", "l_opt", "p_t_opt_w",
                              "p_t_opt_dbw", ee, "ao_iterations", "matches_paper"])
    opt_cfg = OptimizerConfig.from_system(spec.system)
    grid = [(d, c, k) for d in config.SWEEP_D_REF for c in config.SWEEP_C_VARIANTS for k in spec.k_list]

    for d_ref, c_variant, k in _progress(grid, "sweep"):
        ctx = ee_context(spec, k, beta=reference_beta(spec, d_ref), c_variant=c_variant)
        row = {"d_ref_m": d_ref, "c_variant": c_variant, "k_users": k}
        try:
            result = alternating_optimize(opt_cfg, ctx)
        except InfeasibleSubproblemError as e:
            logger.warning("Sweep cell d_ref=%g m, c=%s, K=%d infeasible: %s", d_ref, c_variant, k, e)
            row.update(status="infeasible", l_opt=None, p_t_opt_w=None, p_t_opt_dbw=None,
                       ao_iterations=len(e.trace), matches_paper=False, **{ee: None})
        else:
            row.update(status="ok", l_opt=result.l_opt, p_t_opt_w=result.p_t_opt,
                       p_t_opt_dbw=result.p_t_opt_dbw, ao_iterations=result.iterations,
                       matches_paper=matches_published(result.l_opt, result.p_t_opt_dbw),
                       **{ee: result.ee_opt})
        dataset.add(**row)

    if not any(dataset.column("matches_paper")):
        logger.info("No sweep cell reproduces L=%d, P_T=%.2f dBW within tolerance",
                    config.PUBLISHED_OPTIMUM_L, config.PUBLISHED_OPTIMUM_P_T_DBW)
    return ExperimentOutput(name=spec.name, dataset=dataset)


RUNNERS = {
    "fig2": run_fig2,
    "fig3": run_fig3,
    "fig4": run_fig4,
    "optimize": run_optimize,
    "sweep": run_sweep,
}


def default_output_path(spec: ExperimentSpec) -> Path:
    return Path(config.OUTPUT_DIR) / f"{spec.name}.csv"


def run_experiment(spec: ExperimentSpec) -> ExperimentOutput:
    """Run one experiment and write its CSV (and the trial trace when requested)."""
    logger.info("Running %s: seed=%d trials=%d workers=%d", spec.name, spec.seed, spec.trials, spec.workers)
    output = RUNNERS[spec.name](spec)

    provenance = provenance_line(spec.name, spec.seed, spec.canonical())
    out_path = Path(spec.out) if spec.out else default_output_path(spec)
    try:
        output.paths.append(write_dataset(out_path, output.dataset, provenance))
        if spec.trace_out:
            output.paths.append(write_trial_trace(spec.trace_out, output.trial_trace, provenance))
        if spec.layout_out:
            if output.layout is None:
                logger.warning("%s simulates no user layout; %s not written", spec.name, spec.layout_out)
            else:
                output.paths.append(write_layout(spec.layout_out, output.layout, provenance))
    except OSError as e:
        raise DarbError(f"cannot write results to {e.filename}: {e.strerror}") from e
    logger.info("Finished %s: %d row(s)", spec.name, len(output.dataset.rows))
    return output
