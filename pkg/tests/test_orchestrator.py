import numpy as np
import pytest

from darb.exceptions import ConfigError, InfeasibleSubproblemError
from darb.integrations.config_store import build_spec
from darb.integrations.csv_store import TRACE_HEADER, read_csv
from darb.models.schemas import LinkStats
from darb.orchestrator import (
    ee_column, matches_published, run_experiment, run_fig2, run_fig3, run_fig4, run_optimize, run_sweep,
)
from darb.services.analytic import sinr_cdf


def _spec(name, tmp_path=None, **values):
    values.setdefault("trials", 200)
    values.setdefault("chunk_trials", 100)
    if tmp_path is not None:
        values.setdefault("out", str(tmp_path / f"{name}.csv"))
    return build_spec(name, values)


def _rows(output):
    return [dict(zip(output.dataset.header, row)) for row in output.dataset.rows]


class TestFig2:
    def test_ris_beats_same_size_array(self):
        output = run_fig2(_spec("fig2", k_list=[10, 40], l_list=[8, 18]))
        rows = _rows(output)
        assert len(rows) == 2 * 4
        ee = ee_column(_spec("fig2"))
        assert ee == "ee_bits_per_j"
        for k in (10, 40):
            for n in (8, 18):
                ris = next(r for r in rows if r["k_users"] == k and r["system"] == "ris" and r["l_or_m"] == n)
                ma = next(r for r in rows if r["k_users"] == k and r["system"] == "ma" and r["l_or_m"] == n)
                assert ris["rate_bps_hz"] == ma["rate_bps_hz"]
                assert ris["power_w"] < ma["power_w"]
                assert ris[ee] > ma[ee]

    def test_efficiency_grows_with_users(self):
        output = run_fig2(_spec("fig2", k_list=[10, 30, 60], l_list=[8]))
        ris = [r for r in _rows(output) if r["system"] == "ris"]
        rates = [r["rate_bps_hz"] for r in ris]
        ees = [r["ee_bits_per_j"] for r in ris]
        assert rates == sorted(rates)
        assert ees[0] < ees[1] < ees[2]

    def test_separate_antenna_list(self):
        output = run_fig2(_spec("fig2", k_list=[10], l_list=[8], m_list=[4, 8]))
        ma = [r["l_or_m"] for r in _rows(output) if r["system"] == "ma"]
        assert ma == [4, 8]

    def test_byte_identical_rerun(self, tmp_path):
        first = run_experiment(_spec("fig2", k_list=[10, 20], l_list=[4], out=str(tmp_path / "a.csv")))
        second = run_experiment(_spec("fig2", k_list=[10, 20], l_list=[4], out=str(tmp_path / "b.csv")))
        assert first.paths[0].read_bytes() == second.paths[0].read_bytes()

    def test_worker_count_does_not_change_output(self, tmp_path):
        serial = run_experiment(_spec("fig2", k_list=[10], l_list=[4], out=str(tmp_path / "a.csv")))
        pooled = run_experiment(_spec("fig2", k_list=[10], l_list=[4], workers=2, out=str(tmp_path / "b.csv")))
        assert serial.paths[0].read_bytes() == pooled.paths[0].read_bytes()

    def test_trial_trace(self, tmp_path):
        spec = _spec("fig2", tmp_path, k_list=[10], l_list=[4], trials=3,
                     trace_out=str(tmp_path / "trials.csv"))
        output = run_experiment(spec)
        header, rows = read_csv(output.paths[1])
        assert header[:3] == ["k_users", "l_beams", "mode"]
        assert len(rows) == 3 * 4


class TestFig3:
    def test_optimized_curve_dominates(self):
        output = run_fig3(_spec("fig3", k_list=[20, 100], trials=100))
        for row in _rows(output):
            assert row["ee_jeta_bits_per_j"] >= row["ee_darb_bits_per_j"]
            assert row["ee_darb_bits_per_j"] > row["ee_ma_bits_per_j"]
            assert row["ee_darb_mc_bits_per_j"] > row["ee_ma_mc_bits_per_j"]
            assert 1 <= row["l_opt"] <= 20
            assert row["p_t_opt_dbw"] <= 13.0 + 1e-9
            assert row["l_fixed"] == 18
            assert row["p_t_fixed_dbw"] == pytest.approx(1.14)

    def test_spectral_columns(self):
        output = run_fig3(_spec("fig3", k_list=[20], trials=50, spectral_ee=True))
        assert "ee_jeta_bps_hz_per_w" in output.dataset.header


class TestFig4:
    def test_threshold_saves_feedback_without_losing_rate(self):
        output = run_fig4(_spec("fig4", k_list=[20, 40], l_list=[4], trials=1000, channel_gain="unit"))
        for row in _rows(output):
            assert row["fo_no_tfs_bits"] == row["k_users"] * (4 + 2)
            # at snr_eff = 0.1 every user stays silent with probability >= (1 - e^-1)^4
            assert row["fo_tfs_bits"] < 0.9 * row["fo_no_tfs_bits"]
            assert row["rate_tfs_bps_hz"] <= row["rate_no_tfs_bps_hz"]
            gap = (row["rate_no_tfs_bps_hz"] - row["rate_tfs_bps_hz"]) / row["rate_no_tfs_bps_hz"]
            assert gap < 0.02

    def test_unit_gain_formula_column(self):
        spec = _spec("fig4", k_list=[20], l_list=[4], channel_gain="unit", snr_eff=0.1)
        row = _rows(run_fig4(spec))[0]
        cdf = float(sinr_cdf(0.1, LinkStats(l_beams=4, snr_eff=0.1)))
        assert row["fo_tfs_formula_bits"] == pytest.approx((1 - cdf) * 20 * 6)
        # the protocol keys on each user's best beam, so it reports more often than 1 - F(alpha)
        assert row["fo_tfs_bits"] > row["fo_tfs_formula_bits"]

    def test_unit_gain_layout(self):
        spec = _spec("fig4", k_list=[10, 20], l_list=[4], channel_gain="unit", snr_eff=0.5)
        layout = run_fig4(spec).layout
        assert layout.k_users == 20
        assert np.allclose(layout.betas * spec.system.p_t / spec.system.sigma2, 0.5)

    def test_path_loss_users_rarely_fall_below_threshold(self):
        output = run_fig4(_spec("fig4", k_list=[20], l_list=[4], trials=500))
        row = _rows(output)[0]
        assert row["fo_tfs_bits"] <= row["fo_no_tfs_bits"]
        assert row["rate_tfs_bps_hz"] == pytest.approx(row["rate_no_tfs_bps_hz"], rel=0.02)

    def test_zero_threshold_is_degenerate(self):
        output = run_fig4(_spec("fig4", k_list=[20], l_list=[4], alpha=0.0, channel_gain="unit"))
        row = _rows(output)[0]
        assert row["rate_tfs_bps_hz"] == row["rate_no_tfs_bps_hz"]
        assert row["fo_tfs_bits"] / row["fo_no_tfs_bits"] == 1.0
        assert row["fo_tfs_formula_bits"] == row["fo_no_tfs_bits"]


class TestLayoutFiles:
    def test_written_layout_drives_a_rerun(self, tmp_path):
        layout_path = tmp_path / "users.csv"
        first = run_experiment(_spec("fig2", tmp_path, k_list=[10], l_list=[4], layout_out=str(layout_path)))
        assert first.paths[-1] == layout_path
        header, rows = read_csv(layout_path)
        assert header == ["user", "x_m", "y_m", "d_m", "beta"]
        assert len(rows) == 10

        second = run_fig2(_spec("fig2", k_list=[10], l_list=[4], layout_in=str(layout_path)))
        assert np.allclose(second.layout.betas, first.layout.betas, rtol=1e-9)
        assert _rows(second)[0]["rate_bps_hz"] == pytest.approx(_rows(first)[0]["rate_bps_hz"], rel=1e-6)

    def test_too_few_users(self, tmp_path):
        layout_path = tmp_path / "users.csv"
        run_experiment(_spec("fig2", tmp_path, k_list=[10], l_list=[4], layout_out=str(layout_path)))
        with pytest.raises(ConfigError):
            run_fig2(_spec("fig2", k_list=[10, 20], l_list=[4], layout_in=str(layout_path)))

    def test_optimize_has_no_layout(self, tmp_path, caplog):
        layout_path = tmp_path / "users.csv"
        with caplog.at_level("WARNING"):
            run_experiment(_spec("optimize", tmp_path, trials=50, layout_out=str(layout_path)))
        assert not layout_path.exists()
        assert "no user layout" in caplog.text


class TestOptimize:
    def test_trace_and_oracle(self, tmp_path):
        output = run_experiment(_spec("optimize", tmp_path, oracle=True, spectral_ee=True, trials=100))
        header, rows = read_csv(output.paths[0])
        assert header == TRACE_HEADER
        assert rows[0]["t"] == "0" and rows[0]["L"] == "1"
        assert output.result.converged
        assert output.oracle_gap is not None
        assert output.oracle_gap <= max(0.05 / output.oracle[2], 1e-6)
        assert output.mc_ee is not None and output.mc_ee[0] > 0

    def test_infeasible_propagates(self):
        with pytest.raises(InfeasibleSubproblemError):
            run_optimize(_spec("optimize", beta_ref_dist=1e9))


class TestSweep:
    def test_sensitivity_grid(self):
        output = run_sweep(_spec("sweep", k_list=[100]))
        rows = _rows(output)
        assert [(r["d_ref_m"], r["c_variant"]) for r in rows] == [
            (15.0, "paper"), (15.0, "corrected"), (30.0, "paper"),
            (30.0, "corrected"), (42.4, "paper"), (42.4, "corrected"),
        ]
        for row in rows:
            assert row["status"] == "ok"
            assert row["matches_paper"] == matches_published(row["l_opt"], row["p_t_opt_dbw"])
            assert np.isfinite(row["ee_bits_per_j"])

    def test_match_rule(self):
        assert matches_published(18, 1.14)
        assert matches_published(16, 2.1)
        assert not matches_published(15, 1.14)
        assert not matches_published(18, 2.2)
