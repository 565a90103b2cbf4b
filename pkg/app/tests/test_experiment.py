import numpy as np
import pandas as pd
import pytest
from scipy import special

from app.models.beamforming import BeamformingSolution, BeamPolicy
from app.models.channel import ChannelRealization
from app.models.experiment import RESULT_COLUMNS, ExperimentResult, SweepAxis, SweepSpec, TrialRecord
from app.models.fisher import FimSource
from app.models.waveform import PowerAllocation
from app.services.beam_service import beam_service
from app.services.experiment_service import experiment_service
from app.tests.scenarios import small_config
from app.utils.errors import InvalidParameterError
from app.utils.linalg import crandn


def _single_user_link(jam_power: float = 0.0, n_eve: int = 1):
    rng = np.random.default_rng(8)
    h = np.array([[[1.0 + 0j, 0.0, 0.0, 0.0]]])
    ch = ChannelRealization(h_users=h, h_eve=crandn(rng, (1, 4, n_eve)))
    users = np.zeros((1, 4, 1), dtype=np.complex128)
    users[0, 0, 0] = 1.0
    fj = np.zeros((1, 4), dtype=np.complex128)
    fj[0, 1:] = 1.0 / np.sqrt(3.0)
    pa = PowerAllocation(comm_power=np.ones((1, 1)), jam_power=np.array([jam_power]), p_max=1.0)
    return ch, BeamformingSolution(user_beams=users, fj_beam=fj, pa=pa)


def _record(value, trial, secrecy, feasible=1):
    return TrialRecord(
        experiment_id="t",
        axis_name="rho_csi",
        axis_value=value,
        trial=trial,
        seed=trial,
        sum_secrecy=secrecy,
        worst_user_secrecy=secrecy / 2,
        bler_user_mean=0.0,
        bler_eve=1.0,
        crlb_theta_db=-40.0,
        crlb_phi_db=-40.0,
        feasible=feasible,
    )


class TestBlerOracle:
    @pytest.mark.parametrize("es_n0_db", [0.0, 5.0, 10.0])
    def test_matches_analytic_qpsk(self, es_n0_db):
        ch, beams = _single_user_link()
        block_len, blocks = 10, 100_000
        bler_user, _ = experiment_service.bler_montecarlo(
            ch, beams, beams.pa, es_n0_db, block_len, blocks, np.random.default_rng(1)
        )
        bit_error = 0.5 * special.erfc(np.sqrt(10 ** (es_n0_db / 10)) / np.sqrt(2.0))
        ser = 1.0 - (1.0 - bit_error) ** 2
        expected = 1.0 - (1.0 - ser) ** block_len
        sigma = np.sqrt(expected * (1 - expected) / blocks)
        assert abs(bler_user[0] - expected) <= 3 * sigma

    def test_jamming_blinds_eve_not_user(self):
        ch, on = _single_user_link(jam_power=1000.0)
        _, off = _single_user_link(jam_power=0.0)
        blocks = 2000
        user_on, eve_on = experiment_service.bler_montecarlo(ch, on, on.pa, 10.0, 64, blocks, np.random.default_rng(2))
        user_off, _ = experiment_service.bler_montecarlo(ch, off, off.pa, 10.0, 64, blocks, np.random.default_rng(2))
        assert eve_on >= 0.95
        se = np.sqrt(max(user_off[0] * (1 - user_off[0]), 1e-12) / blocks)
        assert abs(user_on[0] - user_off[0]) <= 2 * se

    def test_snr_axis_independent_of_noise_scale(self):
        ch, beams = _single_user_link()
        scaled = ch.model_copy(update={"sigma_c2": 4.0, "sigma_e2": 4.0})
        unit_user, unit_eve = experiment_service.bler_montecarlo(
            ch, beams, beams.pa, 5.0, 16, 500, np.random.default_rng(3)
        )
        scaled_user, scaled_eve = experiment_service.bler_montecarlo(
            scaled, beams, beams.pa, 5.0, 16, 500, np.random.default_rng(3)
        )
        np.testing.assert_array_equal(unit_user, scaled_user)
        assert unit_eve == scaled_eve

    def test_zero_gain_user_loses_every_block(self):
        ch, beams = _single_user_link()
        silent = beams.model_copy(update={"pa": beams.pa.model_copy(update={"comm_power": np.zeros((1, 1))})})
        bler_user, _ = experiment_service.bler_montecarlo(
            ch, silent, silent.pa, 10.0, 8, 20, np.random.default_rng(4)
        )
        assert bler_user[0] == 1.0

    def test_rejects_empty_blocks(self):
        ch, beams = _single_user_link()
        with pytest.raises(InvalidParameterError):
            experiment_service.bler_montecarlo(ch, beams, beams.pa, 10.0, 0, 1, np.random.default_rng(0))


class TestTrialPipeline:
    def test_prefix_property_over_subcarriers(self):
        small = experiment_service.prepare_trial(small_config(scenario__n_subcarriers=4), SweepAxis.N_SUBCARRIERS, 0)
        large = experiment_service.prepare_trial(small_config(scenario__n_subcarriers=8), SweepAxis.N_SUBCARRIERS, 0)
        np.testing.assert_array_equal(small.channel.h_users, large.channel.h_users[:4])
        assert small.seed == large.seed

    def test_design_never_sees_evaluation_eve(self, small_cfg):
        ctx = experiment_service.prepare_trial(small_cfg, small_cfg.sweep.axis, 0)
        assert not np.allclose(ctx.scenario.design_eve[0], ctx.channel.h_eve)

    def test_kappa_policy_beams_in_null_space(self, small_cfg):
        ctx = experiment_service.prepare_trial(small_cfg, small_cfg.sweep.axis, 0)
        solution, _ = experiment_service.design(small_cfg, ctx, BeamPolicy.ZF_FJ)
        for n in range(solution.n_sub):
            H = ctx.csi.h_hat[n]
            assert np.linalg.norm(H @ solution.fj_beam[n]) <= 1e-8 * np.linalg.norm(H)
        assert set(np.round(solution.pa.jam_power / ctx.scenario.p_max, 12)) <= {0.0, 0.2, 0.5}

    def test_fj_off_ablation(self):
        cfg = small_config(run__policy="fj_off")
        record = experiment_service.run_trial(cfg, cfg.sweep.axis, 0.0, 0)
        assert record.crlb_theta_db == float("inf")
        assert record.feasible == 0

    def test_fj_off_feasible_without_budget(self):
        cfg = small_config(run__policy="fj_off", sensing__crlb0_theta_db=float("inf"), sensing__crlb0_phi_db=float("inf"))
        assert experiment_service.run_trial(cfg, cfg.sweep.axis, 0.0, 0).feasible == 1

    def test_empty_sensing_set(self):
        cfg = small_config(training__frac_comm_only=1.0)
        record = experiment_service.run_trial(cfg, cfg.sweep.axis, 0.0, 0)
        assert record.crlb_theta_db == float("inf")
        assert record.feasible == 0

    def test_learned_policy_trial(self):
        cfg = small_config(run__policy="learned")
        record = experiment_service.run_trial(cfg, cfg.sweep.axis, 0.0, 0)
        assert np.isfinite(record.sum_secrecy)


class TestSweeps:
    @pytest.fixture
    def spec(self):
        return SweepSpec(axis=SweepAxis.RHO_CSI, points=[0.0, 0.1], trials=2, seed=7)

    def test_sweep_is_deterministic_across_threads(self, small_cfg, spec):
        serial = experiment_service.run_sweep(spec, small_cfg, threads=1).to_frame()
        parallel = experiment_service.run_sweep(spec, small_cfg, threads=2).to_frame()
        pd.testing.assert_frame_equal(serial, parallel)
        assert list(serial.columns) == RESULT_COLUMNS
        assert len(serial) == 4

    def test_points_share_trial_seeds(self, small_cfg, spec):
        frame = experiment_service.run_sweep(spec, small_cfg).to_frame()
        seeds = frame.pivot(index="trial", columns="axis_value", values="seed")
        assert (seeds[0.0] == seeds[0.1]).all()

    def test_write_results(self, small_cfg, spec, tmp_path):
        result = experiment_service.run_sweep(spec, small_cfg)
        path = experiment_service.write_results(result, tmp_path / "results.csv")
        frame = pd.read_csv(path)
        assert list(frame.columns) == RESULT_COLUMNS
        assert sorted(frame["axis_value"].unique()) == [0.0, 0.1]

    def test_tradeoff_needs_budget_axis(self, small_cfg, spec):
        with pytest.raises(InvalidParameterError):
            experiment_service.crlb_secrecy_tradeoff(spec, small_cfg)

    def test_tradeoff_feasibility_grows_with_looser_budget(self, small_cfg):
        spec = SweepSpec(axis=SweepAxis.CRLB_BUDGET_DB, points=[-60.0, -40.0, -20.0, 0.0], trials=2, seed=7)
        frame = experiment_service.crlb_secrecy_tradeoff(spec, small_cfg).to_frame()
        per_trial = frame.pivot(index="trial", columns="axis_value", values="feasible")
        # same draws at every budget: once feasible, a trial stays feasible as the budget loosens
        assert (np.diff(per_trial.to_numpy(), axis=1) >= 0).all()
        assert per_trial[0.0].all()

    def test_robustness_pairs(self):
        cfg = small_config(sweep__trials=1)
        spec = SweepSpec(axis=SweepAxis.PN_VARIANCE, points=[0.0, 0.2], trials=1, seed=7)
        results = experiment_service.impairment_robustness(spec, cfg)
        assert set(results) == {"robust", "baseline"}
        assert results["robust"].experiment_id.endswith("-robust")
        assert len(results["baseline"].records) == 2

    def test_summaries(self):
        records = [_record(0.0, t, s) for t, s in enumerate([1.0, 2.0, 3.0])] + [_record(0.1, 0, 1.0, 0)]
        result = ExperimentResult(experiment_id="t", axis=SweepAxis.RHO_CSI, records=records)
        first, second = result.summaries()
        assert first.mean["sum_secrecy"] == pytest.approx(2.0)
        assert first.stderr["sum_secrecy"] == pytest.approx(1.0 / np.sqrt(3.0))
        assert second.infeasible and second.trials == 1
        np.testing.assert_array_equal(result.raw("sum_secrecy", 0.0), [1.0, 2.0, 3.0])

    def test_trend_gate(self):
        records = [_record(0.0, t, 1.0) for t in range(3)] + [_record(0.1, t, 2.0) for t in range(3)]
        result = ExperimentResult(experiment_id="t", axis=SweepAxis.RHO_CSI, records=records)
        assert experiment_service.trend_gate(result, "sum_secrecy", increasing=True)
        assert not experiment_service.trend_gate(result, "sum_secrecy", increasing=False)
        # rho_csi declares a falling trend
        assert not experiment_service.sweep_gate(result)

    def test_trend_gate_tolerates_noise_within_slack(self):
        records = [_record(0.0, t, s) for t, s in enumerate([1.0, 3.0, 5.0])]
        records += [_record(0.1, t, s) for t, s in enumerate([1.5, 3.5, 5.5])]
        result = ExperimentResult(experiment_id="t", axis=SweepAxis.RHO_CSI, records=records)
        assert experiment_service.sweep_gate(result)

    def test_axis_without_trend_always_passes(self):
        records = [_record(0.0, t, 5.0) for t in range(2)] + [_record(10.0, t, 0.0) for t in range(2)]
        result = ExperimentResult(experiment_id="t", axis=SweepAxis.SNR_DB, records=records)
        assert experiment_service.sweep_gate(result)

    def test_robustness_gate(self):
        def result(start, end):
            records = [_record(0.0, t, start) for t in range(2)] + [_record(0.2, t, end) for t in range(2)]
            return ExperimentResult(experiment_id="t", axis=SweepAxis.PN_VARIANCE, records=records)

        robust, baseline = result(3.0, 2.5), result(3.0, 1.0)
        assert experiment_service.degradation(robust) == pytest.approx(0.5)
        assert experiment_service.robustness_gate({"robust": robust, "baseline": baseline})
        assert not experiment_service.robustness_gate({"robust": baseline, "baseline": robust})

    @pytest.mark.slow
    def test_jamming_beats_no_jamming(self):
        on_values, off_values = [], []
        for trial in range(50):
            on = experiment_service.run_trial(small_config(power__p_max_db=20.0), SweepAxis.SNR_DB, 20.0, trial)
            off = experiment_service.run_trial(
                small_config(power__p_max_db=20.0, run__policy="fj_off"), SweepAxis.SNR_DB, 20.0, trial
            )
            on_values.append(on.sum_secrecy)
            off_values.append(off.sum_secrecy)
        assert np.median(on_values) >= np.median(off_values)

    @pytest.mark.slow
    def test_secrecy_does_not_grow_with_csi_error(self):
        cfg = small_config(sweep__trials=40)
        spec = SweepSpec(axis=SweepAxis.RHO_CSI, points=[0.0, 0.05, 0.1, 0.2], trials=40, seed=7)
        summaries = experiment_service.run_sweep(spec, cfg, threads=4).summaries()
        for better, worse in zip(summaries, summaries[1:]):
            slack = 2 * max(better.stderr["sum_secrecy"], worse.stderr["sum_secrecy"])
            assert worse.mean["sum_secrecy"] <= better.mean["sum_secrecy"] + slack

    @pytest.mark.slow
    def test_worst_user_secrecy_grows_with_crlb_budget(self):
        cfg = small_config(sweep__trials=20)
        spec = SweepSpec(axis=SweepAxis.CRLB_BUDGET_DB, points=[-60.0, -40.0, -20.0, 0.0], trials=20, seed=7)
        result = experiment_service.crlb_secrecy_tradeoff(spec, cfg, threads=4)
        assert experiment_service.trend_gate(result, "worst_user_secrecy", increasing=True)
        assert experiment_service.sweep_gate(result)

    @pytest.mark.slow
    def test_worst_user_secrecy_grows_with_subcarriers(self):
        cfg = small_config(sweep__trials=20)
        spec = SweepSpec(axis=SweepAxis.N_SUBCARRIERS, points=[1, 4, 16], trials=20, seed=7)
        result = experiment_service.run_sweep(spec, cfg, threads=4)
        assert experiment_service.sweep_gate(result)

    @pytest.mark.slow
    def test_phase_noise_training_degrades_less(self):
        cfg = small_config(sweep__trials=20, training__epochs_stage1=60, impairments__train_sigma_pn2=0.2)
        spec = SweepSpec(axis=SweepAxis.PN_VARIANCE, points=[0.0, 0.2], trials=20, seed=7)
        results = experiment_service.impairment_robustness(spec, cfg, threads=4)
        assert experiment_service.robustness_gate(results)


class TestFimPipelineChoice:
    def test_closed_form_by_default(self, small_cfg):
        ctx = experiment_service.prepare_trial(small_cfg, small_cfg.sweep.axis, 0)
        pipeline = experiment_service.fim_pipeline(small_cfg, np.random.default_rng(0))
        v = beam_service.random_null_beams(beam_service.null_basis(ctx.csi.h_hat[0]), 1, np.random.default_rng(1))[0]
        assert pipeline(ctx.scenario.sensing, v, 2.0).source == FimSource.CLOSED_FORM

    def test_nonparametric_selected_from_config(self):
        cfg = small_config(
            sensing__fim_pipeline="nonparametric", fisher__steps=20, fisher__n_samples=200, fisher__batch=32, fisher__hidden=8
        )
        ctx = experiment_service.prepare_trial(cfg, cfg.sweep.axis, 0)
        pipeline = experiment_service.fim_pipeline(cfg, np.random.default_rng(0))
        v = beam_service.random_null_beams(beam_service.null_basis(ctx.csi.h_hat[0]), 1, np.random.default_rng(1))[0]
        assert pipeline(ctx.scenario.sensing, v, 2.0).source == FimSource.NONPARAMETRIC

    @pytest.mark.slow
    def test_learned_design_with_nonparametric_screening(self):
        cfg = small_config(
            run__policy="learned",
            sensing__fim_pipeline="nonparametric",
            fisher__steps=30,
            fisher__n_samples=300,
            fisher__batch=64,
            fisher__hidden=16,
        )
        ctx = experiment_service.prepare_trial(cfg, cfg.sweep.axis, 0)
        solution, feasible = experiment_service.design_learned(cfg, ctx)
        assert feasible.shape == (solution.n_sub,)
        for n in ctx.scenario.allocation.sense_set:
            H = ctx.csi.h_hat[n]
            assert np.linalg.norm(H @ solution.fj_beam[n]) <= 1e-8 * np.linalg.norm(H)
        record = experiment_service.run_trial(cfg, cfg.sweep.axis, 0.0, 0)
        assert np.isfinite(record.sum_secrecy)
