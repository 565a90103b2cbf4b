import hashlib
import logging

import numpy as np
import pytest
import torch

from app.models.beamforming import BeamformingSolution, RateReport
from app.models.channel import AngleState
from app.models.experiment import TRAINING_LOG_COLUMNS
from app.models.training import SubcarrierAllocation, TrainingMode, TrainingObjective
from app.models.waveform import PowerAllocation, PowerMode
from app.services.beam_service import beam_service
from app.services.experiment_service import experiment_service
from app.services.fisher_service import fisher_service
from app.services.training_service import training_service
from app.services.waveform_service import waveform_service
from app.utils.errors import InvalidParameterError
from app.tests.scenarios import small_config


def _networks(cfg, rng):
    t = cfg.training
    return training_service.build_networks(
        t.encoder, cfg.scenario.n_users, cfg.geometry.n_tx, rng, t.msg_alphabet, t.hidden, t.tt_out_dim, t.tt_rank
    )


def _train(cfg, **overrides):
    ctx = experiment_service.prepare_trial(cfg, cfg.sweep.axis, 0)
    rng = ctx.streams["training"]
    nets = _networks(cfg, rng)
    train_cfg = experiment_service.train_config(cfg, **overrides)
    if cfg.training.mode == TrainingMode.ALGORITHM1:
        outcome = training_service.train_algorithm1(train_cfg, ctx.channel, ctx.csi, nets, rng, ctx.scenario)
    else:
        outcome = training_service.multicarrier_train(
            train_cfg, ctx.channel, ctx.csi, nets, None, rng, ctx.scenario
        )
    return ctx, outcome


def _stage2_inputs(cfg):
    ctx = experiment_service.prepare_trial(cfg, cfg.sweep.axis, 0)
    K = cfg.scenario.n_users
    users = beam_service.zf_beams(ctx.csi.h_hat)
    rng = ctx.streams["design"]
    fj = np.stack(
        [beam_service.random_null_beams(beam_service.null_basis(ctx.csi.h_hat[n]), 1, rng)[0] for n in range(users.shape[0])]
    )
    pa = training_service.initial_power(K, ctx.scenario, cfg.power.jam_fraction)
    return ctx, BeamformingSolution(user_beams=users, fj_beam=fj, pa=pa)


class TestAllocationAndFeatures:
    def test_nonoverlap_split(self):
        alloc = training_service.nonoverlap_allocate(10, 0.25)
        assert alloc.comm_set == (0, 1, 2)
        assert alloc.sense_set == tuple(range(3, 10))
        assert training_service.nonoverlap_allocate(4, 0.0).comm_set == ()
        assert training_service.nonoverlap_allocate(4, 1.0).sense_set == ()

    def test_invalid_fraction(self):
        with pytest.raises(InvalidParameterError):
            training_service.nonoverlap_allocate(4, 1.5)

    def test_overlapping_sets_rejected(self):
        with pytest.raises(ValueError):
            SubcarrierAllocation(n_sub=3, comm_set=(0, 1), sense_set=(1, 2))

    def test_feature_vector_layout(self, small_cfg):
        ctx = experiment_service.prepare_trial(small_cfg, small_cfg.sweep.axis, 0)
        pa = training_service.initial_power(2, ctx.scenario, 0.2)
        z = training_service.build_features(ctx.csi, pa, ctx.angles, 2, 4).values
        assert z.shape == (2 * 2 * 8 + 5,)
        np.testing.assert_array_equal(z[:16], ctx.csi.h_hat[2].real.ravel())
        assert z[-1] == pytest.approx(3 / 4)
        assert z[-3] == ctx.angles.theta_hat

    def test_feature_index_out_of_range(self, small_cfg):
        ctx = experiment_service.prepare_trial(small_cfg, small_cfg.sweep.axis, 0)
        pa = training_service.initial_power(2, ctx.scenario, 0.2)
        with pytest.raises(InvalidParameterError):
            training_service.build_features(ctx.csi, pa, AngleState(), 4, 4)

    def test_total_loss(self):
        user = np.array([[1.0, 0.5], [0.25, 0.0]])
        report = RateReport(
            user_rates=user, eve_rates=np.zeros_like(user), secrecy=user, sum_secrecy=1.75
        )
        loss = training_service.total_loss(
            report, np.array([0.1, 0.2]), np.array([0.3, 0.4]), 10.0, np.array([True, False])
        )
        assert loss == pytest.approx(-1.75 + 10.0 * 0.4)

    def test_total_loss_counts_user_rates_not_secrecy(self):
        report = RateReport(
            user_rates=np.array([[2.0]]), eve_rates=np.array([[1.5]]), secrecy=np.array([[0.5]]), sum_secrecy=0.5
        )
        assert training_service.total_loss(report, np.array([0.1]), np.array([0.2]), 0.0) == pytest.approx(-2.0)

    def test_total_loss_constant_crlb(self):
        zeros = np.zeros((2, 3))
        report = RateReport(user_rates=zeros, eve_rates=zeros, secrecy=zeros, sum_secrecy=0.0)
        c = np.full(3, 0.01)
        assert training_service.total_loss(report, c, c, 5.0) == pytest.approx(5.0 * 3 * 2 * 0.01)

    def test_initial_power_spares_comm_only_subcarriers(self):
        cfg = small_config(training__frac_comm_only=0.5)
        ctx = experiment_service.prepare_trial(cfg, cfg.sweep.axis, 0)
        pa = training_service.initial_power(2, ctx.scenario, 0.2)
        np.testing.assert_array_equal(pa.jam_power[:2], 0.0)
        assert np.all(pa.jam_power[2:] > 0)


    @pytest.mark.parametrize("mode", [PowerMode.AVERAGE, PowerMode.PER_SUBCARRIER])
    def test_step_budget_matches_enforce_power(self, small_cfg, mode):
        ctx = experiment_service.prepare_trial(small_cfg, small_cfg.sweep.axis, 0)
        scenario = ctx.scenario.model_copy(update={"power_mode": mode})
        rng = np.random.default_rng(4)
        N, n_tx, K = ctx.csi.h_hat.shape[0], ctx.csi.h_hat.shape[2], ctx.csi.h_hat.shape[1]
        users = 2.0 * beam_service.zf_beams(ctx.csi.h_hat)
        fj = rng.standard_normal((N, n_tx)) + 1j * rng.standard_normal((N, n_tx))
        p = np.abs(rng.standard_normal((K + 1, N))) * scenario.p_max
        pa = PowerAllocation(comm_power=p[:K], jam_power=p[K], p_max=scenario.p_max, mode=mode)
        expected = waveform_service.enforce_power(pa, BeamformingSolution(user_beams=users, fj_beam=fj, pa=pa))

        scaled = training_service._enforce_budget(
            torch.as_tensor(p), torch.as_tensor(users), torch.as_tensor(fj), scenario
        ).numpy()
        np.testing.assert_allclose(scaled[:K], expected.comm_power, rtol=1e-12)
        np.testing.assert_allclose(scaled[K], expected.jam_power, rtol=1e-12)

    def test_step_budget_leaves_feasible_rows(self, small_cfg):
        ctx = experiment_service.prepare_trial(small_cfg, small_cfg.sweep.axis, 0)
        users = beam_service.zf_beams(ctx.csi.h_hat)
        N = users.shape[0]
        fj = np.zeros((N, users.shape[1]), dtype=complex)
        fj[:, 0] = 1.0
        p = np.full((users.shape[2] + 1, N), 0.1)
        out = training_service._enforce_budget(
            torch.as_tensor(p), torch.as_tensor(users), torch.as_tensor(fj), ctx.scenario
        ).numpy()
        np.testing.assert_array_equal(out, p)

class TestStage2:
    def test_pool_selection_is_argmax_trace(self, small_cfg):
        ctx, beams = _stage2_inputs(small_cfg)
        pool = [np.random.default_rng(i).standard_normal(8) + 0j for i in range(5)]
        train_cfg = experiment_service.train_config(
            small_cfg, candidate_pool=pool, crlb0_theta=float("inf"), crlb0_phi=float("inf")
        )
        result = training_service.stage2_fj_optimization(
            train_cfg, ctx.channel, ctx.csi, beams, None, np.random.default_rng(0), ctx.scenario
        )
        for n in ctx.scenario.allocation.sense_set:
            basis = beam_service.null_basis(ctx.csi.h_hat[n])
            projected = [beam_service.project_to_null(c, basis) for c in pool]
            traces = [
                fisher_service.closed_form_estimate(ctx.scenario.sensing, c, float(beams.pa.jam_power[n])).trace
                for c in projected
            ]
            np.testing.assert_allclose(result.fj_beam[n], projected[int(np.argmax(traces))])
        assert result.feasible.all()
        assert len(result.log) == small_cfg.training.iters_stage2

    def test_everything_rejected_keeps_start_beam(self, small_cfg, caplog):
        ctx, beams = _stage2_inputs(small_cfg)
        train_cfg = experiment_service.train_config(small_cfg, crlb0_theta=1e-30, crlb0_phi=1e-30, reinit_after=2)
        with caplog.at_level(logging.WARNING):
            result = training_service.stage2_fj_optimization(
                train_cfg, ctx.channel, ctx.csi, beams, None, np.random.default_rng(0), ctx.scenario
            )
        np.testing.assert_array_equal(result.fj_beam, beams.fj_beam)
        assert not result.feasible.any()
        assert result.accepted_count == 0
        assert all(entry.accepted == 0 for entry in result.log)
        assert "reinitialising" in caplog.text

    def test_user_beams_frozen(self, small_cfg):
        ctx, beams = _stage2_inputs(small_cfg)
        before = hashlib.sha256(beams.user_beams.tobytes()).hexdigest()
        train_cfg = experiment_service.train_config(small_cfg)
        training_service.stage2_fj_optimization(
            train_cfg, ctx.channel, ctx.csi, beams, None, np.random.default_rng(0), ctx.scenario
        )
        assert hashlib.sha256(beams.user_beams.tobytes()).hexdigest() == before

    def test_accepted_beams_in_null_space(self, small_cfg):
        ctx, beams = _stage2_inputs(small_cfg)
        train_cfg = experiment_service.train_config(small_cfg, crlb0_theta=float("inf"), crlb0_phi=float("inf"))
        result = training_service.stage2_fj_optimization(
            train_cfg, ctx.channel, ctx.csi, beams, None, np.random.default_rng(0), ctx.scenario
        )
        for n in range(result.fj_beam.shape[0]):
            H = ctx.csi.h_hat[n]
            assert np.linalg.norm(H @ result.fj_beam[n]) <= 1e-8 * np.linalg.norm(H)


class TestTrainingRuns:
    def test_algorithm1_log_and_beams(self):
        cfg = small_config(training__mode="algorithm1")
        ctx, outcome = _train(cfg)
        assert len(outcome.log) == cfg.training.epochs_stage1 + cfg.training.iters_stage2
        assert all(np.isfinite(entry.loss) for entry in outcome.log[: cfg.training.epochs_stage1])
        np.testing.assert_allclose(np.linalg.norm(outcome.solution.user_beams, axis=1), 1.0, atol=1e-10)

    def test_multicarrier_null_space_and_budget(self, small_cfg):
        ctx, outcome = _train(small_cfg)
        solution = outcome.solution
        for n in range(solution.n_sub):
            H = ctx.csi.h_hat[n]
            assert np.linalg.norm(H @ solution.fj_beam[n]) <= 1e-8 * np.linalg.norm(H)
        powers = waveform_service.subcarrier_powers(solution.pa, solution)
        assert np.mean(powers) <= ctx.scenario.p_max * (1 + 1e-9)
        assert len(outcome.log) == small_cfg.training.epochs_stage1

    def test_multicarrier_is_deterministic(self, small_cfg):
        _, first = _train(small_cfg)
        _, second = _train(small_cfg)
        assert training_service.log_frame(first.log).equals(training_service.log_frame(second.log))
        np.testing.assert_array_equal(first.solution.fj_beam, second.solution.fj_beam)

    def test_comm_only_subcarriers_carry_no_jamming(self):
        cfg = small_config(training__frac_comm_only=0.5)
        _, outcome = _train(cfg)
        np.testing.assert_array_equal(outcome.solution.pa.jam_power[:2], 0.0)

    def test_worst_user_objective(self):
        cfg = small_config(training__objective=TrainingObjective.WORST_USER.value)
        _, outcome = _train(cfg)
        assert np.isfinite(outcome.log[-1].loss)

    def test_phase_noise_injection(self, small_cfg):
        _, outcome = _train(small_cfg, train_sigma_pn2=0.2)
        assert np.isfinite(outcome.log[-1].loss)

    def test_quantized_encoder(self, small_cfg):
        _, outcome = _train(small_cfg, quant_delta=0.01)
        for layer in outcome.encoder.tt_layers():
            for core in layer.cores:
                values = core.detach().numpy() / 0.01
                np.testing.assert_allclose(values, np.round(values), atol=1e-9)

    def test_log_file(self, small_cfg, tmp_path):
        _, outcome = _train(small_cfg)
        path = tmp_path / "training_log.csv"
        training_service.write_log(outcome.log, path)
        header = path.read_text(encoding="utf-8").splitlines()[0]
        assert header.split(",") == TRAINING_LOG_COLUMNS

    @pytest.mark.slow
    def test_stage1_converges_at_desk_scale(self):
        cfg = small_config(
            training__mode="algorithm1",
            training__epochs_stage1=200,
            training__batch=128,
            scenario__n_subcarriers=16,
        )
        ctx = experiment_service.prepare_trial(cfg, cfg.sweep.axis, 0)
        rng = ctx.streams["training"]
        stage1 = training_service.stage1_comm_training(
            experiment_service.train_config(cfg), ctx.channel, ctx.csi, _networks(cfg, rng), rng, ctx.scenario
        )
        losses = np.array([entry.loss for entry in stage1.log])
        smooth = np.convolve(losses, np.ones(20) / 20, mode="valid")
        assert smooth[-1] < smooth[0]
        secrecy = np.array([entry.sum_secrecy for entry in stage1.log])
        tail = secrecy[-50:]
        assert abs(tail[-10:].mean() - tail[:10].mean()) <= 0.05 * max(abs(tail.mean()), 1e-6)
