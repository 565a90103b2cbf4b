"""
Monte Carlo experiment engine: BLER simulation, trial pipeline, sweeps over
one scenario axis, the CRLB/secrecy trade-off and the phase-noise robustness
comparison.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy import linalg

from app.models.beamforming import BeamformingSolution, BeamPolicy
from app.models.channel import AngleState, ArrayGeometry
from app.models.experiment import (
    ExperimentResult,
    SweepAxis,
    SweepSpec,
    TrialContext,
    TrialRecord,
)
from app.models.fisher import DiscriminatorConfig, FimPipelineKind, from_db, to_db
from app.models.run_config import RunConfig
from app.models.training import TrainConfig, TrainingMode, TrainingScenario
from app.models.waveform import ImpairmentParams, PowerAllocation, PowerMode
from app.services.beam_service import FimPipeline, beam_service, closed_form_pipeline, nonparametric_pipeline
from app.services.channel_service import channel_service
from app.services.fisher_service import fisher_service
from app.services.rate_service import rate_service
from app.services.training_service import training_service
from app.services.waveform_service import waveform_service
from app.utils.errors import InvalidParameterError
from app.utils.linalg import crandn
from app.utils.random_streams import child_streams, generator_from_seed, seed_word, trial_seed_sequence

logger = logging.getLogger(__name__)

# axis -> (config section, field)
AXIS_FIELDS: Dict[SweepAxis, Tuple[Tuple[str, str], ...]] = {
    SweepAxis.SNR_DB: (("power", "p_max_db"),),
    SweepAxis.RHO_CSI: (("scenario", "rho_csi"),),
    SweepAxis.CRLB_BUDGET_DB: (("sensing", "crlb0_theta_db"), ("sensing", "crlb0_phi_db")),
    SweepAxis.PN_VARIANCE: (("impairments", "sigma_pn2"),),
    SweepAxis.FRAC_COMM_ONLY: (("training", "frac_comm_only"),),
    SweepAxis.N_SUBCARRIERS: (("scenario", "n_subcarriers"),),
}

# axis -> (metric, expected to increase along the axis)
SWEEP_TRENDS: Dict[SweepAxis, Tuple[str, bool]] = {
    SweepAxis.RHO_CSI: ("sum_secrecy", False),
    SweepAxis.CRLB_BUDGET_DB: ("sum_secrecy", True),
    SweepAxis.N_SUBCARRIERS: ("worst_user_secrecy", True),
}


class ExperimentService:
    # ---- configuration helpers -------------------------------------------

    def apply_axis(self, cfg: RunConfig, axis: SweepAxis, value: float) -> RunConfig:
        for section, key in AXIS_FIELDS[SweepAxis(axis)]:
            field_value = int(round(value)) if axis == SweepAxis.N_SUBCARRIERS else float(value)
            cfg = cfg.with_value(section, key, field_value)
        return cfg

    def axis_value(self, cfg: RunConfig, axis: SweepAxis) -> float:
        section, key = AXIS_FIELDS[SweepAxis(axis)][0]
        return float(getattr(getattr(cfg, section), key))

    def geometry(self, cfg: RunConfig) -> ArrayGeometry:
        g = cfg.geometry
        grid = (g.tx_grid_x, g.tx_grid_y) if g.tx_grid_x and g.tx_grid_y else None
        return ArrayGeometry(
            n_tx=g.n_tx,
            n_rx=g.n_rx,
            n_eve=g.n_eve,
            spacing=g.spacing,
            tx_grid=grid,
            mode=g.steering_mode,
            phase_reference=g.phase_reference,
        )

    def impairments(self, cfg: RunConfig) -> ImpairmentParams:
        imp = cfg.impairments
        return ImpairmentParams(
            sigma_pn2=imp.sigma_pn2,
            eps_iq=imp.eps_iq,
            dtheta_iq=float(np.deg2rad(imp.dtheta_iq_deg)),
            per_antenna=imp.per_antenna,
        )

    def train_config(self, cfg: RunConfig, **overrides) -> TrainConfig:
        t = cfg.training
        values = dict(
            epochs_stage1=t.epochs_stage1,
            iters_stage2=t.iters_stage2,
            batch=t.batch,
            step_size=t.step_size,
            lambda_crlb=t.lambda_crlb,
            crlb0_theta=from_db(cfg.sensing.crlb0_theta_db),
            crlb0_phi=from_db(cfg.sensing.crlb0_phi_db),
            msg_alphabet=t.msg_alphabet,
            candidate_count=t.candidate_count,
            reinit_after=t.reinit_after,
            fj_step=t.fj_step,
            rate_weight=t.rate_weight,
            jam_fraction=cfg.power.jam_fraction,
            objective=t.objective,
            eve_draws=t.eve_draws,
            quant_delta=t.quant_delta,
        )
        values.update(overrides)
        return TrainConfig(**values)

    def thresholds(self, cfg: RunConfig) -> Tuple[float, float]:
        return from_db(cfg.sensing.crlb0_theta_db), from_db(cfg.sensing.crlb0_phi_db)

    def fim_pipeline(self, cfg: RunConfig, rng: np.random.Generator, threads: int = 1) -> FimPipeline:
        """FIM source used when screening jamming beams during design"""
        convention = cfg.sensing.convention
        if cfg.sensing.fim_pipeline == FimPipelineKind.CLOSED_FORM:
            return closed_form_pipeline(convention)
        f = cfg.fisher
        net_cfg = DiscriminatorConfig(
            hidden=f.hidden,
            steps=f.steps,
            step_size=f.step_size,
            batch=f.batch,
            n_samples=f.n_samples,
            threads=threads,
        )
        return nonparametric_pipeline(
            net_cfg, rng, f.scale, f.perturbations, f.design, convention, imp=self.impairments(cfg)
        )

    # ---- trial pipeline ---------------------------------------------------

    def prepare_trial(self, cfg: RunConfig, axis: SweepAxis, trial: int) -> TrialContext:
        """Draw channel, Eve sets, CSI error and angle estimates from the trial's streams"""
        seq = trial_seed_sequence(cfg.seed, SweepAxis(axis).index, trial)
        streams = child_streams(seq)
        sc = cfg.scenario
        geom = self.geometry(cfg)

        ch = channel_service.gen_rayleigh(
            geom,
            sc.n_users,
            sc.n_subcarriers,
            streams["channel"],
            sigma_c2=sc.sigma_c2,
            sigma_e2=sc.sigma_e2,
            sigma_s2=sc.sigma_s2,
            alpha=complex(sc.alpha_re, sc.alpha_im),
        )
        eve_set = None
        if sc.eve_draws > 1:
            eve_set = channel_service.sample_eve_set(geom, sc.n_subcarriers, sc.eve_draws - 1, streams["eve"])
        design_eve = channel_service.sample_eve_set(
            geom, sc.n_subcarriers, sc.design_eve_draws, streams["design"]
        )
        csi = channel_service.apply_csi_error(ch, sc.rho_csi, streams["csi"])
        angles = channel_service.perturb_angles(
            AngleState(
                theta=float(np.deg2rad(sc.theta_deg)),
                phi=float(np.deg2rad(sc.phi_deg)),
                sigma_theta2=sc.sigma_theta2,
                sigma_phi2=sc.sigma_phi2,
            ),
            streams["angles"],
        )

        snr_sense = from_db(cfg.sensing.snr_sense_db)
        design_sensing = fisher_service.sensing_model(
            geom, angles.theta_hat, angles.phi_hat, sc.sigma_s2, cfg.sensing.scaling, snr_sense
        )
        true_sensing = fisher_service.sensing_model(
            geom, angles.theta, angles.phi, sc.sigma_s2, cfg.sensing.scaling, snr_sense
        )
        scenario = TrainingScenario(
            geometry=geom,
            angles=angles,
            sensing=design_sensing,
            allocation=training_service.nonoverlap_allocate(sc.n_subcarriers, cfg.training.frac_comm_only),
            design_eve=design_eve,
            p_max=from_db(cfg.power.p_max_db),
            power_mode=cfg.power.mode,
            convention=cfg.sensing.convention,
            tau_bar=sc.tau_bar,
            log_base=sc.log_base,
        )
        return TrialContext(
            trial=trial,
            seed=seed_word(seq),
            channel=ch,
            csi=csi,
            angles=angles,
            eve_set=eve_set,
            scenario=scenario,
            true_sensing=true_sensing,
            streams=streams,
        )

    def _subcarrier_budget(self, scenario: TrainingScenario) -> float:
        if scenario.power_mode == PowerMode.PER_SUBCARRIER:
            return scenario.p_max / scenario.allocation.n_sub
        return scenario.p_max

    def _subcarrier_secrecy(
        self,
        ctx: TrialContext,
        n: int,
        user_beams: np.ndarray,
        v: np.ndarray,
        kappa: float,
    ) -> float:
        """Design secrecy of one subcarrier against the transmitter's own Eve draws"""
        sc = ctx.scenario
        budget = self._subcarrier_budget(sc)
        K = user_beams.shape[1]
        pa = PowerAllocation(
            comm_power=np.full((K, 1), (1.0 - kappa) * budget / K),
            jam_power=np.array([kappa * budget]),
            p_max=sc.p_max,
            mode=sc.power_mode,
        )
        design = ctx.channel.model_copy(
            update={"h_users": ctx.csi.h_hat[n : n + 1], "h_eve": sc.design_eve[0, n : n + 1]}
        )
        extra = sc.design_eve[1:, n : n + 1] if sc.design_eve.shape[0] > 1 else None
        solution = BeamformingSolution(user_beams=user_beams[None], fj_beam=v[None], pa=pa)
        return rate_service.evaluate(design, solution, extra, sc.tau_bar, sc.log_base).sum_secrecy

    def design_kappa(
        self, cfg: RunConfig, ctx: TrialContext, policy: BeamPolicy
    ) -> Tuple[BeamformingSolution, np.ndarray]:
        """
        Zero-forcing users with a per-subcarrier jamming fraction kappa from the
        grid, chosen to maximise design secrecy among CRLB-feasible choices.
        With nothing feasible the largest kappa and the max-trace beam are kept
        and the subcarrier is flagged infeasible.
        """
        sc = ctx.scenario
        policy = BeamPolicy(policy)
        rng = ctx.streams["design"]
        thresholds = self.thresholds(cfg)
        pipeline = self.fim_pipeline(cfg, rng)
        M = fisher_service.trace_operator(sc.sensing)
        budget = self._subcarrier_budget(sc)

        user_beams = beam_service.zf_beams(ctx.csi.h_hat)
        N, n_tx, K = user_beams.shape
        fj = np.zeros((N, n_tx), dtype=np.complex128)
        kappa = np.zeros(N)
        feasible = np.ones(N, dtype=bool)
        sense = set(sc.allocation.sense_set)

        for n in range(N):
            basis = beam_service.null_basis(ctx.csi.h_hat[n])
            if policy == BeamPolicy.ISOTROPIC:
                candidates = beam_service.random_null_beams(basis, 1, rng)
            else:
                candidates = [beam_service.principal_null_beam(basis, M)]
                candidates += beam_service.random_null_beams(basis, cfg.training.candidate_count, rng)

            if policy == BeamPolicy.FJ_OFF or n not in sense:
                fj[n] = candidates[0]
                if n in sense:
                    feasible[n] = all(np.isinf(thresholds))
                continue

            best: Optional[Tuple[float, float, int]] = None
            for k_value in cfg.power.kappa_grid:
                index, _, ok = beam_service.select_fj_beam(
                    candidates, sc.sensing, k_value * budget, thresholds, pipeline
                )
                if not ok:
                    continue
                value = self._subcarrier_secrecy(ctx, n, user_beams[n], candidates[index], k_value)
                if best is None or value > best[0]:
                    best = (value, k_value, index)

            if best is None:
                k_value = max(cfg.power.kappa_grid)
                index, _, _ = beam_service.select_fj_beam(
                    candidates, sc.sensing, k_value * budget, thresholds, pipeline
                )
                feasible[n] = False
                best = (float("nan"), k_value, index)
            kappa[n] = best[1]
            fj[n] = candidates[best[2]]

        if not feasible.all():
            logger.warning(
                f"Trial {ctx.trial}: CRLB budget infeasible on {int((~feasible).sum())} of "
                f"{len(sense)} sensing subcarrier(s)"
            )
        pa = PowerAllocation(
            comm_power=np.tile((1.0 - kappa) * budget / K, (K, 1)),
            jam_power=kappa * budget,
            p_max=sc.p_max,
            mode=sc.power_mode,
        )
        solution = BeamformingSolution(user_beams=user_beams, fj_beam=fj, pa=pa)
        return solution.model_copy(update={"pa": waveform_service.enforce_power(pa, solution)}), feasible

    def design_learned(
        self, cfg: RunConfig, ctx: TrialContext, train_sigma_pn2: float = 0.0
    ) -> Tuple[BeamformingSolution, np.ndarray]:
        rng = ctx.streams["training"]
        t = cfg.training
        nets = training_service.build_networks(
            t.encoder,
            cfg.scenario.n_users,
            cfg.geometry.n_tx,
            rng,
            t.msg_alphabet,
            t.hidden,
            t.tt_out_dim,
            t.tt_rank,
        )
        train_cfg = self.train_config(cfg, train_sigma_pn2=train_sigma_pn2)
        pipeline = self.fim_pipeline(cfg, ctx.streams["design"])
        if t.mode == TrainingMode.ALGORITHM1:
            outcome = training_service.train_algorithm1(
                train_cfg, ctx.channel, ctx.csi, nets, rng, ctx.scenario, pipeline
            )
        else:
            outcome = training_service.multicarrier_train(
                train_cfg, ctx.channel, ctx.csi, nets, pipeline, rng, ctx.scenario
            )
        return outcome.solution, outcome.feasible

    def design(
        self, cfg: RunConfig, ctx: TrialContext, policy: Optional[BeamPolicy] = None
    ) -> Tuple[BeamformingSolution, np.ndarray]:
        policy = BeamPolicy(policy or cfg.run.policy)
        if policy == BeamPolicy.LEARNED:
            return self.design_learned(cfg, ctx)
        return self.design_kappa(cfg, ctx, policy)

    def reported_crlb(self, ctx: TrialContext, solution: BeamformingSolution) -> Tuple[float, float]:
        """CRLBs at the true angles from the Fisher information summed over the sensing set"""
        sense = list(ctx.scenario.allocation.sense_set)
        if not sense:
            return float("inf"), float("inf")
        J = sum(
            fisher_service.fim_matrix_closed_form(
                ctx.true_sensing, solution.fj_beam[n], float(solution.pa.jam_power[n]), ctx.channel.alpha
            )
            for n in sense
        )
        return fisher_service.crlb(J, ctx.scenario.convention)

    def evaluate(
        self,
        cfg: RunConfig,
        ctx: TrialContext,
        solution: BeamformingSolution,
        feasible: np.ndarray,
        axis: SweepAxis,
        axis_value: float,
        impairment_rng: Optional[np.random.Generator] = None,
        experiment_id: Optional[str] = None,
    ) -> TrialRecord:
        imp = self.impairments(cfg)
        impairment_rng = impairment_rng or ctx.streams["impairments"]
        distorted = waveform_service.distort_beams(solution, imp, impairment_rng)
        sc = cfg.scenario
        report = rate_service.evaluate(ctx.channel, distorted, ctx.eve_set, sc.tau_bar, sc.log_base)
        snr_db = cfg.power.p_max_db - 10.0 * np.log10(sc.sigma_c2)
        bler_user, bler_eve = self.bler_montecarlo(
            ctx.channel, distorted, distorted.pa, snr_db, cfg.sweep.block_len, cfg.sweep.bler_blocks, ctx.streams["noise"]
        )
        crlb_theta, crlb_phi = self.reported_crlb(ctx, solution)
        ok = bool(np.all(feasible))
        if not ctx.scenario.allocation.sense_set:
            ok = ok and all(np.isinf(self.thresholds(cfg)))
        return TrialRecord(
            experiment_id=experiment_id or cfg.output.experiment_id,
            axis_name=SweepAxis(axis).value,
            axis_value=float(axis_value),
            trial=ctx.trial,
            seed=ctx.seed,
            sum_secrecy=report.sum_secrecy,
            worst_user_secrecy=report.worst_user_secrecy,
            bler_user_mean=float(np.mean(bler_user)),
            bler_eve=bler_eve,
            crlb_theta_db=to_db(crlb_theta),
            crlb_phi_db=to_db(crlb_phi),
            feasible=int(ok),
        )

    def run_trial(
        self, cfg: RunConfig, axis: SweepAxis, axis_value: float, trial: int
    ) -> TrialRecord:
        point_cfg = self.apply_axis(cfg, axis, axis_value)
        ctx = self.prepare_trial(point_cfg, axis, trial)
        solution, feasible = self.design(point_cfg, ctx)
        return self.evaluate(point_cfg, ctx, solution, feasible, axis, axis_value)

    # ---- BLER ------------------------------------------------------------

    def bler_montecarlo(
        self,
        ch,
        beams: BeamformingSolution,
        pa: PowerAllocation,
        snr_db: float,
        block_len: int,
        trials: int,
        rng: np.random.Generator,
    ) -> Tuple[np.ndarray, float]:
        """
        Per-user and Eve block error rates over `trials` blocks on every
        subcarrier. The user noise variance is p_max 10^(-snr_db/10), so snr_db
        is P_max / sigma_c2; Eve's noise is that variance times sigma_e2 /
        sigma_c2. Users equalise their own stream and slice to the nearest QPSK
        point; a user whose effective gain is zero loses every block. Eve runs
        an LMMSE receiver knowing her jamming-plus-noise covariance.
        """
        if block_len < 1 or trials < 1:
            raise InvalidParameterError("block_len and trials must be >= 1")
        noise = pa.p_max * 10.0 ** (-snr_db / 10.0)
        noise_eve = noise * ch.sigma_e2 / ch.sigma_c2
        K, N = pa.comm_power.shape
        B = trials * block_len
        user_errors = np.zeros(K)
        eve_errors = np.zeros(K)

        for n in range(N):
            F = beams.user_beams[n]
            v = beams.fj_beam[n]
            amp = np.sqrt(pa.comm_power[:, n])
            zeta = float(pa.jam_power[n])
            messages = rng.integers(0, 4, size=(K, B))
            s = waveform_service.qpsk_map(messages)
            eta = crandn(rng, B)

            x = F @ (amp[:, None] * s) + np.sqrt(zeta) * v[:, None] * eta[None, :]
            if beams.distorted:
                x += beams.image_beams[n] @ (amp[:, None] * np.conj(s))
                x += np.sqrt(zeta) * beams.image_fj[n][:, None] * np.conj(eta)[None, :]

            H = ch.h_users[n]
            y = H @ x + crandn(rng, (K, B), noise)
            gain = np.diag(H @ F) * amp
            live = np.abs(gain) > 0
            detected = np.full((K, B), -1)
            detected[live] = waveform_service.qpsk_demap(y[live] / gain[live, None])
            wrong = (detected != messages).reshape(K, trials, block_len)
            user_errors += wrong.any(axis=2).sum(axis=1)

            HE = ch.h_eve[n]
            n_eve = HE.shape[1]
            G = HE.conj().T @ F
            g_v = HE.conj().T @ v
            y_e = HE.conj().T @ x + crandn(rng, (n_eve, B), noise_eve)
            R = noise_eve * np.eye(n_eve, dtype=np.complex128)
            R += (G * pa.comm_power[:, n]) @ G.conj().T + zeta * np.outer(g_v, g_v.conj())
            if beams.distorted:
                G_i = HE.conj().T @ beams.image_beams[n]
                g_vi = HE.conj().T @ beams.image_fj[n]
                R += (G_i * pa.comm_power[:, n]) @ G_i.conj().T + zeta * np.outer(g_vi, g_vi.conj())
            for k in range(K):
                R_in = R - pa.comm_power[k, n] * np.outer(G[:, k], G[:, k].conj())
                try:
                    w = linalg.solve(R_in, G[:, k] * amp[k], assume_a="her")
                except linalg.LinAlgError:
                    w = linalg.lstsq(R_in, G[:, k] * amp[k])[0]
                scale = np.vdot(w, G[:, k]) * amp[k]
                estimate = (w.conj() @ y_e) / scale if scale != 0 else np.zeros(B, dtype=np.complex128)
                wrong_e = (waveform_service.qpsk_demap(estimate) != messages[k]).reshape(trials, block_len)
                eve_errors[k] += wrong_e.any(axis=1).sum()

        blocks = trials * N
        bler_user = user_errors / blocks
        return bler_user, float(np.mean(eve_errors / blocks))

    # ---- experiments -----------------------------------------------------

    def _run_tasks(self, tasks, work, threads: int) -> List[TrialRecord]:
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as executor:
                records = list(executor.map(work, tasks))
        else:
            records = [work(task) for task in tasks]
        return records

    def run_sweep(
        self, spec: SweepSpec, cfg: RunConfig, threads: int = 1, experiment_id: Optional[str] = None
    ) -> ExperimentResult:
        cfg = cfg.with_value("run", "seed", spec.seed)
        tasks = [(p, value, trial) for p, value in enumerate(spec.points) for trial in range(spec.trials)]
        logger.info(
            f"Sweep {spec.axis.value}: {len(spec.points)} point(s) x {spec.trials} trial(s) on {threads} thread(s)"
        )

        def work(task):
            p, value, trial = task
            record = self.run_trial(cfg, spec.axis, value, trial)
            if experiment_id:
                record = record.model_copy(update={"experiment_id": experiment_id})
            logger.debug(f"{spec.axis.value}={value} trial {trial}: sum secrecy {record.sum_secrecy:.4f}")
            return p, trial, record

        results = self._run_tasks(tasks, work, threads)
        results.sort(key=lambda item: (item[0], item[1]))
        return ExperimentResult(
            experiment_id=experiment_id or cfg.output.experiment_id,
            axis=spec.axis,
            records=[record for _, _, record in results],
        )

    def crlb_secrecy_tradeoff(self, spec: SweepSpec, cfg: RunConfig, threads: int = 1) -> ExperimentResult:
        """Secrecy achieved under each CRLB budget (dB, applied to both angles)"""
        if spec.axis != SweepAxis.CRLB_BUDGET_DB:
            raise InvalidParameterError(f"trade-off needs the crlb_budget_db axis, got {spec.axis.value}")
        result = self.run_sweep(spec, cfg, threads)
        for point in result.summaries():
            if point.infeasible:
                logger.warning(f"CRLB budget {point.axis_value} dB infeasible in every trial")
        return result

    # ---- acceptance gates --------------------------------------------------

    def trend_gate(self, result: ExperimentResult, metric: str, increasing: bool, slack: float = 2.0) -> bool:
        """
        Mean `metric` moves in one direction along the axis. A step against
        the direction passes while it stays within `slack` standard errors.
        """
        ordered = result.summaries()
        passed = True
        for before, after in zip(ordered, ordered[1:]):
            step = after.mean[metric] - before.mean[metric]
            against = -step if increasing else step
            allowed = slack * max(before.stderr[metric], after.stderr[metric])
            if against > allowed:
                logger.warning(
                    f"{metric} {'drops' if increasing else 'rises'} by {against:.4f} from "
                    f"{result.axis.value}={before.axis_value} to {after.axis_value} (allowed {allowed:.4f})"
                )
                passed = False
        return passed

    def sweep_gate(self, result: ExperimentResult) -> bool:
        """Direction checks for the axes that declare one; other axes always pass"""
        trend = SWEEP_TRENDS.get(result.axis)
        if trend is None:
            return True
        metric, increasing = trend
        return self.trend_gate(result, metric, increasing)

    def degradation(self, result: ExperimentResult, metric: str = "sum_secrecy") -> float:
        """Mean `metric` at the smallest axis value minus its mean at the largest"""
        ordered = result.summaries()
        return ordered[0].mean[metric] - ordered[-1].mean[metric]

    def robustness_gate(self, results: Dict[str, ExperimentResult]) -> bool:
        robust = self.degradation(results["robust"])
        baseline = self.degradation(results["baseline"])
        if robust >= baseline:
            logger.warning(f"Robust degradation {robust:.4f} is not below baseline {baseline:.4f}")
            return False
        return True

    def impairment_robustness(
        self, spec: SweepSpec, cfg: RunConfig, threads: int = 1
    ) -> Dict[str, ExperimentResult]:
        """
        Per trial, train one encoder with phase-noise injection and one without,
        then evaluate both at every phase-noise variance on identical draws.
        """
        if spec.axis != SweepAxis.PN_VARIANCE:
            raise InvalidParameterError(f"robustness needs the pn_variance axis, got {spec.axis.value}")
        cfg = cfg.with_value("run", "seed", spec.seed)
        variants = {"robust": cfg.impairments.train_sigma_pn2, "baseline": 0.0}
        base_id = cfg.output.experiment_id

        def work(trial: int):
            ctx = self.prepare_trial(cfg, spec.axis, trial)
            pn_seed = int(ctx.streams["impairments"].integers(0, 2**62))
            rows = {}
            for name, train_pn in variants.items():
                trial_ctx = self.prepare_trial(cfg, spec.axis, trial)
                solution, feasible = self.design_learned(cfg, trial_ctx, train_pn)
                rows[name] = []
                for value in spec.points:
                    point_cfg = self.apply_axis(cfg, spec.axis, value)
                    rows[name].append(
                        self.evaluate(
                            point_cfg,
                            trial_ctx,
                            solution,
                            feasible,
                            spec.axis,
                            value,
                            impairment_rng=generator_from_seed(pn_seed),
                            experiment_id=f"{base_id}-{name}",
                        )
                    )
            logger.info(f"Robustness trial {trial} done")
            return trial, rows

        results = self._run_tasks(list(range(spec.trials)), work, threads)
        results.sort(key=lambda item: item[0])
        return {
            name: ExperimentResult(
                experiment_id=f"{base_id}-{name}",
                axis=spec.axis,
                records=[record for _, rows in results for record in rows[name]],
            )
            for name in variants
        }

    def write_results(self, result: ExperimentResult, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        result.to_frame().to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
        logger.info(f"Results written: {path} ({len(result.records)} rows)")
        return path


# Global instance
experiment_service = ExperimentService()
