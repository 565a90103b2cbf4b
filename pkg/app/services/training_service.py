"""
Two-stage (communication, then friendly jamming) training and the joint
multicarrier training workflow.

Both paths read only what the transmitter knows: the CSI estimate, the
estimated angles and its own draws of Eve channels. Encoder outputs are
turned into beams by construction: user columns are unit-normalised and the
jamming direction is projected onto the null space of H_hat before
normalisation.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
from torch.nn import functional as F

from app.models.beamforming import BeamformingSolution, LogBase, RateReport
from app.models.channel import AngleState, ChannelRealization, CsiEstimate
from app.models.experiment import TRAINING_LOG_COLUMNS
from app.models.fisher import CrlbConvention, FimEstimate, FimScaling, to_db
from app.models.neural import EncoderKind, QuantizationSpec
from app.models.training import (
    FeatureVector,
    NetworkBundle,
    Stage1Result,
    Stage2Result,
    SubcarrierAllocation,
    TrainConfig,
    TrainingLogEntry,
    TrainingObjective,
    TrainingOutcome,
    TrainingScenario,
)
from app.models.waveform import PowerAllocation, PowerMode
from app.networks.autodiff import softmax_cross_entropy
from app.networks.encoders import Decoder, SymbolMapper, build_encoder, default_architecture
from app.networks.optim import adam_step, make_adam
from app.services.beam_service import FimPipeline, beam_service, closed_form_pipeline, within_thresholds
from app.services.fisher_service import fisher_service
from app.services.rate_service import rate_service
from app.services.waveform_service import waveform_service
from app.utils.errors import InvalidParameterError, TrainingDivergedError
from app.utils.linalg import crandn
from app.utils.random_streams import torch_generator

logger = logging.getLogger(__name__)

J_FLOOR = 1e-30


def _abs2(z: torch.Tensor) -> torch.Tensor:
    """|z|^2 without the undefined gradient of abs at 0"""
    return z.real**2 + z.imag**2


def feature_width(n_users: int, n_tx: int) -> int:
    return 2 * n_users * n_tx + 5


def encoder_width(n_users: int, n_tx: int) -> int:
    """Real outputs per subcarrier: real and imaginary parts of K user beams plus the FJ beam"""
    return 2 * n_tx * (n_users + 1)


class TrainingService:
    # ---- allocation, features, loss -------------------------------------

    def nonoverlap_allocate(self, n_sub: int, frac_comm_only: float) -> SubcarrierAllocation:
        if not 0.0 <= frac_comm_only <= 1.0:
            raise InvalidParameterError(f"frac_comm_only must lie in [0, 1], got {frac_comm_only}")
        n_comm = int(np.floor(frac_comm_only * n_sub + 0.5))
        return SubcarrierAllocation(
            n_sub=n_sub,
            comm_set=tuple(range(n_comm)),
            sense_set=tuple(range(n_comm, n_sub)),
        )

    def build_features(
        self, csi: CsiEstimate, pa: PowerAllocation, angles: AngleState, n: int, N: int
    ) -> FeatureVector:
        """z for 0-based subcarrier n; the last entry is (n + 1) / N"""
        if not 0 <= n < N:
            raise InvalidParameterError(f"subcarrier index {n} outside [0, {N})")
        h = csi.h_hat[n]
        values = np.concatenate(
            [
                h.real.ravel(),
                h.imag.ravel(),
                [
                    float(np.sum(pa.comm_power[:, n])),
                    float(pa.jam_power[n]),
                    float(angles.theta_hat),
                    float(angles.phi_hat),
                    (n + 1) / N,
                ],
            ]
        )
        return FeatureVector(values=values, n_users=h.shape[0], n_tx=h.shape[1])

    def feature_matrix(self, csi: CsiEstimate, pa: PowerAllocation, angles: AngleState) -> np.ndarray:
        N = csi.h_hat.shape[0]
        return np.stack([self.build_features(csi, pa, angles, n, N).values for n in range(N)])

    def total_loss(
        self,
        rates: RateReport,
        crlb_theta: np.ndarray,
        crlb_phi: np.ndarray,
        lam: float,
        sense_mask: Optional[np.ndarray] = None,
    ) -> float:
        """-sum_k sum_n R_k^(n) + lambda * sum_{n in N_s} (CRLB_theta^(n) + CRLB_phi^(n))"""
        crlb_theta = np.asarray(crlb_theta, dtype=np.float64)
        crlb_phi = np.asarray(crlb_phi, dtype=np.float64)
        if sense_mask is None:
            sense_mask = np.ones(crlb_theta.shape[0], dtype=bool)
        if crlb_theta.shape != sense_mask.shape or crlb_phi.shape != sense_mask.shape:
            raise InvalidParameterError("CRLB arrays and sensing mask disagree on N")
        penalty = float(np.sum(crlb_theta[sense_mask]) + np.sum(crlb_phi[sense_mask])) if lam else 0.0
        return -float(np.sum(rates.user_rates)) + lam * penalty

    # ---- shared pieces --------------------------------------------------

    def initial_power(
        self, n_users: int, scenario: TrainingScenario, jam_fraction: float
    ) -> PowerAllocation:
        """Even split of each subcarrier budget; no jamming on communication-only subcarriers"""
        N = scenario.allocation.n_sub
        budget = scenario.p_max / N if scenario.power_mode == PowerMode.PER_SUBCARRIER else scenario.p_max
        kappa = np.full(N, jam_fraction)
        kappa[list(scenario.allocation.comm_set)] = 0.0
        return PowerAllocation(
            comm_power=np.tile((1.0 - kappa) * budget / n_users, (n_users, 1)),
            jam_power=kappa * budget,
            p_max=scenario.p_max,
            mode=scenario.power_mode,
        )

    def design_channel(self, ch: ChannelRealization, csi: CsiEstimate, scenario: TrainingScenario):
        """H_hat for the users and the transmitter's own first Eve draw; the other draws form the set"""
        design = ch.model_copy(update={"h_users": csi.h_hat, "h_eve": scenario.design_eve[0]})
        return design, scenario.design_eve[1:] if scenario.design_eve.shape[0] > 1 else None

    def _projectors(self, csi: CsiEstimate) -> torch.Tensor:
        return torch.as_tensor(np.stack([beam_service.null_projector(h) for h in csi.h_hat]))

    def _scale_features(self, Z: np.ndarray) -> torch.Tensor:
        """Each column divided by its largest magnitude so powers and channel entries share a range"""
        peak = np.max(np.abs(Z), axis=0, keepdims=True)
        peak[peak < 1e-12] = 1.0
        return torch.as_tensor(Z / peak, dtype=torch.float64)

    def _beams(
        self,
        raw: torch.Tensor,
        projectors: torch.Tensor,
        n_users: int,
        rotation: Optional[torch.Tensor] = None,
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """(user beams (N, N_t, K), FJ beam (N, N_t)) from raw encoder rows"""
        N, n_tx = projectors.shape[0], projectors.shape[1]
        half = n_tx * (n_users + 1)
        c = torch.complex(raw[:, :half], raw[:, half:]).reshape(N, n_tx, n_users + 1)
        users = c[:, :, :n_users]
        users = users / torch.linalg.vector_norm(users, dim=1, keepdim=True).clamp_min(1e-12)
        v = torch.einsum("nst,nt->ns", projectors, c[:, :, n_users])
        v = v / torch.linalg.vector_norm(v, dim=1, keepdim=True).clamp_min(1e-12)
        if rotation is not None:
            users = rotation[:, :, None] * users
            v = rotation * v
        return users, v

    def _powers(self, logits: torch.Tensor, mask: torch.Tensor, scenario: TrainingScenario) -> torch.Tensor:
        """Softplus weights scaled onto the budget, rows 0..K-1 users and row K jamming"""
        w = F.softplus(logits) * mask
        N = w.shape[1]
        if scenario.power_mode == PowerMode.AVERAGE:
            return w * (N * scenario.p_max / w.sum())
        return w * ((scenario.p_max / N) / w.sum(dim=0, keepdim=True))

    def _enforce_budget(
        self, p: torch.Tensor, users: torch.Tensor, v: torch.Tensor, scenario: TrainingScenario
    ) -> torch.Tensor:
        """Differentiable counterpart of waveform_service.enforce_power for the (K+1, N) power rows"""
        norms = torch.cat([torch.sum(_abs2(users), dim=1).T, torch.sum(_abs2(v), dim=1)[None, :]])
        per_sub = torch.sum(p * norms, dim=0)
        N = per_sub.shape[0]
        if scenario.power_mode == PowerMode.AVERAGE:
            total = per_sub.mean()
            scale = torch.clamp(scenario.p_max / total.clamp_min(1e-300), max=1.0).expand(N)
        else:
            scale = torch.clamp((scenario.p_max / N) / per_sub.clamp_min(1e-300), max=1.0)
        return p * scale[None, :]

    def _secrecy_terms(
        self,
        H: torch.Tensor,
        eve: torch.Tensor,
        users: torch.Tensor,
        v: torch.Tensor,
        gamma: torch.Tensor,
        zeta: torch.Tensor,
        ch: ChannelRealization,
        scenario: TrainingScenario,
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Differentiable (user rate, worst-case Eve rate), both (K, N).

        Eve's leakage log det(I + gamma R^-1 g g^H) reduces to
        log(1 + gamma g^H R^-1 g) with R^-1 from Sherman-Morrison.
        """
        hf = torch.einsum("nkt,ntj->nkj", H, users)
        g = _abs2(hf) * gamma.T[:, None, :]
        signal = torch.diagonal(g, dim1=1, dim2=2)
        jam = zeta[:, None] * _abs2(torch.einsum("nkt,nt->nk", H, v))
        interference = g.sum(dim=-1) - signal + jam
        user = torch.log1p(signal / (interference + ch.sigma_c2))

        gE = torch.einsum("dnte,ntk->dnek", eve.conj(), users)
        gV = torch.einsum("dnte,nt->dne", eve.conj(), v)
        norm_g = torch.sum(_abs2(gE), dim=2)
        cross = _abs2(torch.einsum("dne,dnek->dnk", gV.conj(), gE))
        norm_v = torch.sum(_abs2(gV), dim=2)
        z = zeta[None, :, None]
        quad = (norm_g - z * cross / (ch.sigma_e2 + z * norm_v[:, :, None])) / ch.sigma_e2
        eve_rate = torch.amax(torch.log1p(gamma.T[None] * quad.clamp_min(0.0)), dim=0)

        scale = scenario.tau_bar / (np.log(2.0) if scenario.log_base == LogBase.BINARY else 1.0)
        return scale * user.T, scale * eve_rate.T

    def _crlb_terms(
        self, v: torch.Tensor, zeta: torch.Tensor, scenario: TrainingScenario
    ) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Per-subcarrier CRLBs (N,) and the per-subcarrier 2x2 FIMs (N, 2, 2)"""
        sm = scenario.sensing
        gain = 2.0 * sm.snr_sense if sm.scaling == FimScaling.SNR else 2.0 / sm.sigma_s2
        a_theta = torch.einsum("rt,nt->nr", torch.as_tensor(sm.dG_dtheta), v)
        a_phi = torch.einsum("rt,nt->nr", torch.as_tensor(sm.dG_dphi), v)
        j_tt = gain * zeta * torch.sum(_abs2(a_theta), dim=1)
        j_pp = gain * zeta * torch.sum(_abs2(a_phi), dim=1)
        j_tp = gain * zeta * torch.real(torch.sum(a_theta.conj() * a_phi, dim=1))
        J = torch.stack([torch.stack([j_tt, j_tp], -1), torch.stack([j_tp, j_pp], -1)], -2)
        if scenario.convention == CrlbConvention.MATRIX:
            det = (j_tt * j_pp - j_tp**2).clamp_min(J_FLOOR)
            return j_pp / det, j_tt / det, J
        return 1.0 / j_tt.clamp_min(J_FLOOR), 1.0 / j_pp.clamp_min(J_FLOOR), J

    def _summary_crlb(self, J: np.ndarray, scenario: TrainingScenario) -> Tuple[float, float]:
        """CRLBs of the Fisher information summed over the sensing subcarriers"""
        sense = list(scenario.allocation.sense_set)
        if not sense:
            return float("inf"), float("inf")
        return fisher_service.crlb(np.sum(J[sense], axis=0), scenario.convention)

    def _feasible_mask(
        self, crlb_theta: np.ndarray, crlb_phi: np.ndarray, cfg: TrainConfig, scenario: TrainingScenario
    ) -> np.ndarray:
        thresholds = (cfg.crlb0_theta, cfg.crlb0_phi)
        mask = np.ones(scenario.allocation.n_sub, dtype=bool)
        for n in scenario.allocation.sense_set:
            mask[n] = within_thresholds(float(crlb_theta[n]), float(crlb_phi[n]), thresholds)
        return mask

    def _log_entry(
        self,
        epoch: int,
        loss: float,
        secrecy: float,
        crlbs: Tuple[float, float],
        accepted: bool,
    ) -> TrainingLogEntry:
        return TrainingLogEntry(
            epoch=epoch,
            loss=loss,
            sum_secrecy=secrecy,
            crlb_theta_db=to_db(crlbs[0]),
            crlb_phi_db=to_db(crlbs[1]),
            accepted=int(accepted),
        )

    def _decoder_batch(
        self,
        nets: NetworkBundle,
        H: torch.Tensor,
        users: torch.Tensor,
        v: torch.Tensor,
        gamma: torch.Tensor,
        zeta: torch.Tensor,
        ch: ChannelRealization,
        cfg: TrainConfig,
        rng: np.random.Generator,
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """Decoder logits for one message batch; users equalise y / (sqrt(gamma_k) h_k^H f_k)"""
        N, K = H.shape[0], H.shape[1]
        labels = torch.as_tensor(rng.integers(0, cfg.msg_alphabet, size=(cfg.batch, N, K)))
        eta = torch.as_tensor(crandn(rng, (cfg.batch, N)))
        noise = torch.as_tensor(crandn(rng, (cfg.batch, N, K), variance=ch.sigma_c2))
        s = nets.mapper(labels)

        hf = torch.einsum("nkt,ntj->nkj", H, users)
        hv = torch.einsum("nkt,nt->nk", H, v)
        amp = torch.sqrt(gamma.T)
        y = torch.einsum("nkj,bnj->bnk", hf * amp[:, None, :], s)
        y = y + torch.sqrt(zeta)[None, :, None] * hv[None] * eta[:, :, None] + noise
        equalized = y / (torch.diagonal(hf, dim1=1, dim2=2) * amp)[None]
        logits = nets.decoder(torch.stack([equalized.real, equalized.imag], -1).reshape(-1, 2))
        return logits, labels.reshape(-1)

    def build_networks(
        self,
        kind: EncoderKind,
        n_users: int,
        n_tx: int,
        rng: np.random.Generator,
        msg_alphabet: int = 4,
        hidden: int = 171,
        tt_out_dim: int = 64,
        tt_rank: int = 5,
    ) -> NetworkBundle:
        gen = torch_generator(rng)
        arch = default_architecture(
            kind, feature_width(n_users, n_tx), encoder_width(n_users, n_tx), hidden, tt_out_dim, tt_rank
        )
        return NetworkBundle(
            encoder=build_encoder(arch, gen),
            decoder=Decoder(msg_alphabet, gen),
            mapper=SymbolMapper(msg_alphabet),
        )

    # ---- Algorithm 1 ----------------------------------------------------

    def stage1_comm_training(
        self,
        cfg: TrainConfig,
        ch: ChannelRealization,
        csi: CsiEstimate,
        nets: NetworkBundle,
        rng: np.random.Generator,
        scenario: TrainingScenario,
    ) -> Stage1Result:
        """
        Communication training on the estimated channel: cross-entropy of the
        message decoder plus L_rate = -(sum secrecy) / N at a fixed power split.
        """
        if nets.decoder is None or nets.mapper is None:
            raise InvalidParameterError("stage 1 needs a decoder and a symbol mapper")
        K = csi.h_hat.shape[1]
        pa = self.initial_power(K, scenario, cfg.jam_fraction)
        Z = self._scale_features(self.feature_matrix(csi, pa, scenario.angles))
        projectors = self._projectors(csi)
        H = torch.as_tensor(csi.h_hat)
        eve = torch.as_tensor(scenario.design_eve)
        gamma = torch.as_tensor(pa.comm_power)
        zeta = torch.as_tensor(pa.jam_power)
        N = Z.shape[0]

        modules = [nets.encoder, nets.decoder, nets.mapper]
        params = {
            f"{i}.{name}": p for i, m in enumerate(modules) for name, p in m.named_parameters()
        }
        state = make_adam(params.values(), cfg.step_size)
        for m in modules:
            m.train()

        log: List[TrainingLogEntry] = []
        last_finite = None
        logger.info(f"Stage 1: {cfg.epochs_stage1} epochs on N={N}, K={K}, batch {cfg.batch}")
        for epoch in range(cfg.epochs_stage1):
            users, v = self._beams(nets.encoder(Z), projectors, K)
            logits, labels = self._decoder_batch(nets, H, users, v, gamma, zeta, ch, cfg, rng)
            ce = softmax_cross_entropy(logits, labels)

            user_rate, eve_rate = self._secrecy_terms(H, eve, users, v, gamma, zeta, ch, scenario)
            secrecy = torch.relu(user_rate - eve_rate)
            loss = ce - cfg.rate_weight * torch.sum(user_rate - eve_rate) / N

            if not torch.isfinite(loss):
                logger.error(f"Stage 1 loss diverged at epoch {epoch}")
                raise TrainingDivergedError("stage1", epoch, last_finite)
            grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
            params, state = adam_step(state, params, dict(zip(params.keys(), grads)))
            last_finite = float(loss.detach())

            crlb_theta, crlb_phi, J = self._crlb_terms(v.detach(), zeta, scenario)
            feasible = self._feasible_mask(crlb_theta.numpy(), crlb_phi.numpy(), cfg, scenario)
            log.append(
                self._log_entry(
                    epoch,
                    last_finite,
                    float(secrecy.detach().sum()),
                    self._summary_crlb(J.numpy(), scenario),
                    bool(feasible.all()),
                )
            )
            if epoch % 50 == 0:
                logger.debug(f"Stage 1 epoch {epoch}: loss={last_finite:.4f} ce={float(ce):.4f}")

        for m in modules:
            m.eval()
        with torch.no_grad():
            users, v = self._beams(nets.encoder(Z), projectors, K)
            logits, labels = self._decoder_batch(nets, H, users, v, gamma, zeta, ch, cfg, rng)
            accuracy = float((logits.argmax(-1) == labels).double().mean())

        logger.info(f"Stage 1 done: final loss {last_finite:.4f}, decoder accuracy {accuracy:.3f}")
        return Stage1Result(
            user_beams=users.numpy().copy(),
            log=log,
            decoder_accuracy=accuracy,
            encoder=nets.encoder,
            decoder=nets.decoder,
            mapper=nets.mapper,
            fj_beam=v.numpy().copy(),
            power=pa,
        )

    def stage2_fj_optimization(
        self,
        cfg: TrainConfig,
        ch: ChannelRealization,
        csi: CsiEstimate,
        beams: BeamformingSolution,
        fisher_pipeline: Optional[FimPipeline],
        rng: np.random.Generator,
        scenario: TrainingScenario,
        start_epoch: int = 0,
    ) -> Stage2Result:
        """
        CRLB-gated friendly-jamming search with the user beams frozen.

        Each iteration probes the gradient-refined current beam plus fresh
        random null-space beams (or only cfg.candidate_pool). Candidates meeting
        both thresholds are accepted and the one with the smallest
        CRLB_theta + CRLB_phi becomes current; other steps are discarded. The
        result per subcarrier is the accepted beam with the largest FIM trace,
        or the starting beam flagged infeasible.
        """
        pipeline = fisher_pipeline or closed_form_pipeline(scenario.convention)
        thresholds = (cfg.crlb0_theta, cfg.crlb0_phi)
        sm = scenario.sensing
        M = fisher_service.trace_operator(sm)
        N = beams.n_sub

        start = beams.fj_beam.copy()
        current = beams.fj_beam.copy()
        chosen = beams.fj_beam.copy()
        best: List[Optional[FimEstimate]] = [None] * N
        rejections = np.zeros(N, dtype=int)
        bases = {n: beam_service.null_basis(csi.h_hat[n]) for n in scenario.allocation.sense_set}

        log: List[TrainingLogEntry] = []
        accepted_total = 0
        design_ch, design_set = self.design_channel(ch, csi, scenario)
        for it in range(cfg.iters_stage2):
            any_accepted = False
            losses = []
            for n in scenario.allocation.sense_set:
                zeta = float(beams.pa.jam_power[n])
                if cfg.candidate_pool is not None:
                    candidates = [
                        beam_service.project_to_null(np.asarray(c, dtype=np.complex128), bases[n])
                        for c in cfg.candidate_pool
                    ]
                else:
                    candidates = [beam_service.refine_beam(current[n], bases[n], M, cfg.fj_step)]
                    candidates += beam_service.random_null_beams(bases[n], cfg.candidate_count, rng)

                estimates = [pipeline(sm, c, zeta) for c in candidates]
                accepted = [
                    i
                    for i, e in enumerate(estimates)
                    if within_thresholds(e.crlb_theta, e.crlb_phi, thresholds)
                ]
                if accepted:
                    any_accepted = True
                    accepted_total += len(accepted)
                    rejections[n] = 0
                    step = min(accepted, key=lambda i: estimates[i].crlb_theta + estimates[i].crlb_phi)
                    current[n] = candidates[step]
                    top = max(accepted, key=lambda i: estimates[i].trace)
                    if best[n] is None or estimates[top].trace > best[n].trace:
                        best[n] = estimates[top]
                        chosen[n] = candidates[top]
                    losses.append(estimates[step].crlb_theta + estimates[step].crlb_phi)
                else:
                    rejections[n] += 1
                    if rejections[n] >= cfg.reinit_after and cfg.candidate_pool is None:
                        logger.warning(
                            f"Subcarrier {n}: {rejections[n]} consecutive rejections, reinitialising FJ beam"
                        )
                        current[n] = beam_service.random_null_beams(bases[n], 1, rng)[0]
                        rejections[n] = 0

            solution = beams.model_copy(update={"fj_beam": chosen.copy()})
            report = rate_service.evaluate(design_ch, solution, design_set, scenario.tau_bar, scenario.log_base)
            J = np.stack(
                [
                    fisher_service.fim_matrix_closed_form(sm, chosen[n], float(beams.pa.jam_power[n]))
                    for n in range(N)
                ]
            )
            log.append(
                self._log_entry(
                    start_epoch + it,
                    float(np.mean(losses)) if losses else float("inf"),
                    report.sum_secrecy,
                    self._summary_crlb(J, scenario),
                    any_accepted,
                )
            )

        feasible = np.ones(N, dtype=bool)
        for n in scenario.allocation.sense_set:
            if best[n] is None:
                feasible[n] = False
                chosen[n] = start[n]
        if not feasible.all():
            logger.warning(f"Stage 2: no feasible FJ beam on {int((~feasible).sum())} subcarrier(s)")
        return Stage2Result(
            fj_beam=chosen, feasible=feasible, fims=best, accepted_count=accepted_total, log=log
        )

    def train_algorithm1(
        self,
        cfg: TrainConfig,
        ch: ChannelRealization,
        csi: CsiEstimate,
        nets: NetworkBundle,
        rng: np.random.Generator,
        scenario: TrainingScenario,
        fisher_pipeline: Optional[FimPipeline] = None,
    ) -> TrainingOutcome:
        stage1 = self.stage1_comm_training(cfg, ch, csi, nets, rng, scenario)
        beams = BeamformingSolution(user_beams=stage1.user_beams, fj_beam=stage1.fj_beam, pa=stage1.power)
        stage2 = self.stage2_fj_optimization(
            cfg, ch, csi, beams, fisher_pipeline, rng, scenario, start_epoch=cfg.epochs_stage1
        )
        solution = beams.model_copy(update={"fj_beam": stage2.fj_beam})
        solution = solution.model_copy(update={"pa": waveform_service.enforce_power(solution.pa, solution)})
        return self._outcome(solution, stage1.log + stage2.log, stage2.feasible, scenario, nets.encoder)

    # ---- multicarrier ---------------------------------------------------

    def multicarrier_train(
        self,
        cfg: TrainConfig,
        ch: ChannelRealization,
        csi: CsiEstimate,
        nets: NetworkBundle,
        fisher_pipeline: Optional[FimPipeline],
        rng: np.random.Generator,
        scenario: TrainingScenario,
    ) -> TrainingOutcome:
        """
        Joint training of all subcarriers from the feature matrix Z (N x D).

        The loss is -(sum secrecy) or -(worst user secrecy) against the design
        Eve draws plus lambda times the per-subcarrier CRLB sum over the sensing
        set. Power comes from trainable softplus weights rescaled onto the budget
        at every step. After training, each sensing subcarrier keeps the
        null-space candidate that meets the CRLB thresholds with the largest
        FIM trace.
        """
        K = csi.h_hat.shape[1]
        N = csi.h_hat.shape[0]
        pa0 = self.initial_power(K, scenario, cfg.jam_fraction)
        Z = self._scale_features(self.feature_matrix(csi, pa0, scenario.angles))
        projectors = self._projectors(csi)
        H = torch.as_tensor(csi.h_hat)
        eve = torch.as_tensor(scenario.design_eve)
        sense = torch.as_tensor(scenario.allocation.sense_mask())

        mask = torch.ones((K + 1, N), dtype=torch.float64)
        mask[K] = sense.double()
        fractions = np.vstack([pa0.comm_power, pa0.jam_power[None, :]]) / scenario.p_max
        logits = torch.nn.Parameter(torch.as_tensor(np.log(np.expm1(np.maximum(fractions, 1e-6)))))

        params = {f"encoder.{k}": p for k, p in nets.encoder.named_parameters()}
        params["power_logits"] = logits
        state = make_adam(params.values(), cfg.step_size)
        nets.encoder.train()

        log: List[TrainingLogEntry] = []
        last_finite = None
        logger.info(
            f"Multicarrier training: {cfg.epochs_stage1} epochs, N={N}, |N_s|={len(scenario.allocation.sense_set)}, "
            f"objective={cfg.objective.value}"
        )
        for epoch in range(cfg.epochs_stage1):
            rotation = None
            if cfg.train_sigma_pn2 > 0:
                phase = waveform_service.wiener_phase((H.shape[2], N), cfg.train_sigma_pn2, rng).T
                rotation = torch.as_tensor(np.exp(1j * phase))
            users, v = self._beams(nets.encoder(Z), projectors, K, rotation)
            p = self._enforce_budget(self._powers(logits, mask, scenario), users, v, scenario)
            gamma, zeta = p[:K], p[K]

            user_rate, eve_rate = self._secrecy_terms(H, eve, users, v, gamma, zeta, ch, scenario)
            margin = user_rate - eve_rate
            if cfg.objective == TrainingObjective.WORST_USER:
                objective = torch.min(margin.sum(dim=1))
            else:
                objective = margin.sum()
            crlb_theta, crlb_phi, J = self._crlb_terms(v, zeta, scenario)
            penalty = torch.sum((crlb_theta + crlb_phi)[sense]) if cfg.lambda_crlb else 0.0
            loss = -objective + cfg.lambda_crlb * penalty

            if not torch.isfinite(loss):
                logger.error(f"Multicarrier loss diverged at epoch {epoch}")
                raise TrainingDivergedError("multicarrier", epoch, last_finite)
            grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
            params, state = adam_step(state, params, dict(zip(params.keys(), grads)))
            last_finite = float(loss.detach())

            feasible = self._feasible_mask(
                crlb_theta.detach().numpy(), crlb_phi.detach().numpy(), cfg, scenario
            )
            log.append(
                self._log_entry(
                    epoch,
                    last_finite,
                    float(torch.relu(margin).detach().sum()),
                    self._summary_crlb(J.detach().numpy(), scenario),
                    bool(feasible.all()),
                )
            )
            if epoch % 50 == 0:
                logger.debug(f"Multicarrier epoch {epoch}: loss={last_finite:.4f}")

        if cfg.quant_delta > 0:
            changes = nets.encoder.quantize_(QuantizationSpec(delta=cfg.quant_delta))
            logger.info(
                f"Quantized TT cores with step {cfg.quant_delta}, largest relative weight change "
                f"{max(changes, default=0.0):.3g}"
            )

        nets.encoder.eval()
        with torch.no_grad():
            users, v = self._beams(nets.encoder(Z), projectors, K)
            p = self._enforce_budget(self._powers(logits, mask, scenario), users, v, scenario).numpy()
        pa = PowerAllocation(
            comm_power=p[:K].copy(), jam_power=p[K].copy(), p_max=scenario.p_max, mode=scenario.power_mode
        )
        solution = BeamformingSolution(user_beams=users.numpy().copy(), fj_beam=v.numpy().copy(), pa=pa)
        solution, feasible = self.select_fj_beams(cfg, csi, solution, fisher_pipeline, rng, scenario)
        solution = solution.model_copy(update={"pa": waveform_service.enforce_power(solution.pa, solution)})
        return self._outcome(solution, log, feasible, scenario, nets.encoder)

    def select_fj_beams(
        self,
        cfg: TrainConfig,
        csi: CsiEstimate,
        solution: BeamformingSolution,
        fisher_pipeline: Optional[FimPipeline],
        rng: np.random.Generator,
        scenario: TrainingScenario,
    ) -> Tuple[BeamformingSolution, np.ndarray]:
        """Post-training rule per sensing subcarrier: in the null space, within thresholds, max trace"""
        pipeline = fisher_pipeline or closed_form_pipeline(scenario.convention)
        thresholds = (cfg.crlb0_theta, cfg.crlb0_phi)
        fj = solution.fj_beam.copy()
        feasible = np.ones(solution.n_sub, dtype=bool)
        for n in scenario.allocation.sense_set:
            basis = beam_service.null_basis(csi.h_hat[n])
            if cfg.candidate_pool is not None:
                candidates = [fj[n]] + [beam_service.project_to_null(c, basis) for c in cfg.candidate_pool]
            else:
                candidates = [fj[n]] + beam_service.random_null_beams(basis, cfg.candidate_count, rng)
            index, _, ok = beam_service.select_fj_beam(
                candidates, scenario.sensing, float(solution.pa.jam_power[n]), thresholds, pipeline
            )
            fj[n] = candidates[index]
            feasible[n] = ok
        if not feasible.all():
            logger.warning(f"Post-training selection infeasible on {int((~feasible).sum())} subcarrier(s)")
        return solution.model_copy(update={"fj_beam": fj}), feasible

    def _outcome(
        self,
        solution: BeamformingSolution,
        log: List[TrainingLogEntry],
        feasible: np.ndarray,
        scenario: TrainingScenario,
        encoder,
    ) -> TrainingOutcome:
        J = np.stack(
            [
                fisher_service.fim_matrix_closed_form(
                    scenario.sensing, solution.fj_beam[n], float(solution.pa.jam_power[n])
                )
                for n in range(solution.n_sub)
            ]
        )
        crlb_theta, crlb_phi = self._summary_crlb(J, scenario)
        return TrainingOutcome(
            solution=solution,
            log=log,
            feasible=feasible,
            crlb_theta=crlb_theta,
            crlb_phi=crlb_phi,
            encoder=encoder,
        )

    # ---- artefacts -------------------------------------------------------

    def log_frame(self, log: Sequence[TrainingLogEntry]) -> pd.DataFrame:
        return pd.DataFrame([entry.model_dump() for entry in log], columns=TRAINING_LOG_COLUMNS)

    def write_log(self, log: Sequence[TrainingLogEntry], path) -> None:
        self.log_frame(log).to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
        logger.info(f"Training log written: {path} ({len(log)} rows)")


# Global instance
training_service = TrainingService()
