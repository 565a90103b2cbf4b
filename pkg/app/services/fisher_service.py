"""
Angular Fisher information and CRLBs.

Closed forms come straight from the steering derivatives. The nonparametric
path trains one Donsker-Varadhan critic per angle perturbation, reads the
divergence off each critic, and recovers the 2x2 FIM from the quadratic
approximation D(delta) ~ delta^T J delta / 2 by least squares with a PSD
refinement.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from scipy import linalg
from torch import nn

from app.models.channel import AngleParameter, ArrayGeometry
from app.models.fisher import (
    CrlbConvention,
    DiscriminatorConfig,
    FimEstimate,
    FimScaling,
    FimSource,
    PerturbationDesign,
    PerturbationSet,
    SensingModel,
)
from app.models.waveform import ImpairmentParams
from app.services.channel_service import channel_service
from app.services.waveform_service import waveform_service
from app.utils.errors import (
    DivergenceEstimationError,
    InvalidParameterError,
    NotPositiveDefiniteError,
    RankDeficientPerturbationError,
)
from app.utils.linalg import psd_project
from app.utils.random_streams import generator_from_seed, init_linear_layers

logger = logging.getLogger(__name__)

EchoSampler = Callable[[np.ndarray, int, np.random.Generator], np.ndarray]

PSD_MAX_ITER = 200
PSD_TOL = 1e-8


def vec_to_mat(f: np.ndarray, d: int = 2) -> np.ndarray:
    """[J_11, ..., J_dd, J_12, J_13, ..., J_(d-1)d] -> symmetric d x d"""
    J = np.diag(np.asarray(f[:d], dtype=np.float64))
    pos = d
    for i in range(d):
        for j in range(i + 1, d):
            J[i, j] = J[j, i] = f[pos]
            pos += 1
    return J


def mat_to_vec(J: np.ndarray) -> np.ndarray:
    d = J.shape[0]
    off = [J[i, j] for i in range(d) for j in range(i + 1, d)]
    return np.concatenate([np.diag(J), np.asarray(off, dtype=np.float64)])


class Discriminator(nn.Module):
    """FC(echo_dim -> hidden) -> ReLU -> FC(hidden -> 1)"""

    def __init__(self, in_dim: int, hidden: int = 128):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(in_dim, hidden), nn.ReLU(), nn.Linear(hidden, 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x).squeeze(-1)


class FisherService:
    # ---- sensing model --------------------------------------------------

    def sensing_model(
        self,
        geom: ArrayGeometry,
        theta: float,
        phi: float,
        sigma_s2: float = 1.0,
        scaling: FimScaling = FimScaling.POWER,
        snr_sense: float = 1.0,
        noise_cov: Optional[np.ndarray] = None,
    ) -> SensingModel:
        return SensingModel(
            G=channel_service.steering_matrix(geom, theta, phi),
            dG_dtheta=channel_service.steering_derivative(geom, theta, phi, AngleParameter.THETA),
            dG_dphi=channel_service.steering_derivative(geom, theta, phi, AngleParameter.PHI),
            sigma_s2=sigma_s2,
            scaling=scaling,
            snr_sense=snr_sense,
            noise_cov=noise_cov,
            geometry=geom,
            theta=theta,
            phi=phi,
        )

    def _gain(self, sm: SensingModel, zeta: float) -> float:
        if sm.scaling == FimScaling.SNR:
            return 2.0 * sm.snr_sense * zeta
        return 2.0 * zeta / sm.sigma_s2

    # ---- closed forms ---------------------------------------------------

    def fim_closed_form(
        self, sm: SensingModel, v: np.ndarray, zeta: float, which: Union[AngleParameter, str]
    ) -> float:
        if zeta < 0:
            raise InvalidParameterError(f"jamming power must be >= 0, got {zeta}")
        if np.linalg.norm(v) == 0:
            raise InvalidParameterError("beam must be non-zero")
        A = sm.derivative(which)
        return float(self._gain(sm, zeta) * np.linalg.norm(A @ v) ** 2)

    def fim_matrix_closed_form(
        self, sm: SensingModel, v: np.ndarray, zeta: float, alpha: complex = 1.0
    ) -> np.ndarray:
        """Full 2x2 Gaussian FIM (2/sigma^2) Re(D^H D), D = alpha sqrt(zeta) [A_theta v, A_phi v]"""
        D = np.column_stack([sm.dG_dtheta @ v, sm.dG_dphi @ v]) * alpha
        return self._gain(sm, zeta) * np.real(D.conj().T @ D)

    def trace_operator(self, sm: SensingModel) -> np.ndarray:
        """M with v^H M v = ||A_theta v||^2 + ||A_phi v||^2"""
        return sm.dG_dtheta.conj().T @ sm.dG_dtheta + sm.dG_dphi.conj().T @ sm.dG_dphi

    def fim_covariance_form(
        self,
        sm: SensingModel,
        S: Sequence[np.ndarray],
        which: Union[AngleParameter, str],
    ) -> float:
        """sum_n tr(R_s[n] A^H W A), W = I / sigma^2 or Sigma^-1; R_s[n] = S[n] S[n]^H"""
        A = sm.derivative(which)
        if sm.noise_cov is None:
            kernel = A.conj().T @ A / sm.sigma_s2
        else:
            cov = 0.5 * (sm.noise_cov + sm.noise_cov.conj().T)
            if linalg.eigvalsh(cov)[0] <= 0:
                raise NotPositiveDefiniteError("noise covariance is not positive definite")
            kernel = A.conj().T @ linalg.solve(cov, A, assume_a="her")

        total = 0.0
        for S_n in S:
            S_n = np.atleast_2d(np.asarray(S_n).reshape(A.shape[1], -1))
            R_s = S_n @ S_n.conj().T
            total += float(np.real(np.trace(R_s @ kernel)))
        return 2.0 * total

    def crlb(
        self,
        J: Union[FimEstimate, np.ndarray],
        convention: Optional[CrlbConvention] = None,
    ) -> Tuple[float, float]:
        if isinstance(J, FimEstimate):
            convention = convention or J.convention
            J = J.J
        convention = CrlbConvention(convention or CrlbConvention.SCALAR)

        if convention == CrlbConvention.SCALAR:
            return tuple(float(1.0 / J[i, i]) if J[i, i] > 0 else float("inf") for i in range(2))

        det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        if det <= 0:
            return float("inf"), float("inf")
        return float(J[1, 1] / det), float(J[0, 0] / det)

    def closed_form_estimate(
        self,
        sm: SensingModel,
        v: np.ndarray,
        zeta: float,
        convention: CrlbConvention = CrlbConvention.SCALAR,
    ) -> FimEstimate:
        J = self.fim_matrix_closed_form(sm, v, zeta)
        crlb_theta, crlb_phi = self.crlb(J, convention)
        return FimEstimate(
            J=J,
            f_vec=mat_to_vec(J),
            source=FimSource.CLOSED_FORM,
            convention=convention,
            crlb_theta=crlb_theta,
            crlb_phi=crlb_phi,
        )

    # ---- nonparametric pipeline -----------------------------------------

    def make_perturbation_set(
        self,
        rng: np.random.Generator,
        scale: float = 0.05,
        count: int = 4,
        design: PerturbationDesign = PerturbationDesign.AXIAL,
        max_redraws: int = 10,
    ) -> PerturbationSet:
        if count < 3:
            raise InvalidParameterError(f"need at least 3 perturbations for d=2, got {count}")
        design = PerturbationDesign(design)
        for attempt in range(max_redraws):
            if design == PerturbationDesign.AXIAL:
                axial = np.array(
                    [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, -1.0]]
                )
                axial[2:] /= np.sqrt(2.0)
                deltas = scale * axial[: min(count, 4)]
                if count > 4:
                    deltas = np.vstack([deltas, scale * rng.standard_normal((count - 4, 2))])
            else:
                deltas = scale * rng.standard_normal((count, 2))
            ps = PerturbationSet(deltas=deltas, scale=scale)
            try:
                self.build_u_matrix(ps)
                return ps
            except RankDeficientPerturbationError:
                logger.warning(f"Perturbation draw {attempt} rank deficient, drawing again")
        raise RankDeficientPerturbationError(f"no full-rank perturbation set after {max_redraws} draws")

    def build_u_matrix(self, ps: PerturbationSet) -> np.ndarray:
        d = ps.d
        rows = []
        for delta in ps.deltas:
            cross = [2.0 * delta[i] * delta[j] for i in range(d) for j in range(i + 1, d)]
            rows.append(np.concatenate([delta**2, cross]))
        U = np.asarray(rows)
        if np.linalg.matrix_rank(U) < U.shape[1]:
            raise RankDeficientPerturbationError(
                f"U matrix ({U.shape[0]}x{U.shape[1]}) is rank deficient; re-draw the perturbations"
            )
        return U

    def _train_critic(
        self,
        p_samples: np.ndarray,
        q_samples: np.ndarray,
        net_cfg: DiscriminatorConfig,
        seed: int,
        label: str,
    ) -> float:
        gen = torch.Generator().manual_seed(int(seed))
        p = torch.as_tensor(p_samples, dtype=torch.float64)
        q = torch.as_tensor(q_samples, dtype=torch.float64)

        mean = p.mean(dim=0, keepdim=True)
        std = p.std(dim=0, keepdim=True).clamp_min(1e-12)
        p = (p - mean) / std
        q = (q - mean) / std

        n_eval = max(1, int(round(net_cfg.eval_fraction * p.shape[0])))
        p_train, p_eval = p[n_eval:], p[:n_eval]
        q_train, q_eval = q[n_eval:], q[:n_eval]

        critic = Discriminator(p.shape[1], net_cfg.hidden).to(torch.float64)
        init_linear_layers(critic, gen)
        optimizer = torch.optim.Adam(critic.parameters(), lr=net_cfg.step_size)
        log_batch = np.log(net_cfg.batch)

        last_loss = None
        for step in range(net_cfg.steps):
            ip = torch.randint(0, p_train.shape[0], (net_cfg.batch,), generator=gen)
            iq = torch.randint(0, q_train.shape[0], (net_cfg.batch,), generator=gen)
            bound_value = critic(p_train[ip]).mean() - (
                torch.logsumexp(critic(q_train[iq]), dim=0) - log_batch
            )
            loss = -bound_value
            if not torch.isfinite(loss):
                raise DivergenceEstimationError(
                    f"critic for {label} diverged",
                    {"step": step, "last_loss": last_loss, "batch": net_cfg.batch},
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            last_loss = float(loss.detach())

        with torch.no_grad():
            estimate = critic(p_eval).mean() - (
                torch.logsumexp(critic(q_eval), dim=0) - np.log(q_eval.shape[0])
            )
        estimate = float(estimate)
        if not np.isfinite(estimate):
            raise DivergenceEstimationError(f"critic for {label} produced a non-finite estimate")
        logger.debug(f"DV estimate for {label}: {estimate:.5f} (final loss {last_loss})")
        return max(estimate, 0.0)

    @staticmethod
    def _as_features(samples: np.ndarray) -> np.ndarray:
        samples = np.asarray(samples)
        if samples.ndim == 1:
            samples = samples[:, np.newaxis]
        if np.iscomplexobj(samples):
            return np.concatenate([samples.real, samples.imag], axis=1)
        return samples.astype(np.float64)

    def estimate_divergences(
        self,
        echo_sampler: EchoSampler,
        ps: PerturbationSet,
        net_cfg: DiscriminatorConfig,
        rng: np.random.Generator,
    ) -> np.ndarray:
        """One DV lower-bound estimate per perturbation, clipped at 0"""
        seeds = rng.integers(0, 2**62, size=(ps.D, 3))
        zero = np.zeros(ps.d)

        def run(i: int) -> float:
            p = self._as_features(
                echo_sampler(zero, net_cfg.n_samples, generator_from_seed(seeds[i, 0]))
            )
            q = self._as_features(
                echo_sampler(ps.deltas[i], net_cfg.n_samples, generator_from_seed(seeds[i, 1]))
            )
            return self._train_critic(p, q, net_cfg, seeds[i, 2], f"perturbation {i}")

        if net_cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=net_cfg.threads) as executor:
                values = list(executor.map(run, range(ps.D)))
        else:
            values = [run(i) for i in range(ps.D)]
        return np.asarray(values)

    def ls_fim(self, U: np.ndarray, d_vec: np.ndarray) -> np.ndarray:
        """f = 2 (U^T U)^-1 U^T d"""
        gram = U.T @ U
        if np.linalg.matrix_rank(gram) < gram.shape[0]:
            raise RankDeficientPerturbationError("U^T U is singular")
        return 2.0 * linalg.solve(gram, U.T @ d_vec, assume_a="sym")

    @staticmethod
    def _shrink_to_psd(J: np.ndarray) -> np.ndarray:
        """Scale the off-diagonal part by the largest t in [0, 1] keeping J PSD"""
        if linalg.eigvalsh(J)[0] >= 0:
            return J
        diag = np.diag(np.diag(J))
        off = J - diag
        if J.shape[0] == 2:
            t = np.sqrt(J[0, 0] * J[1, 1]) / abs(J[0, 1])
        else:
            lo, hi = 0.0, 1.0
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if linalg.eigvalsh(diag + mid * off)[0] >= 0:
                    lo = mid
                else:
                    hi = mid
            t = lo
        shrunk = diag + min(t, 1.0) * off
        return 0.5 * (shrunk + shrunk.T)

    def psd_refine(
        self,
        f_vec: np.ndarray,
        U: np.ndarray,
        d_vec: np.ndarray,
        anchors: Optional[Sequence[int]] = None,
        convention: CrlbConvention = CrlbConvention.SCALAR,
        max_iter: int = PSD_MAX_ITER,
        tol: float = PSD_TOL,
    ) -> FimEstimate:
        """
        Minimise ||2 d - U f||^2 with the anchored (diagonal) entries held at
        their LS values and mat(f) PSD: projected gradient steps on the free
        entries, each followed by PSD projection and anchor restoration. An
        unconstrained LS solution that is already PSD comes back unchanged.
        """
        dim = int(round((np.sqrt(8 * len(f_vec) + 1) - 1) / 2))
        anchors = list(range(dim)) if anchors is None else list(anchors)
        free = [i for i in range(len(f_vec)) if i not in anchors]
        f_ls = np.asarray(f_vec, dtype=np.float64)
        U = np.asarray(U, dtype=np.float64)
        target = 2.0 * np.asarray(d_vec, dtype=np.float64)
        converged = True

        if np.any(f_ls[anchors] < 0):
            logger.warning("Anchored Fisher entries are negative; returning the plain PSD projection")
            J = psd_project(vec_to_mat(f_ls, dim))
            converged = False
        else:
            U_free = U[:, free]
            lipschitz = float(linalg.norm(U_free, 2) ** 2) if free else 0.0
            step = 1.0 / lipschitz if lipschitz > 0 else 0.0
            f = f_ls.copy()
            for _ in range(max_iter):
                candidate = f.copy()
                candidate[free] -= step * (U_free.T @ (U @ f - target))
                candidate = mat_to_vec(psd_project(vec_to_mat(candidate, dim)))
                candidate[anchors] = f_ls[anchors]
                change = np.linalg.norm(candidate - f)
                f = candidate
                if change < tol:
                    break
            else:
                converged = False
                logger.warning(f"PSD refinement did not converge in {max_iter} iterations")
            J = self._shrink_to_psd(vec_to_mat(f, dim))

        crlb_theta, crlb_phi = self.crlb(J, convention)
        return FimEstimate(
            J=J,
            f_vec=mat_to_vec(J),
            U=U,
            d_vec=d_vec,
            source=FimSource.NONPARAMETRIC,
            convention=convention,
            crlb_theta=crlb_theta,
            crlb_phi=crlb_phi,
            converged=converged,
        )

    def gaussian_echo_sampler(
        self,
        sm: SensingModel,
        v: np.ndarray,
        zeta: float,
        alpha: complex = 1.0,
        imp: Optional[ImpairmentParams] = None,
    ) -> EchoSampler:
        """
        Echoes of the known probing frame x = sqrt(zeta) v at the perturbed
        angles: y = alpha G(theta + d1, phi + d2) x~ + n. With I/Q imbalance the
        transmitted frame is x~ = mu x + nu x*, which the closed forms ignore.
        """
        if sm.geometry is None:
            raise InvalidParameterError("sensing model carries no geometry to draw echoes from")

        def sample(delta: np.ndarray, n_samples: int, rng: np.random.Generator) -> np.ndarray:
            frame = waveform_service.probing_frame(v, zeta, n_samples)
            if imp is not None and not imp.is_ideal:
                frame = frame.model_copy(update={"x": waveform_service.apply_iq_imbalance(frame.x, imp)})
            G = channel_service.steering_matrix(sm.geometry, sm.theta + delta[0], sm.phi + delta[1])
            return waveform_service.echo(G, frame, alpha, sm.sigma_s2, rng).T

        return sample

    def fim_nonparametric(
        self,
        sm: SensingModel,
        v: np.ndarray,
        zeta: float,
        ps: PerturbationSet,
        net_cfg: DiscriminatorConfig,
        rng: np.random.Generator,
        convention: CrlbConvention = CrlbConvention.SCALAR,
        echo_sampler: Optional[EchoSampler] = None,
    ) -> FimEstimate:
        sampler = echo_sampler or self.gaussian_echo_sampler(sm, v, zeta)
        U = self.build_u_matrix(ps)
        d_vec = self.estimate_divergences(sampler, ps, net_cfg, rng)
        f_ls = self.ls_fim(U, d_vec)
        estimate = self.psd_refine(f_ls, U, d_vec, convention=convention)
        logger.info(
            f"Nonparametric FIM: diag=({estimate.J[0, 0]:.4g}, {estimate.J[1, 1]:.4g}), "
            f"divergences={np.round(d_vec, 4).tolist()}"
        )
        return estimate


# Global instance
fisher_service = FisherService()
