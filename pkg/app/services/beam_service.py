"""
Beam construction shared by training and the Monte Carlo policies: zero-forcing
user beams, null-space friendly-jamming candidates and the CRLB-gated
max-trace selection rule.
"""

import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from app.models.fisher import CrlbConvention, DiscriminatorConfig, FimEstimate, PerturbationDesign, SensingModel
from app.models.waveform import ImpairmentParams
from app.services.fisher_service import fisher_service
from app.utils.errors import InvalidParameterError
from app.utils.linalg import crandn, null_projector, null_space, unit_vector

logger = logging.getLogger(__name__)

FimPipeline = Callable[[SensingModel, np.ndarray, float], FimEstimate]


def closed_form_pipeline(convention: CrlbConvention = CrlbConvention.SCALAR) -> FimPipeline:
    def estimate(sm: SensingModel, v: np.ndarray, zeta: float) -> FimEstimate:
        return fisher_service.closed_form_estimate(sm, v, zeta, convention)

    return estimate


def nonparametric_pipeline(
    net_cfg: DiscriminatorConfig,
    rng: np.random.Generator,
    scale: float = 0.05,
    count: int = 4,
    design: PerturbationDesign = PerturbationDesign.AXIAL,
    convention: CrlbConvention = CrlbConvention.SCALAR,
    alpha: complex = 1.0,
    imp: Optional[ImpairmentParams] = None,
) -> FimPipeline:
    """FIM of each candidate learned from simulated echoes rather than read off the model"""

    def estimate(sm: SensingModel, v: np.ndarray, zeta: float) -> FimEstimate:
        # silent probing carries no angle information
        if zeta <= 0:
            return fisher_service.closed_form_estimate(sm, v, zeta, convention)
        ps = fisher_service.make_perturbation_set(rng, scale, count, design)
        sampler = fisher_service.gaussian_echo_sampler(sm, v, zeta, alpha, imp)
        return fisher_service.fim_nonparametric(sm, v, zeta, ps, net_cfg, rng, convention, sampler)

    return estimate


def within_thresholds(crlb_theta: float, crlb_phi: float, thresholds: Tuple[float, float]) -> bool:
    return crlb_theta <= thresholds[0] and crlb_phi <= thresholds[1]


class BeamService:
    def null_basis(self, h_hat: np.ndarray) -> np.ndarray:
        """Orthonormal basis (N_t, N_t - rank) of the null space of one subcarrier's H_hat"""
        return null_space(h_hat)

    def null_projector(self, h_hat: np.ndarray) -> np.ndarray:
        """Orthogonal projector (N_t, N_t) onto the null space of one subcarrier's H_hat"""
        return null_projector(h_hat)

    def project_to_null(self, u: np.ndarray, basis: np.ndarray) -> np.ndarray:
        v = basis @ (basis.conj().T @ u)
        norm = np.linalg.norm(v)
        if norm < 1e-12:
            # u orthogonal to the null space; fall back to its first basis direction
            return basis[:, 0].copy()
        return v / norm

    def zf_beams(self, h_hat: np.ndarray) -> np.ndarray:
        """Unit-norm zero-forcing columns for every subcarrier, shape (N, N_t, K)"""
        n_sub, n_users, n_tx = h_hat.shape
        if n_users > n_tx:
            raise InvalidParameterError(f"zero forcing needs K <= N_t, got K={n_users}, N_t={n_tx}")
        beams = np.empty((n_sub, n_tx, n_users), dtype=np.complex128)
        for n in range(n_sub):
            W = linalg.pinv(h_hat[n])
            beams[n] = W / np.linalg.norm(W, axis=0, keepdims=True)
        return beams

    def random_null_beams(
        self, basis: np.ndarray, count: int, rng: np.random.Generator
    ) -> List[np.ndarray]:
        return [unit_vector(basis @ crandn(rng, basis.shape[1])) for _ in range(count)]

    def principal_null_beam(self, basis: np.ndarray, M: np.ndarray) -> np.ndarray:
        """Null-space beam maximising v^H M v (principal eigenvector of B^H M B)"""
        reduced = basis.conj().T @ M @ basis
        _, vecs = linalg.eigh(0.5 * (reduced + reduced.conj().T))
        return unit_vector(basis @ vecs[:, -1])

    def refine_beam(
        self, v: np.ndarray, basis: np.ndarray, M: np.ndarray, step: float
    ) -> np.ndarray:
        """One projected ascent step on v^H M v, kept unit-norm inside the null space"""
        grad = M @ v
        norm = np.linalg.norm(grad)
        if norm == 0:
            return v.copy()
        return self.project_to_null(v + step * grad / norm, basis)

    def select_fj_beam(
        self,
        candidates: Sequence[np.ndarray],
        sm: SensingModel,
        zeta: float,
        thresholds: Tuple[float, float],
        pipeline: Optional[FimPipeline] = None,
    ) -> Tuple[int, FimEstimate, bool]:
        """
        Index of the candidate with the largest FIM trace among those meeting both
        CRLB thresholds. With no feasible candidate the overall max-trace one is
        returned and flagged infeasible.
        """
        if not candidates:
            raise InvalidParameterError("no FJ candidates to select from")
        pipeline = pipeline or closed_form_pipeline()
        estimates = [pipeline(sm, v, zeta) for v in candidates]
        feasible = [
            i for i, e in enumerate(estimates) if within_thresholds(e.crlb_theta, e.crlb_phi, thresholds)
        ]
        pool = feasible or list(range(len(candidates)))
        best = max(pool, key=lambda i: estimates[i].trace)
        return best, estimates[best], bool(feasible)


# Global instance
beam_service = BeamService()
