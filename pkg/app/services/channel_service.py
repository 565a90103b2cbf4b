import logging
from typing import Union

import numpy as np

from app.models.channel import (
    AngleParameter,
    AngleState,
    ArrayGeometry,
    ChannelRealization,
    CsiEstimate,
    PhaseReference,
    SteeringMode,
)
from app.utils.errors import InvalidParameterError
from app.utils.linalg import crandn

logger = logging.getLogger(__name__)


class ChannelService:
    """Rayleigh channels, CSI error and array steering with analytic derivatives"""

    def gen_rayleigh(
        self,
        geom: ArrayGeometry,
        n_users: int,
        n_sub: int,
        rng: np.random.Generator,
        sigma_c2: float = 1.0,
        sigma_e2: float = 1.0,
        sigma_s2: float = 1.0,
        alpha: complex = 1.0 + 0.0j,
    ) -> ChannelRealization:
        if n_users < 1 or n_sub < 1:
            raise InvalidParameterError(f"need K >= 1 and N >= 1, got K={n_users}, N={n_sub}")

        h_users = np.empty((n_sub, n_users, geom.n_tx), dtype=np.complex128)
        h_eve = np.empty((n_sub, geom.n_tx, geom.n_eve), dtype=np.complex128)
        # subcarrier by subcarrier so a smaller N is a prefix of a larger one
        for n in range(n_sub):
            h_users[n] = crandn(rng, (n_users, geom.n_tx))
            h_eve[n] = crandn(rng, (geom.n_tx, geom.n_eve))

        return ChannelRealization(
            h_users=h_users,
            h_eve=h_eve,
            sigma_c2=sigma_c2,
            sigma_e2=sigma_e2,
            sigma_s2=sigma_s2,
            alpha=complex(alpha),
        )

    def sample_eve_set(
        self, geom: ArrayGeometry, n_sub: int, draws: int, rng: np.random.Generator
    ) -> np.ndarray:
        """Extra Eve channels, shape (draws, N, N_t, N_e)"""
        out = np.empty((draws, n_sub, geom.n_tx, geom.n_eve), dtype=np.complex128)
        for n in range(n_sub):
            for s in range(draws):
                out[s, n] = crandn(rng, (geom.n_tx, geom.n_eve))
        return out

    def apply_csi_error(
        self, ch: ChannelRealization, rho: float, rng: np.random.Generator
    ) -> CsiEstimate:
        if rho < 0:
            raise InvalidParameterError(f"CSI error variance must be >= 0, got {rho}")

        delta = np.zeros_like(ch.h_users)
        if rho > 0:
            for n in range(ch.n_sub):
                delta[n] = crandn(rng, ch.h_users.shape[1:], variance=rho)
        return CsiEstimate(h_hat=ch.h_users + delta, delta_h=delta, rho_csi=rho)

    def _phase_offset(self, count: int, geom: ArrayGeometry) -> np.ndarray:
        idx = np.arange(count, dtype=np.float64)
        if geom.phase_reference == PhaseReference.CENTER:
            idx = idx - (count - 1) / 2.0
        return idx

    def _planar_terms(self, geom: ArrayGeometry, theta: float, phi: float):
        n_x, n_y = geom.tx_grid
        k = 2.0 * np.pi * geom.spacing
        mx = self._phase_offset(n_x, geom)
        my = self._phase_offset(n_y, geom)
        ux = np.sin(theta) * np.cos(phi)
        uy = np.sin(phi)
        a_x = np.exp(1j * k * mx * ux)
        a_y = np.exp(1j * k * my * uy)
        # d(ux), d(uy) with respect to (theta, phi)
        dux = (np.cos(theta) * np.cos(phi), -np.sin(theta) * np.sin(phi))
        duy = (0.0, np.cos(phi))
        return k, mx, my, a_x, a_y, dux, duy

    def tx_steering(self, geom: ArrayGeometry, theta: float, phi: float) -> np.ndarray:
        """Planar transmit response a = a_x kron a_y, length N_t"""
        _, _, _, a_x, a_y, _, _ = self._planar_terms(geom, theta, phi)
        return np.kron(a_x, a_y)

    def tx_steering_derivative(
        self, geom: ArrayGeometry, theta: float, phi: float, which: AngleParameter
    ) -> np.ndarray:
        k, mx, my, a_x, a_y, dux, duy = self._planar_terms(geom, theta, phi)
        slot = 0 if AngleParameter(which) == AngleParameter.THETA else 1
        da_x = 1j * k * mx * dux[slot] * a_x
        da_y = 1j * k * my * duy[slot] * a_y
        return np.kron(da_x, a_y) + np.kron(a_x, da_y)

    def rx_steering(self, geom: ArrayGeometry, theta: float, phi: float) -> np.ndarray:
        k = 2.0 * np.pi * geom.spacing
        m = self._phase_offset(geom.n_rx, geom)
        return np.exp(1j * k * m * np.sin(theta) * np.cos(phi))

    def rx_steering_derivative(
        self, geom: ArrayGeometry, theta: float, phi: float, which: AngleParameter
    ) -> np.ndarray:
        k = 2.0 * np.pi * geom.spacing
        m = self._phase_offset(geom.n_rx, geom)
        if AngleParameter(which) == AngleParameter.THETA:
            du = np.cos(theta) * np.cos(phi)
        else:
            du = -np.sin(theta) * np.sin(phi)
        return 1j * k * m * du * self.rx_steering(geom, theta, phi)

    def steering_matrix(self, geom: ArrayGeometry, theta: float, phi: float) -> np.ndarray:
        """
        Planar mode: 1 x N_t row a_x kron a_y.
        Bistatic mode: N_r x N_t outer product b a^H (rank one).
        """
        a = self.tx_steering(geom, theta, phi)
        if geom.mode == SteeringMode.PLANAR:
            return a[np.newaxis, :]
        b = self.rx_steering(geom, theta, phi)
        return np.outer(b, a.conj())

    def steering_derivative(
        self,
        geom: ArrayGeometry,
        theta: float,
        phi: float,
        which: Union[AngleParameter, str],
    ) -> np.ndarray:
        which = AngleParameter(which)
        da = self.tx_steering_derivative(geom, theta, phi, which)
        if geom.mode == SteeringMode.PLANAR:
            return da[np.newaxis, :]
        a = self.tx_steering(geom, theta, phi)
        b = self.rx_steering(geom, theta, phi)
        db = self.rx_steering_derivative(geom, theta, phi, which)
        return np.outer(db, a.conj()) + np.outer(b, da.conj())

    def perturb_angles(self, ang: AngleState, rng: np.random.Generator) -> AngleState:
        d_theta = rng.standard_normal() * np.sqrt(ang.sigma_theta2)
        d_phi = rng.standard_normal() * np.sqrt(ang.sigma_phi2)
        return ang.model_copy(
            update={"theta_hat": ang.theta + d_theta, "phi_hat": ang.phi + d_phi}
        )


# Global instance
channel_service = ChannelService()
