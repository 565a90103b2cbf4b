import logging
from typing import Optional

import numpy as np

from app.models.beamforming import BeamformingSolution, LogBase, RateReport
from app.models.channel import ChannelRealization
from app.models.waveform import PowerAllocation
from app.utils.errors import NotPositiveDefiniteError
from app.utils.linalg import logdet_hermitian

logger = logging.getLogger(__name__)


def _to_base(nats: float, log_base: LogBase) -> float:
    return nats / np.log(2.0) if LogBase(log_base) == LogBase.BINARY else nats


class RateService:
    """User, eavesdropper and secrecy rates per user and subcarrier"""

    def sinr(
        self, ch: ChannelRealization, beams: BeamformingSolution, pa: PowerAllocation, k: int, n: int
    ) -> float:
        h = ch.h_users[n, k]
        gains = np.abs(h @ beams.user_beams[n]) ** 2 * pa.comm_power[:, n]
        signal = gains[k]
        interference = np.sum(gains) - signal
        interference += pa.jam_power[n] * np.abs(h @ beams.fj_beam[n]) ** 2
        if beams.distorted:
            interference += np.sum(np.abs(h @ beams.image_beams[n]) ** 2 * pa.comm_power[:, n])
            interference += pa.jam_power[n] * np.abs(h @ beams.image_fj[n]) ** 2
        return float(signal / (interference + ch.sigma_c2))

    def user_rate(
        self,
        ch: ChannelRealization,
        beams: BeamformingSolution,
        pa: PowerAllocation,
        k: int,
        n: int,
        tau_bar: float = 1.0,
        log_base: LogBase = LogBase.NATURAL,
    ) -> float:
        return tau_bar * _to_base(float(np.log1p(self.sinr(ch, beams, pa, k, n))), log_base)

    def eve_leakage(
        self,
        ch: ChannelRealization,
        beams: BeamformingSolution,
        pa: PowerAllocation,
        k: int,
        n: int,
        tau_bar: float = 1.0,
        log_base: LogBase = LogBase.NATURAL,
        h_eve: Optional[np.ndarray] = None,
    ) -> float:
        """
        log det(I + gamma_k R^-1 g g^H) with g = H_E^H f_k and
        R = zeta H_E^H v v^H H_E + sigma_E^2 I, evaluated as logdet(R + gamma g g^H) - logdet(R).
        """
        H_E = ch.h_eve[n] if h_eve is None else h_eve
        n_eve = H_E.shape[1]
        g = H_E.conj().T @ beams.user_beams[n, :, k]
        g_v = H_E.conj().T @ beams.fj_beam[n]

        R = ch.sigma_e2 * np.eye(n_eve, dtype=np.complex128)
        R += pa.jam_power[n] * np.outer(g_v, g_v.conj())
        if beams.distorted:
            g_vi = H_E.conj().T @ beams.image_fj[n]
            R += pa.jam_power[n] * np.outer(g_vi, g_vi.conj())
            images = H_E.conj().T @ beams.image_beams[n]
            R += (images * pa.comm_power[:, n]) @ images.conj().T
        try:
            value = logdet_hermitian(R + pa.comm_power[k, n] * np.outer(g, g.conj())) - logdet_hermitian(R)
        except NotPositiveDefiniteError as e:
            logger.error(f"Eve covariance singular on subcarrier {n}: {e}")
            raise
        return tau_bar * _to_base(max(value, 0.0), log_base)

    def rate_arrays(
        self,
        ch: ChannelRealization,
        beams: BeamformingSolution,
        pa: PowerAllocation,
        eve_set: Optional[np.ndarray] = None,
        tau_bar: float = 1.0,
        log_base: LogBase = LogBase.NATURAL,
    ):
        """(user_rates, eve_rates) of shape (K, N); Eve term is the worst case over the set"""
        n_users, n_sub = pa.comm_power.shape
        user = np.zeros((n_users, n_sub))
        eve = np.zeros((n_users, n_sub))
        for n in range(n_sub):
            eve_channels = [ch.h_eve[n]]
            if eve_set is not None:
                eve_channels.extend(eve_set[:, n])
            for k in range(n_users):
                user[k, n] = self.user_rate(ch, beams, pa, k, n, tau_bar, log_base)
                eve[k, n] = max(
                    self.eve_leakage(ch, beams, pa, k, n, tau_bar, log_base, h_eve=H_E)
                    for H_E in eve_channels
                )
        return user, eve

    def secrecy_rate(
        self,
        user_rates: np.ndarray,
        eve_rates: np.ndarray,
        tau_bar: float = 1.0,
        log_base: LogBase = LogBase.NATURAL,
    ) -> RateReport:
        secrecy = np.maximum(user_rates - eve_rates, 0.0)
        return RateReport(
            user_rates=user_rates,
            eve_rates=eve_rates,
            secrecy=secrecy,
            sum_secrecy=float(np.sum(secrecy)),
            tau_bar=tau_bar,
            log_base=log_base,
        )

    def evaluate(
        self,
        ch: ChannelRealization,
        beams: BeamformingSolution,
        eve_set: Optional[np.ndarray] = None,
        tau_bar: float = 1.0,
        log_base: LogBase = LogBase.NATURAL,
    ) -> RateReport:
        user, eve = self.rate_arrays(ch, beams, beams.pa, eve_set, tau_bar, log_base)
        return self.secrecy_rate(user, eve, tau_bar, log_base)


# Global instance
rate_service = RateService()
