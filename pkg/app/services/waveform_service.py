import logging
from typing import Optional, Union

import numpy as np

from app.models.beamforming import BeamformingSolution
from app.models.channel import ChannelRealization
from app.models.waveform import ImpairmentParams, PowerAllocation, PowerMode, TransmitFrame
from app.utils.errors import InvalidParameterError, ShapeMismatchError
from app.utils.linalg import crandn

logger = logging.getLogger(__name__)

QPSK_POINTS = np.array([1 + 1j, -1 + 1j, 1 - 1j, -1 - 1j], dtype=np.complex128) / np.sqrt(2.0)


class WaveformService:
    """Transmit assembly, power budgets, QPSK, radar echoes and hardware impairments"""

    def qpsk_map(self, msg: Union[int, np.ndarray]) -> Union[complex, np.ndarray]:
        """Gray-coded unit-energy QPSK; bit 0 drives the real sign, bit 1 the imaginary"""
        idx = np.asarray(msg)
        if np.any((idx < 0) | (idx > 3)):
            raise InvalidParameterError("QPSK message index must lie in {0, 1, 2, 3}")
        symbols = QPSK_POINTS[idx]
        return complex(symbols) if symbols.ndim == 0 else symbols

    def qpsk_demap(self, y: Union[complex, np.ndarray]) -> Union[int, np.ndarray]:
        y = np.asarray(y)
        idx = (np.real(y) < 0).astype(np.int64) + 2 * (np.imag(y) < 0).astype(np.int64)
        return int(idx) if idx.ndim == 0 else idx

    def probing_frame(self, v: np.ndarray, zeta: float, n_snapshots: int) -> TransmitFrame:
        """
        Jamming-only frame repeating the known probing symbol eta = 1, one
        column per snapshot: x = sqrt(zeta) v.
        """
        v = np.asarray(v, dtype=np.complex128)
        n_tx = v.shape[0]
        silent = np.zeros((1, n_snapshots))
        beams = BeamformingSolution(
            user_beams=np.zeros((n_snapshots, n_tx, 1), dtype=np.complex128),
            fj_beam=np.tile(v, (n_snapshots, 1)),
            pa=PowerAllocation(comm_power=silent, jam_power=np.full(n_snapshots, float(zeta))),
        )
        frame = TransmitFrame(
            messages=silent.astype(np.int64),
            symbols=silent.astype(np.complex128),
            jam_samples=np.ones(n_snapshots, dtype=np.complex128),
        )
        return self.assemble_tx(beams, beams.pa, frame)

    def assemble_tx(
        self, beams: BeamformingSolution, pa: PowerAllocation, frame: TransmitFrame
    ) -> TransmitFrame:
        n_sub, n_tx, n_users = beams.user_beams.shape
        if frame.symbols.shape != (n_users, n_sub) or frame.jam_samples.shape != (n_sub,):
            raise ShapeMismatchError(
                f"frame symbols {frame.symbols.shape} / jamming {frame.jam_samples.shape} "
                f"do not match K={n_users}, N={n_sub}"
            )
        if pa.comm_power.shape != (n_users, n_sub) or pa.jam_power.shape != (n_sub,):
            raise ShapeMismatchError("power allocation does not match the beams")

        # x[:, n] = sum_k sqrt(gamma_k) f_k s_k + sqrt(zeta) v eta
        weights = np.sqrt(pa.comm_power).T * frame.symbols.T  # (N, K)
        comm = np.einsum("ntk,nk->tn", beams.user_beams, weights)
        jam = (beams.fj_beam * (np.sqrt(pa.jam_power) * frame.jam_samples)[:, np.newaxis]).T
        return frame.model_copy(update={"x": comm + jam})

    def subcarrier_powers(self, pa: PowerAllocation, beams: BeamformingSolution) -> np.ndarray:
        user_norms = np.sum(np.abs(beams.user_beams) ** 2, axis=1).T  # (K, N)
        fj_norms = np.sum(np.abs(beams.fj_beam) ** 2, axis=1)
        return np.sum(pa.comm_power * user_norms, axis=0) + pa.jam_power * fj_norms

    def enforce_power(
        self,
        pa: PowerAllocation,
        beams: BeamformingSolution,
        mode: Optional[PowerMode] = None,
    ) -> PowerAllocation:
        """Uniformly scale down an allocation that violates its budget; never scales up"""
        mode = PowerMode(mode) if mode is not None else pa.mode
        per_sub = self.subcarrier_powers(pa, beams)

        if mode == PowerMode.AVERAGE:
            total = float(np.mean(per_sub))
            scale = np.full(pa.n_sub, min(1.0, pa.p_max / total) if total > 0 else 1.0)
        else:
            budget = pa.p_max / pa.n_sub
            scale = np.ones(pa.n_sub)
            over = per_sub > budget
            scale[over] = budget / per_sub[over]

        if np.all(scale == 1.0):
            return pa.model_copy(update={"mode": mode})
        return pa.model_copy(
            update={
                "comm_power": pa.comm_power * scale[np.newaxis, :],
                "jam_power": pa.jam_power * scale,
                "mode": mode,
            }
        )

    def radar_echo(
        self,
        ch: ChannelRealization,
        G: np.ndarray,
        frame: TransmitFrame,
        rng: np.random.Generator,
    ) -> np.ndarray:
        """Y_s = alpha G X + N_s, columns indexed by subcarrier"""
        return self.echo(G, frame, ch.alpha, ch.sigma_s2, rng)

    def echo(
        self,
        G: np.ndarray,
        frame: TransmitFrame,
        alpha: complex,
        sigma_s2: float,
        rng: np.random.Generator,
    ) -> np.ndarray:
        if frame.x is None:
            raise InvalidParameterError("frame has not been assembled")
        if G.shape[1] != frame.x.shape[0]:
            raise ShapeMismatchError(f"steering {G.shape} cannot act on X {frame.x.shape}")
        clean = alpha * (G @ frame.x)
        return clean + crandn(rng, clean.shape, variance=sigma_s2)

    def wiener_phase(
        self, shape, sigma_pn2: float, rng: np.random.Generator
    ) -> np.ndarray:
        """Gaussian random walk along the last axis with phi[..., 0] = 0"""
        shape = tuple(np.atleast_1d(shape))
        if sigma_pn2 < 0:
            raise InvalidParameterError(f"phase-noise variance must be >= 0, got {sigma_pn2}")
        if sigma_pn2 == 0:
            return np.zeros(shape)
        steps = rng.standard_normal(shape[:-1] + (shape[-1] - 1,)) * np.sqrt(sigma_pn2)
        walk = np.cumsum(steps, axis=-1)
        return np.concatenate([np.zeros(shape[:-1] + (1,)), walk], axis=-1)

    def apply_phase_noise(
        self, signal: np.ndarray, imp: ImpairmentParams, rng: np.random.Generator
    ) -> np.ndarray:
        signal = np.asarray(signal, dtype=np.complex128)
        if imp.sigma_pn2 == 0:
            return signal.copy()
        if imp.per_antenna or signal.ndim == 1:
            phi = self.wiener_phase(signal.shape, imp.sigma_pn2, rng)
        else:
            phi = self.wiener_phase(signal.shape[-1:], imp.sigma_pn2, rng)
        return signal * np.exp(1j * phi)

    def apply_iq_imbalance(self, x: np.ndarray, imp: ImpairmentParams) -> np.ndarray:
        x = np.asarray(x, dtype=np.complex128)
        return imp.mu * x + imp.nu * np.conj(x)

    def distort_beams(
        self,
        beams: BeamformingSolution,
        imp: ImpairmentParams,
        rng: np.random.Generator,
    ) -> BeamformingSolution:
        """
        Transmit-side impairments folded into the precoders.

        I/Q imbalance then phase noise gives x~ = D(mu x + nu x*), so each beam
        b splits into a direct part mu D b and an image part nu D conj(b) that
        carries the conjugated symbol.
        """
        if imp.is_ideal:
            return beams
        n_sub, n_tx, _ = beams.user_beams.shape
        if imp.per_antenna:
            phi = self.wiener_phase((n_tx, n_sub), imp.sigma_pn2, rng).T  # (N, N_t)
        else:
            phi = np.repeat(self.wiener_phase((n_sub,), imp.sigma_pn2, rng)[:, None], n_tx, axis=1)
        rot = np.exp(1j * phi)

        users = rot[:, :, np.newaxis] * beams.user_beams
        users_conj = rot[:, :, np.newaxis] * np.conj(beams.user_beams)
        fj = rot * beams.fj_beam
        fj_conj = rot * np.conj(beams.fj_beam)
        return beams.model_copy(
            update={
                "user_beams": imp.mu * users,
                "fj_beam": imp.mu * fj,
                "image_beams": imp.nu * users_conj,
                "image_fj": imp.nu * fj_conj,
            }
        )


# Global instance
waveform_service = WaveformService()
