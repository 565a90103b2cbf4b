import numpy as np
import pytest

from app.models.beamforming import BeamformingSolution, LogBase
from app.models.channel import ArrayGeometry, ChannelRealization
from app.models.waveform import PowerAllocation
from app.services.beam_service import beam_service
from app.services.channel_service import channel_service
from app.services.rate_service import rate_service
from app.utils.linalg import crandn


class TestRates:
    @pytest.fixture
    def setup(self):
        rng = np.random.default_rng(21)
        geom = ArrayGeometry(n_tx=8, n_rx=4, n_eve=2)
        ch = channel_service.gen_rayleigh(geom, 2, 4, rng)
        users = beam_service.zf_beams(ch.h_users)
        fj = np.stack([beam_service.random_null_beams(beam_service.null_basis(ch.h_users[n]), 1, rng)[0] for n in range(4)])
        pa = PowerAllocation(comm_power=np.full((2, 4), 8.0), jam_power=np.full(4, 4.0), p_max=20.0)
        return ch, BeamformingSolution(user_beams=users, fj_beam=fj, pa=pa), rng

    def test_null_space_jamming_leaves_users_untouched(self, setup):
        ch, beams, _ = setup
        off = beams.model_copy(update={"pa": beams.pa.model_copy(update={"jam_power": np.zeros(4)})})
        on_report = rate_service.evaluate(ch, beams)
        off_report = rate_service.evaluate(ch, off)
        np.testing.assert_allclose(on_report.user_rates, off_report.user_rates, atol=1e-10)

    def test_jamming_reduces_eve_rate(self, setup):
        ch, beams, _ = setup
        off = beams.model_copy(update={"pa": beams.pa.model_copy(update={"jam_power": np.zeros(4)})})
        assert np.all(rate_service.evaluate(ch, beams).eve_rates <= rate_service.evaluate(ch, off).eve_rates + 1e-12)

    def test_leakage_matches_direct_logdet(self, setup):
        ch, beams, _ = setup
        k, n = 1, 2
        H_E = ch.h_eve[n]
        g = H_E.conj().T @ beams.user_beams[n, :, k]
        gv = H_E.conj().T @ beams.fj_beam[n]
        R = ch.sigma_e2 * np.eye(2) + beams.pa.jam_power[n] * np.outer(gv, gv.conj())
        M = np.eye(2) + beams.pa.comm_power[k, n] * np.linalg.solve(R, np.outer(g, g.conj()))
        expected = np.real(np.log(np.linalg.det(M)))
        assert rate_service.eve_leakage(ch, beams, beams.pa, k, n) == pytest.approx(expected, rel=1e-10)

    def test_secrecy_clipped_at_zero(self):
        report = rate_service.secrecy_rate(np.array([[1.0, 0.2]]), np.array([[0.5, 0.7]]))
        np.testing.assert_allclose(report.secrecy, [[0.5, 0.0]])
        assert report.sum_secrecy == pytest.approx(0.5)

    def test_single_user_unit_link(self):
        e1, e2 = np.eye(2, dtype=np.complex128)
        ch = ChannelRealization(h_users=e1.reshape(1, 1, 2), h_eve=e2.reshape(1, 2, 1))
        pa = PowerAllocation(comm_power=np.ones((1, 1)), jam_power=np.zeros(1), p_max=1.0)
        beams = BeamformingSolution(user_beams=e1.reshape(1, 2, 1), fj_beam=e2.reshape(1, 2), pa=pa)
        assert rate_service.user_rate(ch, beams, pa, 0, 0) == pytest.approx(np.log(2.0))
        assert rate_service.user_rate(ch, beams, pa, 0, 0, log_base=LogBase.BINARY) == pytest.approx(1.0)

    def test_worst_case_over_eve_set(self, setup):
        ch, beams, rng = setup
        extra = crandn(rng, (3, 4, 8, 2))
        single = rate_service.evaluate(ch, beams)
        worst = rate_service.evaluate(ch, beams, eve_set=extra)
        assert np.all(worst.eve_rates >= single.eve_rates - 1e-12)
        assert worst.sum_secrecy <= single.sum_secrecy + 1e-12

    def test_binary_log_base(self, setup):
        ch, beams, _ = setup
        nats = rate_service.evaluate(ch, beams)
        bits = rate_service.evaluate(ch, beams, log_base=LogBase.BINARY)
        np.testing.assert_allclose(bits.user_rates, nats.user_rates / np.log(2.0))

    def test_prelog_factor(self, setup):
        ch, beams, _ = setup
        full = rate_service.evaluate(ch, beams)
        half = rate_service.evaluate(ch, beams, tau_bar=0.5)
        assert half.sum_secrecy == pytest.approx(0.5 * full.sum_secrecy)
