import numpy as np
import pytest
import torch

from app.models.neural import Activation, DenseLayerSpec, EncoderKind, QuantizationSpec, TTLayerSpec
from app.networks import autodiff
from app.networks.checkpoint import load_encoder, save_encoder
from app.networks.encoders import Decoder, SymbolMapper, build_encoder, default_architecture
from app.networks.layers import (
    DenseLayer,
    TTLinear,
    quantize_cores,
    quantize_values,
    tt_forward,
    tt_from_dense,
    tt_materialize,
    tt_param_count,
)
from app.networks.optim import adam_step, make_adam
from app.services.training_service import encoder_width, feature_width
from app.utils.errors import MissingForwardCacheError

PROBES = 64
FD_STEP = 1e-5


def _gradient_check(net: torch.nn.Module, x: torch.Tensor, seed: int = 0) -> float:
    """Worst relative error between backward() and central differences on random parameter entries"""
    gen = torch.Generator().manual_seed(seed)
    upstream = torch.randn(net(x).shape, generator=gen, dtype=torch.float64)
    autodiff.forward(net, x)
    grads = autodiff.backward(net, upstream)
    params = dict(net.named_parameters())
    names = sorted(params)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(PROBES):
        name = names[rng.integers(len(names))]
        flat = params[name].data.view(-1)
        i = int(rng.integers(flat.numel()))
        original = float(flat[i])
        with torch.no_grad():
            flat[i] = original + FD_STEP
            plus = float(torch.sum(upstream * net(x)))
            flat[i] = original - FD_STEP
            minus = float(torch.sum(upstream * net(x)))
            flat[i] = original
        numeric = (plus - minus) / (2 * FD_STEP)
        analytic = float(grads[name].reshape(-1)[i])
        worst = max(worst, abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-4))
    return worst


class TestGradients:
    @pytest.fixture
    def x(self):
        return torch.randn((16, 12), generator=torch.Generator().manual_seed(3), dtype=torch.float64)

    def test_dense_relu(self, x):
        net = DenseLayer(DenseLayerSpec(in_dim=12, out_dim=7, activation=Activation.RELU))
        assert _gradient_check(net, x) <= 1e-4

    def test_dense_batch_norm(self, x):
        net = DenseLayer(DenseLayerSpec(in_dim=12, out_dim=5, batch_norm=True))
        net.train()
        assert _gradient_check(net, x) <= 1e-4

    def test_dense_softmax(self, x):
        net = DenseLayer(DenseLayerSpec(in_dim=12, out_dim=4, activation=Activation.SOFTMAX))
        assert _gradient_check(net, x) <= 1e-4

    def test_tt_layer(self, x):
        gen = torch.Generator().manual_seed(1)
        net = TTLinear(TTLayerSpec(in_modes=(3, 4), out_modes=(2, 3), ranks=(1, 3, 1)), generator=gen)
        assert _gradient_check(net, x) <= 1e-4

    def test_dtte_encoder(self):
        arch = default_architecture(EncoderKind.DTTE, 13, 12, hidden=9, tt_out_dim=6, tt_rank=2)
        net = build_encoder(arch, torch.Generator().manual_seed(2))
        z = torch.randn((8, 13), generator=torch.Generator().manual_seed(4), dtype=torch.float64)
        assert _gradient_check(net, z) <= 1e-4

    def test_backward_needs_forward(self):
        net = DenseLayer(DenseLayerSpec(in_dim=2, out_dim=2))
        with pytest.raises(MissingForwardCacheError):
            autodiff.backward(net, torch.ones((1, 2), dtype=torch.float64))

    def test_cross_entropy_gradient(self):
        logits = torch.randn((6, 4), dtype=torch.float64, requires_grad=True)
        labels = torch.tensor([0, 1, 2, 3, 1, 0])
        (auto,) = torch.autograd.grad(autodiff.softmax_cross_entropy(logits, labels), logits)
        torch.testing.assert_close(autodiff.softmax_cross_entropy_grad(logits.detach(), labels), auto)


class TestTensorTrain:
    def test_full_rank_reconstruction(self):
        W = np.random.default_rng(0).standard_normal((12, 20))
        tt = tt_from_dense(W, in_modes=(4, 5), out_modes=(3, 4))
        error = np.linalg.norm(tt_materialize(tt) - W) / np.linalg.norm(W)
        assert error <= 1e-10

    def test_forward_matches_dense_product(self):
        rng = np.random.default_rng(1)
        W = rng.standard_normal((6, 8))
        tt = tt_from_dense(W, in_modes=(2, 4), out_modes=(3, 2))
        x = rng.standard_normal(8)
        np.testing.assert_allclose(tt_forward(tt, x), W @ x, atol=1e-10)

    def test_rank8_parameter_count(self):
        W = np.random.default_rng(2).standard_normal((256, 256))
        tt = tt_from_dense(W, in_modes=(16, 16), out_modes=(16, 16), max_ranks=8)
        assert tt.ranks == (1, 8, 1)
        assert tt_param_count(tt) == 4096

    def test_dtte_encoder_parameter_count(self):
        arch = default_architecture(EncoderKind.DTTE, feature_width(2, 16), encoder_width(2, 16))
        encoder = build_encoder(arch)
        assert arch.tt_in_modes == (8, 9)
        assert arch.tt_out_modes == (8, 8)
        assert encoder.parameter_count() == 28371

    def test_quantization_bound_and_grid(self):
        values = np.random.default_rng(3).standard_normal(1000)
        delta = 0.01
        q = quantize_values(values, delta)
        assert np.max(np.abs(q - values)) <= delta / 2 + 1e-15
        np.testing.assert_array_equal(q, delta * np.round(values / delta))

    def test_quantize_cores(self):
        tt = tt_from_dense(np.random.default_rng(4).standard_normal((4, 4)), (2, 2), (2, 2))
        quantized = quantize_cores(tt, QuantizationSpec(delta=0.05))
        for core in quantized.cores:
            np.testing.assert_allclose(core / 0.05, np.round(core / 0.05), atol=1e-9)

    def test_encoder_quantization_reports_weight_change(self):
        arch = default_architecture(EncoderKind.DTTE, 21, 24, hidden=10, tt_out_dim=12, tt_rank=3)
        encoder = build_encoder(arch, torch.Generator().manual_seed(0))
        changes = encoder.quantize_(QuantizationSpec(delta=0.05))
        assert len(changes) == len(encoder.tt_layers()) > 0
        assert all(0.0 < c < 1.0 for c in changes)
        # already on the grid
        assert encoder.quantize_(QuantizationSpec(delta=0.05)) == pytest.approx([0.0] * len(changes), abs=1e-12)


class TestModules:
    def test_encoder_pads_features(self):
        arch = default_architecture(EncoderKind.DTTE, 69, 96)
        out = build_encoder(arch)(torch.zeros((3, 69), dtype=torch.float64))
        assert out.shape == (3, 96)

    def test_fc_encoder(self):
        arch = default_architecture(EncoderKind.FC, 21, 24)
        out = build_encoder(arch)(torch.randn((5, 21), dtype=torch.float64))
        assert out.shape == (5, 24)

    def test_mapper_unit_energy(self):
        c = SymbolMapper(4).constellation()
        assert float(torch.mean(torch.abs(c) ** 2)) == pytest.approx(1.0)

    def test_decoder_probabilities(self):
        p = Decoder(4).probabilities(torch.zeros((2, 2), dtype=torch.float64))
        torch.testing.assert_close(p.sum(dim=-1), torch.ones(2, dtype=torch.float64))


class TestAdam:
    def test_first_step_moves_by_step_size(self):
        w = torch.nn.Parameter(torch.tensor([1.0, -2.0], dtype=torch.float64))
        state = make_adam([w], step_size=0.1)
        params, state = adam_step(state, {"w": w}, {"w": torch.tensor([3.0, -0.5], dtype=torch.float64)})
        torch.testing.assert_close(params["w"].detach(), torch.tensor([0.9, -1.9], dtype=torch.float64))
        assert state.step_count == 1

    def test_minimises_quadratic(self):
        w = torch.nn.Parameter(torch.tensor([5.0], dtype=torch.float64))
        params = {"w": w}
        state = make_adam(params.values(), step_size=0.1)
        for _ in range(300):
            (grad,) = torch.autograd.grad((w - 2.0) ** 2, [w])
            params, state = adam_step(state, params, {"w": grad})
        assert float(w) == pytest.approx(2.0, abs=5e-2)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        arch = default_architecture(EncoderKind.DTTE, 21, 24, hidden=10, tt_out_dim=12, tt_rank=3)
        encoder = build_encoder(arch, torch.Generator().manual_seed(0))
        encoder.eval()
        path = save_encoder(tmp_path / "encoder.pt", encoder, QuantizationSpec(delta=0.01))
        loaded, quantization = load_encoder(path)
        loaded.eval()
        z = torch.randn((4, 21), dtype=torch.float64)
        torch.testing.assert_close(loaded(z), encoder(z), rtol=0, atol=0)
        assert quantization.delta == 0.01

    def test_unknown_version_rejected(self, tmp_path):
        path = tmp_path / "bad.pt"
        torch.save({"format_version": 99}, path)
        with pytest.raises(ValueError):
            load_encoder(path)
