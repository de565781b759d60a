import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from s5rf.config import ModelConfig
from s5rf.discretize import analytic_state
from s5rf.errors import InvalidInputError
from s5rf.hippo import SsmLayerParams, init_layer
from s5rf.layers import (
    RFLayer,
    ReadoutParams,
    S5RFModel,
    SpikeFunction,
    apply_connection,
    apply_connection_sparse,
    encoder_forward,
    readout_forward,
    rf_layer_forward,
    smooth_step,
    spike_forward,
    surrogate_grad,
)


def t64(x):
    return torch.as_tensor(np.asarray(x), dtype=torch.float64)


def single_neuron(decay, omega, eta=1.0, b=1.0):
    return SsmLayerParams(
        log_neg_real=np.array([math.log(decay)]),
        freq=np.array([omega]),
        log_eta=np.array([math.log(eta)]),
        connection=np.array([[b]], dtype=np.complex128),
    )


def test_spike_forward_examples():
    x = torch.tensor([1.2 + 5j, 0.99 - 1j, 1.0 + 0j], dtype=torch.complex128)
    np.testing.assert_array_equal(spike_forward(x, 1.0).numpy(), [1, 0, 1])
    assert set(spike_forward(torch.randn(50, 4), 0.3).unique().tolist()) <= {0.0, 1.0}


def test_surrogate_values():
    for v in (0.1, 0.5, 2.0):
        assert surrogate_grad(v).item() == pytest.approx(surrogate_grad(-v).item(), abs=1e-15)
    expected = 1.15 - 0.3 * math.exp(-1 / 72)
    assert surrogate_grad(0.0).item() == pytest.approx(expected, abs=1e-6)
    assert surrogate_grad(torch.tensor(0.0, dtype=torch.float64)).item() == pytest.approx(expected, abs=1e-15)
    assert abs(surrogate_grad(torch.tensor([60.0, -60.0], dtype=torch.float64))).max() < 1e-12


@given(st.floats(-5, 5))
def test_smooth_step_derivative_is_surrogate(v):
    x = torch.tensor(v, dtype=torch.float64, requires_grad=True)
    smooth_step(x).backward()
    assert x.grad.item() == pytest.approx(surrogate_grad(x.detach()).item(), abs=1e-12)


def test_spike_function_backward_uses_surrogate():
    v = torch.linspace(-2, 2, 9, dtype=torch.float64, requires_grad=True)
    out = SpikeFunction.apply(v, 0.15, 6.0, 0.5)
    out.sum().backward()
    np.testing.assert_allclose(out.detach().numpy(), (v.detach() >= 0).double().numpy())
    np.testing.assert_allclose(v.grad.numpy(), surrogate_grad(v.detach()).numpy(), atol=1e-15)


def test_zero_input_no_spikes():
    p = init_layer(3, 8, 8, seed=0)
    assert rf_layer_forward(p, np.zeros((20, 3))).sum() == 0


def test_pulse_spikes_then_decays():
    p = single_neuron(0.3, 0.0)
    u = np.zeros((30, 1))
    u[0] = 5.0
    s = rf_layer_forward(p, u).numpy()[:, 0]
    # oracle: Re(x_k) = 5 exp(-0.3 k) crosses 1 after ln(5)/0.3 steps
    expected = (5 * np.exp(-0.3 * np.arange(30)) >= 1).astype(float)
    np.testing.assert_array_equal(s, expected)
    assert s[0] == 1 and s[-1] == 0


def test_impulse_response_matches_analytic():
    decay, omega = 0.2, 1.3
    layer = RFLayer(single_neuron(decay, omega), activation="linear", dtype=torch.float64)
    u = torch.zeros(25, 1, dtype=torch.float64)
    u[0] = 1
    v = layer(u).detach().numpy()[:, 0]
    lam = -decay + 1j * omega
    exact = [analytic_state(lam, [(0.0, 1.0)], k).real for k in range(25)]
    np.testing.assert_allclose(v, exact, atol=1e-14)
    np.testing.assert_allclose(v, np.exp(-decay * np.arange(25)) * np.cos(omega * np.arange(25)), atol=1e-14)


def test_layer_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        rf_layer_forward(init_layer(3, 8, 8, seed=0), np.zeros((4, 5)))


def test_fixed_basis_layer_spikes_on_rotated_state():
    p = init_layer(2, 8, 8, seed=1, mode="zoh", fixed_basis=True)
    layer = RFLayer(p, activation="linear", dtype=torch.float64)
    u = t64(np.random.default_rng(0).standard_normal((10, 2)))
    v, states = layer.potential(u, return_states=True)
    rotated = (states.detach().numpy() @ p.fixed_basis.T).real
    np.testing.assert_allclose(v.detach().numpy(), rotated, atol=1e-12)
    assert "basis_re" not in dict(layer.named_parameters())
    v.sum().backward()
    assert layer.conn_re.grad is not None


def test_conjugate_pairs_spike_together():
    p = init_layer(3, 8, 8, seed=4)
    for i in range(4):
        p.connection[7 - i] = np.conj(p.connection[i])
    np.testing.assert_allclose(p.lambdas[::-1], np.conj(p.lambdas), atol=1e-12)
    layer = RFLayer(p, dtype=torch.float64)
    u = t64(np.random.default_rng(1).standard_normal((30, 3)) * 3)
    v, states = layer.potential(u, return_states=True)
    x = states.detach().numpy()
    np.testing.assert_allclose(x[:, ::-1], np.conj(x), atol=1e-12)
    s = layer(u).detach().numpy()
    np.testing.assert_array_equal(s[:, ::-1], s)


def test_sparse_drive_equals_dense():
    rng = np.random.default_rng(2)
    spikes = (rng.random((40, 16)) < 0.1).astype(np.float64)
    b = torch.tensor(rng.standard_normal((8, 16)) + 1j * rng.standard_normal((8, 16)))
    dense = apply_connection(t64(spikes), b)
    sparse = apply_connection_sparse(t64(spikes), b)
    assert torch.max(torch.abs(dense - sparse)) < 1e-12


def test_encoder_examples():
    u = t64(np.random.default_rng(3).standard_normal((5, 4)))
    np.testing.assert_allclose(encoder_forward(torch.eye(4, dtype=torch.float64), u), u)
    assert not encoder_forward(t64(np.ones((3, 2))), torch.zeros(5, 2, dtype=torch.float64)).any()
    w = np.array([[1.0, -2.0], [0.5, 3.0], [0.0, 1.0]])
    x = np.array([[2.0, 1.0], [-1.0, 4.0]])
    np.testing.assert_allclose(encoder_forward(t64(w), t64(x)).numpy(), x @ w.T)
    with pytest.raises(InvalidInputError):
        encoder_forward(t64(w), t64(np.ones((2, 3))))


def test_readout_examples():
    w = t64([[1.0, 2.0], [-1.0, 0.5]])
    tau = -1 / math.log(0.9)
    params = ReadoutParams(w, t64([math.log(tau)] * 2))
    s = torch.zeros(12, 2, dtype=torch.float64)
    assert not readout_forward(params, s).any()
    s[0] = t64([1.0, 1.0])
    y = readout_forward(params, s).numpy()
    expected = 0.9 ** np.arange(12)[:, None] * np.array([3.0, -0.5])
    np.testing.assert_allclose(y, expected, rtol=1e-12)
    s2 = (torch.rand(12, 2) < 0.5).double()
    fast = ReadoutParams(w, t64([math.log(1e-3)] * 2))
    np.testing.assert_allclose(readout_forward(fast, s2).numpy(), (s2 @ w.T).numpy(), atol=1e-300)


def small_model(**kw):
    cfg = ModelConfig(input_dim=3, layer_sizes=[8, 8], block_size=4, num_classes=5, seed=7, **kw)
    return S5RFModel(cfg, dtype=torch.float64)


def test_model_zero_input():
    m = S5RFModel(ModelConfig(input_dim=3, layer_sizes=[8], block_size=8, num_classes=4), dtype=torch.float64)
    assert not m(torch.zeros(2, 10, 3, dtype=torch.float64)).any()


def test_model_deterministic_and_readout_permutation():
    u = (torch.rand(4, 16, 3, generator=torch.Generator().manual_seed(0)) < 0.4).double()
    m1, m2 = small_model(), small_model()
    assert torch.equal(m1(u), m2(u))
    perm = torch.tensor([3, 0, 4, 1, 2])
    base = m1(u)
    with torch.no_grad():
        m1.readout.weight.copy_(m1.readout.weight[perm])
    assert torch.allclose(m1(u), base[:, perm], atol=1e-14)


def test_model_shapes_and_errors():
    m = small_model()
    assert m(torch.zeros(16, 3, dtype=torch.float64)).shape == (5,)
    with pytest.raises(InvalidInputError):
        m(torch.zeros(2, 16, 4, dtype=torch.float64))


@pytest.mark.parametrize("first", ["dirac", "zoh"])
def test_linear_diagnostic_mode_is_homogeneous(first):
    m = small_model(activation="linear", first_layer_mode=first)
    u = torch.randn(2, 16, 3, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
    for alpha in (-2.0, 0.5, 3.0):
        np.testing.assert_allclose(m(alpha * u).detach().numpy(), alpha * m(u).detach().numpy(), rtol=1e-10, atol=1e-12)


def test_skip_connections_only_between_equal_widths():
    cfg = ModelConfig(input_dim=2, layer_sizes=[8, 4], block_size=4, num_classes=3, activation="linear")
    m = S5RFModel(cfg, dtype=torch.float64)
    u = torch.randn(1, 6, 2, dtype=torch.float64)
    logits, acts = m(u, return_spikes=True)
    x = m.encoder(u)
    x = acts[0] + x
    expected = m.readout(acts[1]).mean(-2)
    np.testing.assert_allclose(logits.detach().numpy(), expected.detach().numpy(), atol=1e-14)
