import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apbsn.bsn import BsnConfig, build_bsn
from apbsn.tensor import Tensor, backward, mul, no_grad, sum_all
from conftest import assert_grad_close
from reference import bsn_ref, central_diff, sample_indices

SMALL = BsnConfig(in_channels=3, base_channels=8, dc_modules_per_branch=2)


def randomize_biases(model, rng):
    # non-zero biases keep relus from being uniformly dead at init
    for layer in model.layers.values():
        layer.bias.data[:] = rng.uniform(0.0, 0.1, layer.bias.shape)
    return model


def input_gradient(model, x, n, c, y, xx):
    t = Tensor(x, requires_grad=True)
    out = model(t)
    sel = np.zeros(out.shape, np.float32)
    sel[n, c, y, xx] = 1.0
    backward(sum_all(mul(out, Tensor(sel))))
    return t.grad


@pytest.fixture(scope="module")
def small_model():
    return randomize_biases(build_bsn(SMALL, seed=3), np.random.default_rng(3))


class TestConfig:
    @pytest.mark.parametrize("branch", [(3, 1), (5, 2), (3, 3), (5, 4)])
    def test_leaky_dilation_rejected(self, branch):
        with pytest.raises(ValueError, match="dilation"):
            BsnConfig(branch_specs=(branch,))

    def test_even_mask_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            BsnConfig(branch_specs=((4, 2),))

    def test_dict_roundtrip(self):
        cfg = BsnConfig(in_channels=1, base_channels=12, dc_modules_per_branch=4)
        assert BsnConfig.from_dict(cfg.to_dict()) == cfg

    def test_full_size_parameter_count(self):
        model = build_bsn(BsnConfig(base_channels=128, dc_modules_per_branch=9))
        n = model.num_parameters()
        assert 3.5e6 <= n <= 3.9e6, n


class TestForward:
    def test_shape(self, small_model, rng):
        out = small_model(Tensor(rng.random((2, 3, 9, 11))))
        assert out.shape == (2, 3, 9, 11)

    def test_matches_float64_reference(self, small_model, rng):
        x = rng.random((2, 3, 10, 10)).astype(np.float32)
        with no_grad():
            out = small_model(Tensor(x)).data
        np.testing.assert_allclose(out, bsn_ref(small_model, x), rtol=1e-4, atol=1e-5)

    def test_wrong_channels(self, small_model):
        with pytest.raises(ValueError, match="channels"):
            small_model(Tensor(np.zeros((1, 1, 8, 8))))

    def test_wrong_rank(self, small_model):
        with pytest.raises(ValueError, match="N, C, H, W"):
            small_model(Tensor(np.zeros((3, 8, 8))))

    def test_build_is_deterministic(self):
        a = build_bsn(SMALL, seed=11).state_dict()
        b = build_bsn(SMALL, seed=11).state_dict()
        c = build_bsn(SMALL, seed=12).state_dict()
        assert all(a[k].tobytes() == b[k].tobytes() for k in a)
        assert any(a[k].tobytes() != c[k].tobytes() for k in a)

    def test_state_dict_roundtrip_and_errors(self, small_model):
        other = build_bsn(SMALL, seed=99)
        other.load_state_dict(small_model.state_dict())
        for k, v in small_model.state_dict().items():
            np.testing.assert_array_equal(other.state_dict()[k], v)
        state = small_model.state_dict()
        state["head.weight"] = np.zeros((1, 1, 1, 1))
        with pytest.raises(ValueError, match="shape mismatch"):
            other.load_state_dict(state)
        del state["head.weight"]
        with pytest.raises(ValueError, match="missing"):
            other.load_state_dict(state)


class TestBlindSpot:
    def test_autodiff_centre_is_zero(self, small_model, rng):
        x = rng.random((1, 3, 24, 24))
        for y, xx in [(12, 12), (0, 0), (5, 20), (23, 23)]:
            for c in range(3):
                g = input_gradient(small_model, x, 0, c, y, xx)
                assert np.all(g[0, :, y, xx] == 0.0)
                # the pixel is blind but its neighbourhood is not
                assert np.abs(g[0]).sum() > 0

    def test_perturbing_centre_leaves_output(self, small_model, rng):
        x = rng.random((1, 3, 20, 20)).astype(np.float32)
        with no_grad():
            base = small_model(Tensor(x)).data
            for y, xx in rng.integers(0, 20, (20, 2)):
                xp = x.copy()
                xp[0, :, y, xx] += 10.0
                out = small_model(Tensor(xp)).data
                # bit-exact: the centre tap only ever multiplies a zero weight
                assert out[0, :, y, xx].tobytes() == base[0, :, y, xx].tobytes()
                assert np.abs(out - base).max() > 1e-4

    def test_zero_input_zero_bias_gives_zero(self):
        model = build_bsn(SMALL, seed=0)
        out = model(Tensor(np.zeros((1, 3, 12, 12)))).data
        assert not out.any()

    def test_unmasked_control_sees_centre(self, rng):
        cfg = BsnConfig(in_channels=3, base_channels=8, dc_modules_per_branch=2, center_masked=False)
        model = randomize_biases(build_bsn(cfg, seed=3), rng)
        g = input_gradient(model, rng.random((1, 3, 20, 20)), 0, 0, 10, 10)
        assert np.abs(g[0, :, 10, 10]).sum() > 0

    def test_receptive_field_extends_beyond_mask(self, small_model, rng):
        g = input_gradient(small_model, rng.random((1, 3, 41, 41)), 0, 1, 20, 20)
        ys, xs = np.nonzero(np.abs(g[0]).sum(0))
        reach = max(np.abs(ys - 20).max(), np.abs(xs - 20).max())
        # masked 5x5 plus two dilation-3 modules reaches 2 + 2 * 3 pixels
        assert reach == 8

    def test_masked_layers_have_zero_effective_centre(self, small_model):
        for name, layer in small_model.layers.items():
            if name.endswith(".masked"):
                k = layer.weight.shape[-1]
                assert not layer.effective_weight()[:, :, k // 2, k // 2].any()


@settings(max_examples=15, deadline=None)
@given(
    seed=st.integers(0, 2**16),
    y=st.integers(0, 15),
    x=st.integers(0, 15),
    dc=st.integers(0, 3),
    branches=st.sampled_from([((3, 2),), ((5, 3),), ((3, 2), (5, 3)), ((7, 4), (3, 2))]),
)
def test_blind_spot_holds_for_any_weights(seed, y, x, dc, branches):
    rng = np.random.default_rng(seed)
    cfg = BsnConfig(in_channels=2, base_channels=4, dc_modules_per_branch=dc, branch_specs=branches)
    model = randomize_biases(build_bsn(cfg, seed=seed), rng)
    g = input_gradient(model, rng.random((1, 2, 16, 16)), 0, int(rng.integers(2)), y, x)
    assert np.all(g[0, :, y, x] == 0.0)


def test_mini_bsn_gradients_match_finite_differences():
    rng = np.random.default_rng(21)
    cfg = BsnConfig(in_channels=2, base_channels=4, dc_modules_per_branch=1)
    model = randomize_biases(build_bsn(cfg, seed=21), rng)
    x = rng.random((1, 2, 9, 9))
    tx = Tensor(x, requires_grad=True)
    out = model(tx)
    r = rng.standard_normal(out.shape).astype(np.float32)
    backward(sum_all(mul(out, Tensor(r))))

    # float64 copies that bsn_ref reads through the model's layer objects
    x64 = tx.data.astype(np.float64)
    originals = {}
    for name, layer in model.layers.items():
        originals[name] = (layer.weight.data, layer.bias.data)
        layer.weight.data = layer.weight.data.astype(np.float64)
        layer.bias.data = layer.bias.data.astype(np.float64)
    try:
        def f():
            return float((bsn_ref(model, x64) * r).sum())

        targets = [(x64, tx.grad)]
        for name in ("head", "branch0.masked", "branch1.dc0.dilated", "tail0", "tail3"):
            layer = model.layers[name]
            targets.append((layer.weight.data, layer.weight.grad))
            targets.append((layer.bias.data, layer.bias.grad))
        for arr, grad in targets:
            idx = sample_indices(arr.shape, 8, rng)
            assert_grad_close([grad[i] for i in idx], central_diff(f, arr, idx, eps=1e-4))
    finally:
        for name, (w, b) in originals.items():
            model.layers[name].weight.data, model.layers[name].bias.data = w, b
