import numpy as np
import pytest

from dehazer.model import (ModelConfig, backward, decoder_forward,
                           encoder_forward, forward, init_params, layer_specs,
                           param_count, param_shapes, shape_plan,
                           transform_forward)
from dehazer.tensor import ShapeError

DEFAULT = ModelConfig()
TINY = ModelConfig(base_channels=8, encoder_levels=2, res_blocks=2)


def layer_param_counts(config):
    """Independent per-layer enumeration: what each layer must contribute."""
    counts = {}
    c = config.base_channels
    k0 = config.stem_kernel
    counts["enc.0"] = k0 * k0 * config.image_channels * c + c
    for i in range(1, config.encoder_levels + 1):
        counts[f"enc.{i}"] = 9 * c * 2 * c + 2 * c
        c *= 2
    for b in range(config.res_blocks):
        counts[f"res.{b:02d}.conv1"] = 9 * c * c + c
        counts[f"res.{b:02d}.conv2"] = 9 * c * c + c
    for j in range(config.encoder_levels, 0, -1):
        counts[f"dec.{j}"] = 9 * c * (c // 2) + c // 2
        c //= 2
    counts["out"] = 9 * c * config.image_channels + config.image_channels
    return counts


class TestConfig:
    def test_bottleneck_channels(self):
        assert DEFAULT.bottleneck_channels == 256
        assert TINY.bottleneck_channels == 32

    def test_rejects_invalid(self):
        with pytest.raises(ValueError):
            ModelConfig(res_blocks=0)
        with pytest.raises(ValueError):
            ModelConfig(stem_kernel=4)
        with pytest.raises(ValueError):
            ModelConfig(encoder_levels=0)


class TestInitParams:
    def test_deterministic_per_seed(self):
        a = init_params(TINY, seed=5)
        b = init_params(TINY, seed=5)
        assert sorted(a) == sorted(b)
        for key in a:
            np.testing.assert_array_equal(a[key], b[key])
        c = init_params(TINY, seed=6)
        assert any(not np.array_equal(a[k], c[k]) for k in a)

    def test_default_key_count_is_92(self):
        # (5 encoder + 2*18 block + 4 decoder + 1 output) layers, x2 tensors
        params = init_params(DEFAULT, seed=0)
        assert len(params) == (5 + 2 * 18 + 4 + 1) * 2 == 92
        assert set(params) == set(param_shapes(DEFAULT))

    def test_biases_zero_and_weight_scale(self):
        params = init_params(DEFAULT, seed=1)
        for name, kind, spec in layer_specs(DEFAULT):
            assert not params[f"{name}.bias"].any()
            w = params[f"{name}.weight"]
            if name == "out":
                assert not w.any()  # zero-start projection
                continue
            expected = np.sqrt(2.0 / (spec.in_channels * spec.kernel ** 2))
            assert abs(w.std() / expected - 1.0) < 0.2, name


class TestParamCount:
    def test_matches_per_layer_enumeration(self):
        for cfg in (DEFAULT, TINY):
            assert param_count(cfg) == sum(layer_param_counts(cfg).values())

    def test_matches_actual_store(self):
        params = init_params(TINY, seed=0)
        assert param_count(TINY) == sum(p.size for p in params.values())

    def test_encoder_decoder_only_total(self):
        # the res_blocks=0 hypothetical: subtract the enumerated block cost
        counts = layer_param_counts(DEFAULT)
        block_total = sum(v for k, v in counts.items() if k.startswith("res."))
        expected = sum(v for k, v in counts.items() if not k.startswith("res."))
        assert param_count(DEFAULT) - block_total == expected

    def test_doubling_base_roughly_quadruples(self):
        small = param_count(ModelConfig(base_channels=16))
        big = param_count(ModelConfig(base_channels=32))
        assert 3.5 < big / small < 4.5


class TestShapePlan:
    def test_64_input(self):
        plan = shape_plan(64, 64, DEFAULT)
        assert plan.bottleneck_dims() == (256, 4, 4)
        assert plan.divisible

    def test_4k_input(self):
        plan = shape_plan(3840, 2160, DEFAULT)
        assert plan.bottleneck_dims() == (256, 240, 135)

    def test_indivisible_flagged(self):
        plan = shape_plan(50, 50, DEFAULT)
        assert not plan.divisible

    def test_output_row_matches_input(self):
        plan = shape_plan(128, 96, DEFAULT)
        name, dims = plan.rows[-1]
        assert name == "out" and dims == (3, 128, 96)


class TestEncoder:
    def test_level_dims_16_input(self):
        params = init_params(DEFAULT, seed=0)
        x = np.random.default_rng(0).uniform(0, 1, (1, 3, 16, 16)).astype(np.float32)
        outs = encoder_forward(x, params, DEFAULT)
        dims = [tuple(o.shape) for o in outs]
        assert dims == [(1, 16, 16, 16), (1, 32, 8, 8), (1, 64, 4, 4),
                        (1, 128, 2, 2), (1, 256, 1, 1)]

    def test_bottleneck_is_sixteenth_scale_at_64(self):
        params = init_params(DEFAULT, seed=0)
        x = np.random.default_rng(1).uniform(0, 1, (1, 3, 64, 64)).astype(np.float32)
        outs = encoder_forward(x, params, DEFAULT)
        assert outs[-1].shape == (1, 256, 4, 4)

    def test_outputs_nonnegative(self):
        params = init_params(TINY, seed=0)
        x = np.random.default_rng(1).uniform(0, 1, (2, 3, 16, 16)).astype(np.float32)
        for out in encoder_forward(x, params, TINY):
            assert (out >= 0).all()

    def test_indivisible_input_mentions_padding(self):
        params = init_params(TINY, seed=0)
        with pytest.raises(ShapeError, match="pad"):
            encoder_forward(np.zeros((1, 3, 15, 16), np.float32), params, TINY)


class TestTransform:
    def test_zero_weights_doubles_input(self):
        # identity blocks make the stack a no-op; the shortcut then doubles
        zeros = {k: np.zeros_like(v) for k, v in init_params(TINY, seed=0).items()}
        x = np.random.default_rng(2).standard_normal((1, 32, 4, 4)).astype(np.float32)
        np.testing.assert_allclose(transform_forward(x, zeros, TINY), 2 * x,
                                   rtol=1e-6)

    def test_preserves_dims(self):
        params = init_params(TINY, seed=0)
        x = np.random.default_rng(3).standard_normal((1, 32, 4, 4)).astype(np.float32)
        assert transform_forward(x, params, TINY).shape == x.shape

    def test_one_block_matches_manual_composition(self):
        from dehazer.tensor import ConvSpec, add_channels, conv2d, relu

        cfg = ModelConfig(base_channels=8, encoder_levels=2, res_blocks=1)
        params = init_params(cfg, seed=4, dtype=np.float64)
        x = np.random.default_rng(4).standard_normal((1, 32, 5, 5))
        spec = ConvSpec(3, 1, 1, 32, 32)
        z1 = conv2d(x, params["res.00.conv1.weight"], params["res.00.conv1.bias"],
                    spec)
        z2 = conv2d(relu(z1), params["res.00.conv2.weight"],
                    params["res.00.conv2.bias"], spec)
        manual = add_channels(x, add_channels(x, z2))  # block skip + shortcut
        np.testing.assert_allclose(transform_forward(x, params, cfg), manual,
                                   rtol=1e-6)

    def test_channel_mismatch_rejected(self):
        params = init_params(TINY, seed=0)
        with pytest.raises(ShapeError):
            transform_forward(np.zeros((1, 16, 4, 4), np.float32), params, TINY)


class TestDecoder:
    def test_skip_toggle_changes_output(self):
        cfg_on = TINY
        cfg_off = ModelConfig(base_channels=8, encoder_levels=2, res_blocks=2,
                              skip_connections=False)
        rng = np.random.default_rng(5)
        params = init_params(cfg_on, seed=5)
        for key in params:  # make every layer generic, incl. the zero-start one
            params[key] = params[key] + 0.05 * rng.standard_normal(
                params[key].shape).astype(np.float32)
        x = rng.uniform(0, 1, (1, 3, 16, 16)).astype(np.float32)
        on, _ = forward(x, params, cfg_on, keep_trace=False)
        off, _ = forward(x, params, cfg_off, keep_trace=False)
        assert not np.allclose(on, off)

    def test_zero_weight_final_conv_broadcasts_bias(self):
        params = init_params(TINY, seed=6)
        params["out.weight"][:] = 0.0
        params["out.bias"][:] = np.array([0.25, -0.5, 1.0], np.float32)
        x = np.random.default_rng(6).uniform(0, 1, (1, 3, 16, 16)).astype(np.float32)
        out, _ = forward(x, params, TINY, keep_trace=False)
        for c, val in enumerate(params["out.bias"]):
            np.testing.assert_allclose(out[0, c], np.full((16, 16), val), rtol=1e-6)

    def test_fusion_mismatch_names_level(self):
        params = init_params(TINY, seed=7)
        fused = np.zeros((1, 32, 4, 4), np.float32)
        skips = [np.zeros((1, 8, 16, 16), np.float32),
                 np.zeros((1, 16, 9, 9), np.float32)]  # wrong level-1 dims
        with pytest.raises(ShapeError, match="level 1"):
            decoder_forward(fused, skips, params, TINY)


class TestForwardBackward:
    def test_shape_symmetry(self):
        params = init_params(TINY, seed=8)
        x = np.random.default_rng(8).uniform(0, 1, (2, 3, 32, 48)).astype(np.float32)
        out, trace = forward(x, params, TINY)
        assert out.shape == x.shape
        assert trace.output_shape == tuple(x.shape)

    def test_deterministic(self):
        params = init_params(TINY, seed=9)
        x = np.random.default_rng(9).uniform(0, 1, (1, 3, 16, 16)).astype(np.float32)
        a, _ = forward(x, params, TINY, keep_trace=False)
        b, _ = forward(x, params, TINY, keep_trace=False)
        np.testing.assert_array_equal(a, b)

    def test_trace_and_no_trace_agree(self):
        params = init_params(TINY, seed=10)
        x = np.random.default_rng(10).uniform(0, 1, (1, 3, 16, 16)).astype(np.float32)
        with_trace, _ = forward(x, params, TINY)
        without, _ = forward(x, params, TINY, keep_trace=False)
        np.testing.assert_array_equal(with_trace, without)

    def test_finite_on_unit_inputs(self):
        params = init_params(DEFAULT, seed=11)
        x = np.random.default_rng(11).uniform(0, 1, (1, 3, 32, 32)).astype(np.float32)
        out, _ = forward(x, params, DEFAULT, keep_trace=False)
        assert np.all(np.isfinite(out))

    def test_all_zero_params_give_zero_output(self):
        zeros = {k: np.zeros_like(v) for k, v in init_params(TINY, seed=0).items()}
        x = np.random.default_rng(12).uniform(0, 1, (1, 3, 16, 16)).astype(np.float32)
        out, _ = forward(x, zeros, TINY, keep_trace=False)
        assert not out.any()

    def test_zero_cotangent_gives_zero_grads(self):
        params = init_params(TINY, seed=13)
        x = np.random.default_rng(13).uniform(0, 1, (1, 3, 16, 16)).astype(np.float32)
        out, trace = forward(x, params, TINY)
        grads = backward(trace, np.zeros_like(out), params, TINY)
        assert set(grads) == set(params)
        assert all(not g.any() for g in grads.values())

    def test_stale_trace_rejected(self):
        params = init_params(TINY, seed=14)
        x = np.random.default_rng(14).uniform(0, 1, (1, 3, 16, 16)).astype(np.float32)
        out, trace = forward(x, params, TINY)
        other = ModelConfig(base_channels=8, encoder_levels=2, res_blocks=3)
        with pytest.raises(ValueError):
            backward(trace, np.zeros_like(out), params, other)
        with pytest.raises(ShapeError):
            backward(trace, np.zeros((1, 3, 8, 8), np.float32), params, TINY)


def _spot_check_fd(cfg, seed, coords=24, step=1e-5):
    rng = np.random.default_rng(seed)
    params = init_params(cfg, seed=seed, dtype=np.float64)
    for key in params:  # perturb so biases and the zero-start layer are generic
        params[key] = params[key] + 0.01 * rng.standard_normal(params[key].shape)
    x = rng.uniform(0, 1, (1, 3, 16, 16))
    out, trace = forward(x, params, cfg)
    cot = rng.standard_normal(out.shape)
    grads = backward(trace, cot, params, cfg)

    def loss():
        o, _ = forward(x, params, cfg, keep_trace=False)
        return float(np.vdot(o, cot))

    worst = 0.0
    keys = sorted(params)
    for _ in range(coords):
        key = keys[int(rng.integers(len(keys)))]
        flat = params[key].reshape(-1)
        i = int(rng.integers(flat.size))
        orig = flat[i]
        flat[i] = orig + step
        lp = loss()
        flat[i] = orig - step
        lm = loss()
        flat[i] = orig
        fd = (lp - lm) / (2 * step)
        a = float(grads[key].reshape(-1)[i])
        worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-6))
    return worst


class TestGradientsAgainstFiniteDifferences:
    def test_whole_network_spot_check(self):
        worst = _spot_check_fd(TINY, seed=0)
        assert worst < 1e-3, worst

    def test_skip_gradients_two_level_config(self):
        # encoder maps feed both the chain and the fusion path; the summed
        # gradient must match finite differences
        cfg = ModelConfig(base_channels=4, encoder_levels=2, res_blocks=1)
        worst = _spot_check_fd(cfg, seed=1)
        assert worst < 1e-3, worst

    def test_no_skip_variant(self):
        cfg = ModelConfig(base_channels=4, encoder_levels=2, res_blocks=1,
                          skip_connections=False)
        worst = _spot_check_fd(cfg, seed=2)
        assert worst < 1e-3, worst


class TestAblationConfigsBuild:
    @pytest.mark.parametrize("blocks", [6, 12, 18, 24])
    def test_forward_backward_run(self, blocks):
        cfg = ModelConfig(res_blocks=blocks)
        params = init_params(cfg, seed=blocks)
        x = np.random.default_rng(blocks).uniform(0, 1, (1, 3, 32, 32)).astype(
            np.float32)
        out, trace = forward(x, params, cfg)
        assert out.shape == x.shape
        grads = backward(trace, np.ones_like(out), params, cfg)
        assert set(grads) == set(params)


class TestShapeFuzz:
    @pytest.mark.parametrize("seed", range(12))
    def test_divisible_inputs_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        h = 16 * int(rng.integers(1, 5))
        w = 16 * int(rng.integers(1, 5))
        cfg = ModelConfig(base_channels=4, encoder_levels=int(rng.integers(1, 5)),
                          res_blocks=1)
        factor = cfg.spatial_factor
        h = max(h, factor)
        w = max(w, factor)
        h -= h % factor
        w -= w % factor
        params = init_params(cfg, seed=seed)
        x = rng.uniform(0, 1, (1, 3, h, w)).astype(np.float32)
        out, _ = forward(x, params, cfg, keep_trace=False)
        assert out.shape == x.shape
        plan = shape_plan(h, w, cfg)
        assert plan.bottleneck_dims() == (cfg.bottleneck_channels,
                                          h // factor, w // factor)
