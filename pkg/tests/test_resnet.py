import numpy as np
import numpy.testing as npt
import pytest

from normlab.errors import ConfigError, InputError
from normlab.norm import EVAL, TRAIN, NormScheme
from normlab.optim import SGD, Adam
from normlab.resnet import (
    BASIC,
    BOTTLENECK,
    BasicBlock,
    BlockSpec,
    BottleneckBlock,
    ModelConfig,
    build_model,
    preset_config,
)
from normlab.tensor import Tensor, global_avg_pool, relu, softmax_cross_entropy

TINY = ModelConfig((1, 1, 1, 1), BASIC, NormScheme.NONE, num_classes=10, base_width=8)


def tiny_config(scheme, kind=BASIC, width=8):
    return ModelConfig((1, 1, 1, 1), kind, NormScheme(scheme), 10, width)


class TestBlockSpec:
    def test_basic_requires_matching_out_channels(self):
        with pytest.raises(ConfigError):
            BlockSpec(BASIC, 8, 8, 16, 1, NormScheme.NONE)

    def test_bottleneck_expands_by_four(self):
        spec = BlockSpec(BOTTLENECK, 64, 64, 256, 1, NormScheme.NONE)
        assert spec.out_channels == 4 * spec.mid_channels
        with pytest.raises(ConfigError):
            BlockSpec(BOTTLENECK, 64, 64, 128, 1, NormScheme.NONE)

    def test_projection_rule(self):
        assert not BlockSpec(BASIC, 8, 8, 8, 1, NormScheme.NONE).needs_projection
        assert BlockSpec(BASIC, 8, 8, 8, 2, NormScheme.NONE).needs_projection
        assert BlockSpec(BASIC, 4, 8, 8, 1, NormScheme.NONE).needs_projection


class TestBlockForward:
    def test_zero_residual_branch_is_relu_of_input(self):
        rng = np.random.default_rng(0)
        spec = BlockSpec(BASIC, 4, 4, 4, 1, NormScheme.NONE)
        block = BasicBlock(spec, 1e-5, 0.1, rng)
        for conv in block.convs:
            conv.weight.data[:] = 0.0
        x = rng.standard_normal((2, 4, 6, 6))
        out = block(Tensor(x))
        npt.assert_array_equal(out.data, np.maximum(x, 0.0))

    def test_zero_residual_gradient_is_relu_mask(self):
        rng = np.random.default_rng(1)
        spec = BlockSpec(BASIC, 3, 3, 3, 1, NormScheme.NONE)
        block = BasicBlock(spec, 1e-5, 0.1, rng)
        for conv in block.convs:
            conv.weight.data[:] = 0.0
        x = rng.standard_normal((1, 3, 4, 4))
        xt = Tensor(x, requires_grad=True)
        block(xt).sum().backward()
        npt.assert_array_equal(xt.grad, (x > 0).astype(float))

    def test_stride_halves_spatial_extent(self):
        rng = np.random.default_rng(2)
        spec = BlockSpec(BOTTLENECK, 8, 4, 16, 2, NormScheme.BATCH_NORM)
        block = BottleneckBlock(spec, 1e-5, 0.1, rng)
        out = block(Tensor(rng.standard_normal((2, 8, 8, 8))))
        assert out.shape == (2, 16, 4, 4)

    def test_wrong_channel_count_rejected(self):
        rng = np.random.default_rng(3)
        spec = BlockSpec(BASIC, 4, 4, 4, 1, NormScheme.NONE)
        block = BasicBlock(spec, 1e-5, 0.1, rng)
        with pytest.raises(ConfigError):
            block(Tensor(np.zeros((1, 5, 4, 4))))


class TestBuildModel:
    def test_resnet18_logit_shape(self):
        model = build_model(preset_config("resnet18", NormScheme.BATCH_NORM), seed=0)
        x = Tensor(np.random.default_rng(0).standard_normal((4, 3, 32, 32)))
        assert model(x).shape == (4, 10)

    def test_parameter_count_monotone_in_depth(self):
        big = build_model(preset_config("resnet18", NormScheme.NONE), seed=0)
        small = build_model(tiny_config("none", width=16), seed=0)
        assert big.parameter_count() > small.parameter_count()

    def test_same_seed_same_parameters(self):
        a = build_model(tiny_config("batchnorm"), seed=7)
        b = build_model(tiny_config("batchnorm"), seed=7)
        for (name_a, ta), (name_b, tb) in zip(a.named_weights(), b.named_weights()):
            assert name_a == name_b
            npt.assert_array_equal(ta.data, tb.data)

    def test_different_seed_different_parameters(self):
        a = build_model(TINY, seed=0)
        b = build_model(TINY, seed=1)
        assert not np.array_equal(a.stem_conv.weight.data, b.stem_conv.weight.data)

    def test_conv_weights_identical_across_schemes(self):
        # frozen schemes must not consume random draws
        models = [build_model(tiny_config(tag), seed=3) for tag in
                  ("batchnorm", "affine", "batchnorm-minus", "none")]
        ref = models[0]
        for other in models[1:]:
            for (_, ta), (_, tb) in zip(ref.named_weights(), other.named_weights()):
                npt.assert_array_equal(ta.data, tb.data)

    def test_unknown_preset_rejected(self):
        with pytest.raises(ConfigError):
            preset_config("resnet1202", NormScheme.NONE)

    def test_bottleneck_head_width(self):
        model = build_model(tiny_config("none", kind=BOTTLENECK, width=8), seed=0)
        assert model.head.weight.shape == (10, 8 * 8 * 4)


class TestModelForward:
    def test_stage_spatial_extents(self):
        model = build_model(tiny_config("batchnorm"), seed=0)
        x = Tensor(np.random.default_rng(4).standard_normal((2, 3, 32, 32)))
        model.set_mode(TRAIN)
        activations = []
        h = relu(model.stem_norm(model.stem_conv(x)))
        activations.append(h.shape[2])
        for stage in model.stages:
            for block in stage:
                h = block(h)
            activations.append(h.shape[2])
        assert activations == [32, 32, 16, 8, 4]

    def test_wrong_channel_count_rejected(self):
        model = build_model(TINY, seed=0)
        with pytest.raises(InputError):
            model(Tensor(np.zeros((1, 1, 32, 32))))

    def test_scheme_never_changes_any_activation_shape(self):
        x = Tensor(np.random.default_rng(5).standard_normal((3, 3, 16, 16)))
        traces = []
        for tag in ("batchnorm", "affine", "batchnorm-minus", "none"):
            model = build_model(tiny_config(tag), seed=0)
            shapes = []
            h = relu(model.stem_norm(model.stem_conv(x)))
            shapes.append(h.shape)
            for stage in model.stages:
                for block in stage:
                    h = block(h)
                    shapes.append(h.shape)
            logits = model.head(global_avg_pool(h))
            shapes.append(logits.shape)
            traces.append(tuple(shapes))
        assert len(set(traces)) == 1
        assert traces[0][-1] == (3, 10)

    def test_zeroed_head_gives_uniform_loss(self):
        model = build_model(TINY, seed=0)
        model.head.weight.data[:] = 0.0
        model.head.bias.data[:] = 0.0
        x = Tensor(np.random.default_rng(6).standard_normal((4, 3, 16, 16)))
        logits = model(x)
        npt.assert_array_equal(logits.data, np.zeros((4, 10)))
        loss = softmax_cross_entropy(logits, [0, 1, 2, 3])
        npt.assert_allclose(loss.item(), np.log(10.0), rtol=1e-12)

    def test_train_mode_updates_running_stats_eval_does_not(self):
        model = build_model(tiny_config("batchnorm"), seed=0)
        x = Tensor(np.random.default_rng(7).standard_normal((4, 3, 16, 16)))
        before = model.stem_norm.running_mean.copy()
        model.set_mode(TRAIN)
        model(x)
        after_train = model.stem_norm.running_mean.copy()
        assert not np.array_equal(before, after_train)
        model.set_mode(EVAL)
        model(x)
        npt.assert_array_equal(model.stem_norm.running_mean, after_train)


class TestFrozenVsMinusTrajectory:
    def test_frozen_batchnorm_matches_batchnorm_minus(self):
        rng = np.random.default_rng(11)
        images = rng.random((8, 3, 16, 16))
        labels = rng.integers(0, 10, size=8)

        def train_20_steps(tag, freeze):
            model = build_model(tiny_config(tag), seed=5)
            if freeze:
                model.freeze_norm_affine()
            opt = Adam(model.parameters(), lr=1e-3)
            losses = []
            for _ in range(20):
                opt.zero_grad()
                loss = softmax_cross_entropy(model(Tensor(images)), labels)
                loss.backward()
                opt.step()
                losses.append(loss.item())
            return np.array(losses)

        frozen_bn = train_20_steps("batchnorm", freeze=True)
        minus = train_20_steps("batchnorm-minus", freeze=False)
        assert np.max(np.abs(frozen_bn - minus)) < 1e-9


class TestNoneSchemeTrains:
    def test_loss_decreases_on_separable_task(self):
        rng = np.random.default_rng(13)
        # two linearly separable channel-mean classes
        images = np.empty((16, 3, 8, 8))
        labels = np.arange(16) % 2
        for i, lab in enumerate(labels):
            base = 0.25 if lab == 0 else 0.75
            images[i] = base + 0.05 * rng.standard_normal((3, 8, 8))
        model = build_model(
            ModelConfig((1, 1, 1, 1), BASIC, NormScheme.NONE, 2, 8), seed=1
        )
        opt = SGD(model.parameters(), lr=0.2)
        losses = []
        for _ in range(50):
            opt.zero_grad()
            loss = softmax_cross_entropy(model(Tensor(images)), labels)
            loss.backward()
            opt.step()
            losses.append(loss.item())
        assert all(b < a for a, b in zip(losses, losses[1:]))
        assert losses[-1] < 0.6 * losses[0]
