import numpy as np
import numpy.testing as npt
import pytest

from normlab.checkpoint import load_checkpoint, save_checkpoint
from normlab.errors import FormatError
from normlab.norm import EVAL, NormScheme
from normlab.resnet import ModelConfig, build_model
from normlab.tensor import Tensor


def trained_ish_model(scheme="batchnorm", seed=3):
    config = ModelConfig((1, 1, 1, 1), "basic", NormScheme(scheme), 10, 8)
    model = build_model(config, seed=seed)
    x = Tensor(np.random.default_rng(seed).standard_normal((4, 3, 16, 16)))
    model(x)  # moves running stats for normalizing schemes
    return model


class TestRoundTrip:
    @pytest.mark.parametrize("scheme", ["batchnorm", "affine", "batchnorm-minus", "none"])
    def test_all_state_survives(self, tmp_path, scheme):
        model = trained_ish_model(scheme)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)

        assert loaded.config == model.config
        assert loaded.mode == EVAL
        for (name_a, ta), (name_b, tb) in zip(model.named_weights(), loaded.named_weights()):
            assert name_a == name_b
            npt.assert_array_equal(ta.data, tb.data)
        for (name_a, la), (name_b, lb) in zip(model.norm_layers(), loaded.norm_layers()):
            assert name_a == name_b
            npt.assert_array_equal(la.gamma.data, lb.gamma.data)
            npt.assert_array_equal(la.beta.data, lb.beta.data)
            npt.assert_array_equal(la.running_mean, lb.running_mean)
            npt.assert_array_equal(la.running_var, lb.running_var)
            assert la.epsilon == lb.epsilon

    def test_identical_predictions_after_reload(self, tmp_path):
        model = trained_ish_model("batchnorm")
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        model.set_mode(EVAL)
        x = Tensor(np.random.default_rng(7).standard_normal((5, 3, 16, 16)))
        npt.assert_array_equal(model(x).data, loaded(x).data)

    def test_save_is_byte_deterministic(self, tmp_path):
        model = trained_ish_model("batchnorm")
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(model, a)
        save_checkpoint(model, b)
        assert a.read_bytes() == b.read_bytes()

    def test_trainable_flags_restored(self, tmp_path):
        model = trained_ish_model("batchnorm-minus")
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        for _, layer in loaded.norm_layers():
            assert layer.trainable is False


class TestBadFiles:
    def test_architecture_mismatch_rejected(self, tmp_path):
        import json
        import struct

        model = trained_ish_model()
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        raw = path.read_bytes()
        # widen the architecture in the header; the stored tensor table no
        # longer matches what the rebuilt model expects
        (old_len,) = struct.unpack("<Q", raw[8:16])
        header = json.loads(raw[16 : 16 + old_len].decode())
        header["base_width"] = 16
        new_header = json.dumps(header, sort_keys=True).encode()
        path.write_bytes(
            raw[:8] + struct.pack("<Q", len(new_header)) + new_header + raw[16 + old_len :]
        )
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_truncated_rejected(self, tmp_path):
        model = trained_ish_model()
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_trailing_garbage_rejected(self, tmp_path):
        model = trained_ish_model()
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(FormatError):
            load_checkpoint(path)
