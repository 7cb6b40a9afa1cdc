"""Binary model checkpoints.

Layout (all integers little-endian):

    magic   4 bytes  b"NLCP"
    version u32      currently 1
    config  u64 length + UTF-8 JSON (architecture + epsilon + momentum)
    tensors u64 count, then per tensor:
                u16 name length + UTF-8 name
                u8 ndim, u64 per dim
                raw float64 data, C order
    norms   u64 count, then per site:
                u16 name length + UTF-8 name
                u16 tag length + UTF-8 scheme tag
                f64 epsilon, f64 momentum, u64 channels
                gamma, beta, running_mean, running_var (each channels f64)
"""

from __future__ import annotations

import io
import json
import os
import struct

import numpy as np

from .errors import FormatError
from .norm import EVAL
from .resnet import Model, ModelConfig, build_model

MAGIC = b"NLCP"
VERSION = 1


def _write_str(fh, text: str) -> None:
    raw = text.encode("utf-8")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)


def _read_exact(fh, n: int) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise FormatError(f"checkpoint truncated: wanted {n} bytes, got {len(raw)}")
    return raw


def _read_str(fh) -> str:
    (length,) = struct.unpack("<H", _read_exact(fh, 2))
    return _read_exact(fh, length).decode("utf-8")


def _write_array(fh, arr: np.ndarray) -> None:
    fh.write(arr.astype("<f8").tobytes(order="C"))


def _read_array(fh, count: int) -> np.ndarray:
    return np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8").astype(np.float64)


def save_checkpoint(model: Model, path: str | os.PathLike) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))

    header = dict(model.config.to_dict())
    header["epsilon"] = model.stem_norm.epsilon
    header["momentum"] = model.stem_norm.momentum
    header_raw = json.dumps(header, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<Q", len(header_raw)))
    buf.write(header_raw)

    weights = model.named_weights()
    buf.write(struct.pack("<Q", len(weights)))
    for name, tensor in weights:
        _write_str(buf, name)
        buf.write(struct.pack("<B", tensor.data.ndim))
        for dim in tensor.data.shape:
            buf.write(struct.pack("<Q", dim))
        _write_array(buf, tensor.data)

    sites = model.norm_layers()
    buf.write(struct.pack("<Q", len(sites)))
    for name, layer in sites:
        _write_str(buf, name)
        _write_str(buf, layer.scheme.value)
        buf.write(struct.pack("<dd", layer.epsilon, layer.momentum))
        buf.write(struct.pack("<Q", layer.num_channels))
        for arr in (layer.gamma.data, layer.beta.data, layer.running_mean, layer.running_var):
            _write_array(buf, arr)

    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path: str | os.PathLike) -> Model:
    """Rebuild the model stored at ``path`` (returned in eval mode)."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != MAGIC:
            raise FormatError(f"{path}: not a model checkpoint")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")

        (header_len,) = struct.unpack("<Q", _read_exact(fh, 8))
        header = json.loads(_read_exact(fh, header_len).decode("utf-8"))
        try:
            config = ModelConfig.from_dict(header)
            epsilon = float(header["epsilon"])
            momentum = float(header["momentum"])
        except (KeyError, TypeError) as exc:
            raise FormatError(f"{path}: bad checkpoint header: {exc}") from exc

        model = build_model(config, seed=0, epsilon=epsilon, momentum=momentum)

        (tensor_count,) = struct.unpack("<Q", _read_exact(fh, 8))
        expected = dict(model.named_weights())
        if tensor_count != len(expected):
            raise FormatError(
                f"{path}: {tensor_count} tensors but architecture has {len(expected)}"
            )
        for _ in range(tensor_count):
            name = _read_str(fh)
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
            shape = tuple(
                struct.unpack("<Q", _read_exact(fh, 8))[0] for _ in range(ndim)
            )
            if name not in expected:
                raise FormatError(f"{path}: unexpected tensor {name!r}")
            target = expected[name]
            if shape != target.data.shape:
                raise FormatError(
                    f"{path}: tensor {name!r} has shape {shape}, architecture "
                    f"wants {target.data.shape}"
                )
            target.data = _read_array(fh, int(np.prod(shape))).reshape(shape)

        (site_count,) = struct.unpack("<Q", _read_exact(fh, 8))
        sites = dict(model.norm_layers())
        if site_count != len(sites):
            raise FormatError(
                f"{path}: {site_count} norm sites but architecture has {len(sites)}"
            )
        for _ in range(site_count):
            name = _read_str(fh)
            tag = _read_str(fh)
            eps, mom = struct.unpack("<dd", _read_exact(fh, 16))
            (channels,) = struct.unpack("<Q", _read_exact(fh, 8))
            if name not in sites:
                raise FormatError(f"{path}: unexpected norm site {name!r}")
            layer = sites[name]
            if tag != layer.scheme.value or channels != layer.num_channels:
                raise FormatError(
                    f"{path}: norm site {name!r} ({tag}, {channels}ch) does not "
                    f"match architecture ({layer.scheme.value}, {layer.num_channels}ch)"
                )
            layer.epsilon = eps
            layer.momentum = mom
            layer.gamma.data = _read_array(fh, channels)
            layer.beta.data = _read_array(fh, channels)
            layer.running_mean = _read_array(fh, channels)
            layer.running_var = _read_array(fh, channels)

        trailing = fh.read(1)
        if trailing:
            raise FormatError(f"{path}: trailing bytes after checkpoint payload")

    model.set_mode(EVAL)
    return model
