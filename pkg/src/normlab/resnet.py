"""Residual networks assembled from basic or bottleneck blocks.

Every normalization site in a model is instantiated with the same scheme,
so swapping the scheme swaps the whole network's normalization behavior
while leaving shapes and parameter initialization untouched (frozen
schemes draw no random numbers, so conv/linear weights are bitwise
identical across schemes for a given seed).

Layout follows the 32x32-input convention: a 3x3 stride-1 stem (no
max-pool), four stages with strides 1/2/2/2, global average pooling, and a
linear classifier head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError
from .norm import EVAL, TRAIN, NormLayer, NormScheme
from .tensor import Tensor, conv2d, global_avg_pool, linear, relu

BASIC = "basic"
BOTTLENECK = "bottleneck"

# out_channels / mid_channels for bottleneck blocks
BOTTLENECK_EXPANSION = 4


@dataclass(frozen=True)
class BlockSpec:
    """Shape contract for one residual block."""

    kind: str
    in_channels: int
    mid_channels: int
    out_channels: int
    stride: int
    norm_scheme: NormScheme

    def __post_init__(self):
        if self.kind not in (BASIC, BOTTLENECK):
            raise ConfigError(f"unknown block kind {self.kind!r}")
        if min(self.in_channels, self.mid_channels, self.out_channels, self.stride) < 1:
            raise ConfigError(f"block extents must be positive: {self}")
        if self.kind == BASIC and self.out_channels != self.mid_channels:
            raise ConfigError(
                f"basic block requires out_channels == mid_channels, got {self}"
            )
        if self.kind == BOTTLENECK and self.out_channels != BOTTLENECK_EXPANSION * self.mid_channels:
            raise ConfigError(
                f"bottleneck block requires out_channels == "
                f"{BOTTLENECK_EXPANSION}*mid_channels, got {self}"
            )

    @property
    def needs_projection(self) -> bool:
        return self.stride != 1 or self.in_channels != self.out_channels


@dataclass(frozen=True)
class ModelConfig:
    """Architecture description: depth layout, block kind, norm scheme."""

    stage_blocks: tuple[int, int, int, int]
    block_kind: str
    norm_scheme: NormScheme
    num_classes: int = 10
    base_width: int = 64

    def __post_init__(self):
        if len(self.stage_blocks) != 4 or min(self.stage_blocks) < 1:
            raise ConfigError(f"stage_blocks must be 4 positive ints: {self.stage_blocks}")
        if self.block_kind not in (BASIC, BOTTLENECK):
            raise ConfigError(f"unknown block kind {self.block_kind!r}")
        if self.num_classes < 1 or self.base_width < 1:
            raise ConfigError("num_classes and base_width must be positive")

    def to_dict(self) -> dict:
        return {
            "stage_blocks": list(self.stage_blocks),
            "block_kind": self.block_kind,
            "norm_scheme": self.norm_scheme.value,
            "num_classes": self.num_classes,
            "base_width": self.base_width,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            stage_blocks=tuple(d["stage_blocks"]),
            block_kind=d["block_kind"],
            norm_scheme=NormScheme.from_tag(d["norm_scheme"]),
            num_classes=int(d["num_classes"]),
            base_width=int(d["base_width"]),
        )


_PRESET_LAYOUTS: dict[str, tuple[tuple[int, int, int, int], str, int]] = {
    "resnet18": ((2, 2, 2, 2), BASIC, 64),
    "resnet34": ((3, 4, 6, 3), BASIC, 64),
    "resnet50": ((3, 4, 6, 3), BOTTLENECK, 64),
    "resnet101": ((3, 4, 23, 3), BOTTLENECK, 64),
    "resnet-tiny": ((1, 1, 1, 1), BASIC, 16),
    "resnet-tiny-bottleneck": ((1, 1, 1, 1), BOTTLENECK, 16),
}

PRESET_NAMES = tuple(_PRESET_LAYOUTS)


def preset_config(
    name: str, norm_scheme: NormScheme, num_classes: int = 10
) -> ModelConfig:
    if name not in _PRESET_LAYOUTS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {PRESET_NAMES}")
    stage_blocks, kind, width = _PRESET_LAYOUTS[name]
    return ModelConfig(stage_blocks, kind, norm_scheme, num_classes, width)


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2dLayer:
    """3x3/1x1 convolution without bias (norm layers supply the shift)."""

    def __init__(self, in_ch, out_ch, kernel_size, stride, padding, rng):
        fan_in = in_ch * kernel_size * kernel_size
        self.weight = Tensor(
            _kaiming_uniform(rng, (out_ch, in_ch, kernel_size, kernel_size), fan_in),
            requires_grad=True,
        )
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.stride, self.padding)


class LinearLayer:
    def __init__(self, in_features, out_features, rng):
        self.weight = Tensor(
            _kaiming_uniform(rng, (out_features, in_features), in_features),
            requires_grad=True,
        )
        self.bias = Tensor(
            _kaiming_uniform(rng, (out_features,), in_features), requires_grad=True
        )

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class _Block:
    """Common residual wiring: main path + (projected) shortcut, then ReLU."""

    def __init__(self, spec: BlockSpec, epsilon: float, momentum: float, rng):
        self.spec = spec
        self.convs: list[Conv2dLayer] = []
        self.norms: list[NormLayer] = []
        if spec.needs_projection:
            self.proj_conv = Conv2dLayer(
                spec.in_channels, spec.out_channels, 1, spec.stride, 0, rng
            )
            self.proj_norm = NormLayer(
                spec.norm_scheme, spec.out_channels, epsilon, momentum
            )
        else:
            self.proj_conv = None
            self.proj_norm = None

    def _shortcut(self, x: Tensor) -> Tensor:
        if self.proj_conv is None:
            return x
        return self.proj_norm(self.proj_conv(x))

    def _main(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.shape[1] != self.spec.in_channels:
            raise ConfigError(
                f"block expected {self.spec.in_channels} input channels, "
                f"got {x.data.shape}"
            )
        return relu(self._main(x) + self._shortcut(x))


class BasicBlock(_Block):
    """Two 3x3 convolutions; the residual branch models output minus input."""

    def __init__(self, spec: BlockSpec, epsilon: float, momentum: float, rng):
        super().__init__(spec, epsilon, momentum, rng)
        s, eps, mom = spec, epsilon, momentum
        self.convs = [
            Conv2dLayer(s.in_channels, s.mid_channels, 3, s.stride, 1, rng),
            Conv2dLayer(s.mid_channels, s.out_channels, 3, 1, 1, rng),
        ]
        self.norms = [
            NormLayer(s.norm_scheme, s.mid_channels, eps, mom),
            NormLayer(s.norm_scheme, s.out_channels, eps, mom),
        ]

    def _main(self, x: Tensor) -> Tensor:
        out = relu(self.norms[0](self.convs[0](x)))
        return self.norms[1](self.convs[1](out))


class BottleneckBlock(_Block):
    """1x1 reduce, 3x3 spatial, 1x1 expand back to 4x the mid width."""

    def __init__(self, spec: BlockSpec, epsilon: float, momentum: float, rng):
        super().__init__(spec, epsilon, momentum, rng)
        s, eps, mom = spec, epsilon, momentum
        self.convs = [
            Conv2dLayer(s.in_channels, s.mid_channels, 1, 1, 0, rng),
            Conv2dLayer(s.mid_channels, s.mid_channels, 3, s.stride, 1, rng),
            Conv2dLayer(s.mid_channels, s.out_channels, 1, 1, 0, rng),
        ]
        self.norms = [
            NormLayer(s.norm_scheme, s.mid_channels, eps, mom),
            NormLayer(s.norm_scheme, s.mid_channels, eps, mom),
            NormLayer(s.norm_scheme, s.out_channels, eps, mom),
        ]

    def _main(self, x: Tensor) -> Tensor:
        out = relu(self.norms[0](self.convs[0](x)))
        out = relu(self.norms[1](self.convs[1](out)))
        return self.norms[2](self.convs[2](out))


def make_block(spec: BlockSpec, epsilon: float, momentum: float, rng) -> _Block:
    cls = BasicBlock if spec.kind == BASIC else BottleneckBlock
    return cls(spec, epsilon, momentum, rng)


class Model:
    """A residual classifier over [N,3,H,W] images."""

    def __init__(self, config: ModelConfig, seed: int, epsilon: float, momentum: float):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        width = config.base_width
        expansion = 1 if config.block_kind == BASIC else BOTTLENECK_EXPANSION

        self.stem_conv = Conv2dLayer(3, width, 3, 1, 1, rng)
        self.stem_norm = NormLayer(config.norm_scheme, width, epsilon, momentum)

        self.stages: list[list[_Block]] = []
        in_ch = width
        for stage_index, blocks in enumerate(config.stage_blocks):
            mid = width * 2**stage_index
            out_ch = mid * expansion
            stage = []
            for b in range(blocks):
                spec = BlockSpec(
                    kind=config.block_kind,
                    in_channels=in_ch,
                    mid_channels=mid,
                    out_channels=out_ch,
                    stride=(2 if stage_index > 0 and b == 0 else 1),
                    norm_scheme=config.norm_scheme,
                )
                stage.append(make_block(spec, epsilon, momentum, rng))
                in_ch = out_ch
            self.stages.append(stage)

        self.head = LinearLayer(in_ch, config.num_classes, rng)
        self.mode = TRAIN

    # -- enumeration ------------------------------------------------------

    def _blocks(self):
        for stage in self.stages:
            yield from stage

    def norm_layers(self) -> list[tuple[str, NormLayer]]:
        sites = [("stem.norm", self.stem_norm)]
        for si, stage in enumerate(self.stages):
            for bi, block in enumerate(stage):
                prefix = f"stage{si + 1}.block{bi}"
                for ni, ln in enumerate(block.norms):
                    sites.append((f"{prefix}.norm{ni + 1}", ln))
                if block.proj_norm is not None:
                    sites.append((f"{prefix}.shortcut.norm", block.proj_norm))
        return sites

    def named_weights(self) -> list[tuple[str, Tensor]]:
        """Conv and linear tensors, in deterministic construction order."""
        entries = [("stem.conv.weight", self.stem_conv.weight)]
        for si, stage in enumerate(self.stages):
            for bi, block in enumerate(stage):
                prefix = f"stage{si + 1}.block{bi}"
                for ci, conv in enumerate(block.convs):
                    entries.append((f"{prefix}.conv{ci + 1}.weight", conv.weight))
                if block.proj_conv is not None:
                    entries.append((f"{prefix}.shortcut.conv.weight", block.proj_conv.weight))
        entries.append(("head.weight", self.head.weight))
        entries.append(("head.bias", self.head.bias))
        return entries

    def parameters(self) -> list[Tensor]:
        """Trainable tensors only; frozen gamma/beta never appear here."""
        params = [t for _, t in self.named_weights()]
        for _, ln in self.norm_layers():
            params.extend(ln.parameters())
        return params

    def parameter_count(self) -> int:
        total = sum(t.size for _, t in self.named_weights())
        for _, ln in self.norm_layers():
            total += ln.gamma.size + ln.beta.size
        return total

    def set_mode(self, mode: str) -> None:
        if mode not in (TRAIN, EVAL):
            raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
        self.mode = mode
        self.stem_norm.mode = mode
        for block in self._blocks():
            for ln in block.norms:
                ln.mode = mode
            if block.proj_norm is not None:
                block.proj_norm.mode = mode

    def freeze_norm_affine(self) -> None:
        """Pin every gamma/beta at its current value (stops training them)."""
        for _, ln in self.norm_layers():
            ln.freeze_affine()

    # -- forward ------------------------------------------------------------

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim != 4 or x.data.shape[1] != 3:
            raise InputError(f"expected [N,3,H,W] images, got {x.data.shape}")
        out = relu(self.stem_norm(self.stem_conv(x)))
        for block in self._blocks():
            out = block(out)
        return self.head(global_avg_pool(out))

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)


def build_model(
    config: ModelConfig,
    seed: int = 0,
    epsilon: float = 1e-5,
    momentum: float = 0.1,
) -> Model:
    """Construct a model with seed-deterministic parameter initialization."""
    return Model(config, seed, epsilon, momentum)
