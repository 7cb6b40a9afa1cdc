"""The four interchangeable normalization schemes under study.

Each scheme is a combination of two independent ingredients:

============== ================== =================
scheme         re-parameterize    re-normalize
               (trainable scale   (zero-mean /
               and shift)         unit-variance)
============== ================== =================
batchnorm      yes                yes
affine         yes                no
batchnorm-minus no                yes
none           no                 no
============== ================== =================

``batchnorm-minus`` keeps scale/shift frozen at (1, 0) forever; ``none`` is
an identity layer. Normalizing schemes track running statistics during
training and substitute them for batch statistics at evaluation time, so
eval outputs never depend on batch composition.
"""

from __future__ import annotations

import enum

import numpy as np

from .errors import ConfigError, DegenerateBatchError, UsageError
from .tensor import Tensor, normalize_channels, scale_shift

TRAIN = "train"
EVAL = "eval"


class NormScheme(enum.Enum):
    BATCH_NORM = "batchnorm"
    AFFINE = "affine"
    BATCH_NORM_MINUS = "batchnorm-minus"
    NONE = "none"

    @property
    def reparameterizes(self) -> bool:
        """True when the scheme trains and applies per-channel scale/shift."""
        return self in (NormScheme.BATCH_NORM, NormScheme.AFFINE)

    @property
    def renormalizes(self) -> bool:
        """True when the scheme standardizes activations with batch stats."""
        return self in (NormScheme.BATCH_NORM, NormScheme.BATCH_NORM_MINUS)

    @classmethod
    def from_tag(cls, tag: str) -> "NormScheme":
        for scheme in cls:
            if scheme.value == tag:
                return scheme
        raise ConfigError(
            f"unknown normalization scheme {tag!r}; "
            f"expected one of {[s.value for s in cls]}"
        )


class NormLayer:
    """Per-channel normalization state for one site in a network.

    Holds the scale ``gamma`` (init 1) and shift ``beta`` (init 0), running
    mean/variance (init 0/1), and the train/eval mode flag. ``gamma`` and
    ``beta`` are trainable only for re-parameterizing schemes; for the
    others they stay at their initial values permanently.
    """

    def __init__(
        self,
        scheme: NormScheme,
        channels: int,
        epsilon: float = 1e-5,
        momentum: float = 0.1,
    ):
        if channels < 1:
            raise ConfigError(f"channels must be positive, got {channels}")
        if epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {epsilon}")
        if not 0 < momentum <= 1:
            raise ConfigError(f"momentum must lie in (0, 1], got {momentum}")
        self.scheme = scheme
        self.num_channels = channels
        self.epsilon = float(epsilon)
        self.momentum = float(momentum)
        self.trainable = scheme.reparameterizes
        self.gamma = Tensor(np.ones(channels), requires_grad=self.trainable)
        self.beta = Tensor(np.zeros(channels), requires_grad=self.trainable)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.mode = TRAIN

    def parameters(self) -> list[Tensor]:
        """Tensors the optimizer may update (empty for frozen schemes)."""
        return [self.gamma, self.beta] if self.trainable else []

    def _check_channels(self, x: Tensor) -> None:
        if x.data.ndim != 4 or x.data.shape[1] != self.num_channels:
            raise ConfigError(
                f"expected input [N,{self.num_channels},H,W], got {x.data.shape}"
            )

    def _affine(self, x: Tensor) -> Tensor:
        return scale_shift(x, self.gamma, self.beta)

    def update_running_stats(
        self, batch_mean: np.ndarray, batch_var: np.ndarray
    ) -> None:
        """Blend the latest batch statistics into the running estimates."""
        m = self.momentum
        self.running_mean = (1.0 - m) * self.running_mean + m * batch_mean
        self.running_var = (1.0 - m) * self.running_var + m * batch_var

    def forward_train(self, x: Tensor) -> Tensor:
        """Training-mode forward; normalizing schemes use batch statistics.

        The whole expression, including the batch mean and variance, is on
        the tape, so gradients flow through the statistics and not just the
        centered values.
        """
        if self.mode != TRAIN:
            raise UsageError("forward_train called on an eval-mode layer")
        self._check_channels(x)
        scheme = self.scheme
        if scheme is NormScheme.NONE:
            return x
        if scheme is NormScheme.AFFINE:
            return self._affine(x)

        n, c, h, w = x.data.shape
        if n * h * w < 2:
            raise DegenerateBatchError(
                f"normalizing {c} channels needs at least 2 values per "
                f"channel, got batch shape {x.data.shape}"
            )
        normalized, batch_mean, batch_var = normalize_channels(x, self.epsilon)
        self.update_running_stats(batch_mean, batch_var)
        if scheme is NormScheme.BATCH_NORM:
            return self._affine(normalized)
        return normalized

    def forward_eval(self, x: Tensor) -> Tensor:
        """Eval-mode forward; running statistics replace batch statistics."""
        if self.mode != EVAL:
            raise UsageError("forward_eval called on a train-mode layer")
        self._check_channels(x)
        scheme = self.scheme
        if scheme is NormScheme.NONE:
            return x
        if scheme is NormScheme.AFFINE:
            return self._affine(x)

        # running statistics are constants here, so the whole transform
        # folds into one per-channel scale and shift
        inv_sigma = 1.0 / np.sqrt(self.running_var + self.epsilon)
        if scheme is NormScheme.BATCH_NORM:
            scale = self.gamma.data * inv_sigma
            shift = self.beta.data - self.running_mean * scale
        else:
            scale = inv_sigma
            shift = -(self.running_mean * scale)
        return scale_shift(x, Tensor(scale), Tensor(shift))

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward_train(x) if self.mode == TRAIN else self.forward_eval(x)

    def freeze_affine(self) -> None:
        """Stop gamma/beta from training without changing the scheme."""
        self.trainable = False
        self.gamma.requires_grad = False
        self.beta.requires_grad = False
