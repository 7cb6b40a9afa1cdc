"""Reference full-scale results for the four normalization schemes.

These are the known validation accuracies from full-scale runs of this
protocol: 15 epochs over the complete CIFAR-10 training split with the
Adam optimizer at learning rate 0.001, averaged over four runs per cell.
Desk-scale runs (small subsets, few epochs) are not expected to reproduce
these absolute numbers, only the qualitative ordering; the harness
attaches the matching entry to a run's record for side-by-side context.

Keys are (architecture preset, scheme tag, batch size).
"""

from __future__ import annotations

FULL_SCALE_EPOCHS = 15
FULL_SCALE_OPTIMIZER = "adam"
FULL_SCALE_LR = 0.001

FULL_SCALE_VALIDATION_ACCURACY: dict[tuple[str, str, int], float] = {
    ("resnet18", "batchnorm", 20): 0.7665,
    ("resnet18", "batchnorm", 50): 0.7569,
    ("resnet18", "affine", 20): 0.6794,
    ("resnet18", "affine", 50): 0.6904,
    ("resnet18", "batchnorm-minus", 20): 0.7730,
    ("resnet18", "batchnorm-minus", 50): 0.7644,
    ("resnet18", "none", 20): 0.6643,
    ("resnet18", "none", 50): 0.6877,
    ("resnet34", "batchnorm", 20): 0.7717,
    ("resnet34", "batchnorm", 50): 0.7554,
    ("resnet34", "affine", 20): 0.6856,
    ("resnet34", "affine", 50): 0.6837,
    ("resnet34", "batchnorm-minus", 20): 0.7719,
    ("resnet34", "batchnorm-minus", 50): 0.7557,
    ("resnet34", "none", 20): 0.6661,
    ("resnet34", "none", 50): 0.6782,
    ("resnet50", "batchnorm", 20): 0.7469,
    ("resnet50", "batchnorm", 50): 0.7424,
    ("resnet50", "affine", 20): 0.6957,
    ("resnet50", "affine", 50): 0.6986,
    ("resnet50", "batchnorm-minus", 20): 0.5597,
    ("resnet50", "batchnorm-minus", 50): 0.6540,
    ("resnet50", "none", 20): 0.6786,
    ("resnet50", "none", 50): 0.6939,
    ("resnet101", "batchnorm", 20): 0.6971,
    ("resnet101", "batchnorm", 50): 0.6746,
    ("resnet101", "affine", 20): 0.7032,
    ("resnet101", "affine", 50): 0.6959,
    ("resnet101", "batchnorm-minus", 20): 0.4412,
    ("resnet101", "batchnorm-minus", 50): 0.4128,
    ("resnet101", "none", 20): 0.6819,
    ("resnet101", "none", 50): 0.6845,
}


def reference_accuracy(preset: str, scheme_tag: str, batch_size: int) -> float | None:
    """Full-scale validation accuracy for this cell, if one is on record."""
    return FULL_SCALE_VALIDATION_ACCURACY.get((preset, scheme_tag, batch_size))
