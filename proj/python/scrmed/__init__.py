"""Principal-stratification mediation for semi-competing risks."""

from ._core import (
    Dataset,
    FittedModel,
    InvalidInput,
    NumericalError,
    effect,
    fit,
    label_swap,
    observed_loglik,
    simulate,
)

__all__ = [
    "Dataset",
    "FittedModel",
    "InvalidInput",
    "NumericalError",
    "effect",
    "fit",
    "label_swap",
    "observed_loglik",
    "simulate",
]
