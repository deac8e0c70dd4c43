"""Discount parameterized by an unconstrained logit."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logit

from selftune.autodiff import dual as D
from selftune.autodiff.dual import Dual


@dataclass(frozen=True)
class MetaParams:
    z: float
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.lo < self.hi <= 1.0:
            raise ValueError(f"need 0 <= lo < hi <= 1, got ({self.lo}, {self.hi})")

    @property
    def gamma(self) -> float:
        return float(gamma_of_logit(self.z, self.lo, self.hi).val)


def gamma_of_logit(z, lo: float = 0.0, hi: float = 1.0) -> Dual:
    """lo + (hi - lo) * sigmoid(z); differentiable in a dual ``z``.

    The value is kept strictly inside (lo, hi) even where the sigmoid rounds
    to 0 or 1; the tangent is left as computed.
    """
    g = D.add(lo, D.scale(D.sigmoid(z), hi - lo))
    return Dual(np.clip(g.val, np.nextafter(lo, hi), np.nextafter(hi, lo)), g.tan)


def logit_of_gamma(gamma: float, lo: float = 0.0, hi: float = 1.0) -> float:
    """Inverse of :func:`gamma_of_logit` for gamma strictly inside (lo, hi)."""
    if not lo < gamma < hi:
        raise ValueError(f"gamma {gamma} outside ({lo}, {hi})")
    return float(logit((gamma - lo) / (hi - lo)))

