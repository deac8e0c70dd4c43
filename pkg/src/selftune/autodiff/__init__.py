"""Float64 tensors with reverse-mode gradients and a forward-mode meta channel."""
import numpy as np

from selftune.autodiff import ops
from selftune.autodiff.dual import Dual, Tensor
from selftune.autodiff.tape import Tape, Var, value_of
from selftune.errors import NumericalError


def gradient(loss: Var, params):
    """Gradient of a recorded scalar with respect to leaf Vars on its tape."""
    return loss.tape.gradient(loss, params)


def meta_directional_derivative(program, z: float, tangent_seed: float = 1.0):
    """Evaluate ``program`` at a dual logit and return ``(value, d value / dz)``.

    ``program`` maps a :class:`Dual` scalar to a scalar (Dual, Var or float).
    """
    out = value_of(program(Dual(np.float64(z), np.float64(tangent_seed))))
    if out.size != 1:
        raise ValueError(f"program must return a scalar, got shape {out.shape}")
    val = float(out.val)
    tan = float(out.tangent)
    if not (np.isfinite(val) and np.isfinite(tan)):
        raise NumericalError("non-finite value or tangent from meta program")
    return val, tan


__all__ = ["Dual", "Tensor", "Tape", "Var", "ops", "gradient", "meta_directional_derivative", "value_of"]
