"""Independent reference computations shared by several test modules."""
import math

import numpy as np

from smallnoise import models

# fourth-order central first difference
_STENCIL = ((-2, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0))


def _d1(fn, x, e, h):
    return sum(w * fn(x + k * h * e) for k, w in _STENCIL) / (12 * h)


def generator_by_differences(f, x, model, h=1e-3):
    """``Df . b + 1/2 |B^T Df|^2 + tr(B^T D^2f B) / 2n`` with every derivative of ``f`` by differences of its value."""
    x = np.asarray(x, dtype=float)
    E = np.eye(x.size)
    Df = np.array([_d1(f.value, x, e, h) for e in E])
    H = np.array([[_d1(lambda z: _d1(f.value, z, ej, h), x, ei, h) for ej in E] for ei in E])
    H = 0.5 * (H + H.T)
    B = models.diffusion_matrix(x, model)
    out = Df @ models.drift(x, model) + 0.5 * np.sum((B.T @ Df) ** 2)
    if not math.isinf(model.n):
        out += np.trace(B.T @ H @ B) / (2 * model.n)
    return float(out)
