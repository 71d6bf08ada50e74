"""Central finite-difference Jacobians."""

import numpy as np

__all__ = ["jacobian"]


def jacobian(f, x, h_rel: float = 1e-7) -> np.ndarray:
    """Dense Jacobian of ``f`` at ``x`` by central differences.

    Column j uses step ``h_rel * max(1, |x[j]|)`` so the perturbation stays
    well conditioned for both tiny and large coordinates.
    """
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x), dtype=float)
    jac = np.empty((f0.size, x.size))
    for j in range(x.size):
        h = h_rel * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        jac[:, j] = (np.asarray(f(xp)) - np.asarray(f(xm))) / (2.0 * h)
    return jac
