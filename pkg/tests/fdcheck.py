"""Central finite-difference gradient oracle.

Independent of the backprop implementation: it only re-evaluates the
scalar loss under coordinate perturbations. Used by the unit tests and
the acceptance suite.
"""

from __future__ import annotations

import numpy as np

ABS_FLOOR = 1e-8  # below this both sides count as zero


def relative_error(analytic: float, fd: float) -> float:
    diff = abs(analytic - fd)
    if diff <= ABS_FLOOR:
        return 0.0
    return diff / max(abs(analytic), abs(fd))


def check_param_gradients(
    loss_fn,
    params: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    step: float = 1e-5,
    names: list[str] | None = None,
    max_coords_per_param: int | None = None,
    rng: np.random.Generator | None = None,
):
    """Compare analytic gradients to central differences, coordinate-wise.

    loss_fn() must recompute the scalar loss from the (mutated) params
    dict. Returns (worst_relative_error, n_checked, failures) where
    failures lists (name, index, analytic, fd, rel).
    """
    worst = 0.0
    n_checked = 0
    failures = []
    for name in names if names is not None else sorted(params):
        flat = params[name].reshape(-1)
        grad = analytic[name].reshape(-1)
        if max_coords_per_param is not None and flat.size > max_coords_per_param:
            assert rng is not None
            idx = rng.choice(flat.size, size=max_coords_per_param, replace=False)
        else:
            idx = range(flat.size)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            plus = loss_fn()
            flat[i] = orig - step
            minus = loss_fn()
            flat[i] = orig
            fd = (plus - minus) / (2.0 * step)
            rel = relative_error(float(grad[i]), fd)
            worst = max(worst, rel)
            n_checked += 1
            if rel >= 1e-4:
                failures.append((name, int(i), float(grad[i]), fd, rel))
    return worst, n_checked, failures
