from collections.abc import Callable

import numpy as np


def bisect_array(
    func: Callable[[np.ndarray], np.ndarray],
    lo: np.ndarray,
    hi: np.ndarray,
    tol: float = 1e-12,
    max_iter: int = 200,
) -> np.ndarray:
    """Elementwise bisection of ``func`` on ``[lo, hi]``.

    ``func`` maps an array of abscissae to residuals of the same shape. Each
    component must change sign (or vanish) on its own bracket; the bracket
    shrinks until its width is below ``tol`` relative to max(1, |x|).
    """
    a = np.array(lo, dtype=float, copy=True)
    b = np.array(hi, dtype=float, copy=True)
    fa = np.asarray(func(a), dtype=float)
    for _ in range(max_iter):
        mid = 0.5 * (a + b)
        fm = np.asarray(func(mid), dtype=float)
        left = np.sign(fm) == np.sign(fa)
        a = np.where(left, mid, a)
        fa = np.where(left, fm, fa)
        b = np.where(left, b, mid)
        if np.all(b - a <= tol * np.maximum(1.0, np.abs(mid))):
            break
    return 0.5 * (a + b)


def grow_bracket(
    func: Callable[[np.ndarray], np.ndarray],
    start: np.ndarray,
    cap: float,
    factor: float = 2.0,
) -> np.ndarray:
    """Grow upper brackets geometrically until ``func`` turns non-positive.

    Components that never turn within ``cap`` come back as ``inf``.
    """
    hi = np.array(start, dtype=float, copy=True)
    pending = np.asarray(func(hi), dtype=float) > 0
    while np.any(pending):
        hi = np.where(pending, hi * factor, hi)
        overflow = pending & (hi > cap)
        hi = np.where(overflow, np.inf, hi)
        pending &= ~overflow
        if not np.any(pending):
            break
        probe = np.where(pending, hi, 1.0)
        pending &= np.asarray(func(probe), dtype=float) > 0
    return hi
