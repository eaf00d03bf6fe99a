"""Quasi-Newton descent in coordinates whitened by the control regularisation.

Both control tiers have a cost ``J = Phi(z) + z^T A z / 2`` where ``A`` is the
tridiagonal Neumann operator of the control boundary-value problems.  With
``A = R^T R`` and ``y = R z`` the regularisation becomes the identity, so a
gradient step in ``y`` is exactly the (un-relaxed) forward/backward sweep
``z <- A^{-1}(-grad Phi)``; L-BFGS-B then adds curvature memory and a Wolfe
line search on top of that sweep.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cholesky_banded, solve_banded
from scipy.optimize import minimize

log = logging.getLogger(__name__)


class BandedWhitening:
    """``y = R z`` for a symmetric positive-definite tridiagonal ``A = R^T R``.

    ``ab`` is the (1, 1) banded storage used by :func:`scipy.linalg.solve_banded`.
    """

    def __init__(self, ab: np.ndarray):
        upper = np.vstack([ab[0], ab[1]])
        self._r = cholesky_banded(upper, lower=False)
        self._rt = np.vstack([self._r[1], np.append(self._r[0, 1:], 0.0)])
        self.size = ab.shape[1]

    def forward(self, z: np.ndarray) -> np.ndarray:
        out = self._r[1] * z
        out[:-1] += self._r[0, 1:] * z[1:]
        return out

    def inverse(self, y: np.ndarray) -> np.ndarray:
        return solve_banded((0, 1), self._r, y)

    def pullback(self, g: np.ndarray) -> np.ndarray:
        """Gradient with respect to ``y`` given the gradient with respect to ``z``."""
        return solve_banded((1, 0), self._rt, g)


class ScalarWhitening:
    """``y = sqrt(c) z`` for a single scalar unknown."""

    def __init__(self, curvature: float):
        if not curvature > 0:
            raise ValueError("curvature must be positive")
        self._s = float(np.sqrt(curvature))
        self.size = 1

    def forward(self, z):
        return np.asarray(z, dtype=float) * self._s

    def inverse(self, y):
        return np.asarray(y, dtype=float) / self._s

    def pullback(self, g):
        return np.asarray(g, dtype=float) / self._s


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    aux: object
    iterations: int
    evaluations: int
    converged: bool
    message: str
    history: list = field(default_factory=list)


def minimize_whitened(fun: Callable, z0: np.ndarray, blocks: Sequence, bounds: Sequence | None = None,
                      max_iter: int = 1000, ftol: float = 1e-13, gtol: float = 1e-8,
                      memory: int = 20) -> OptimResult:
    """Minimise ``fun(z) -> (f, grad_z, aux)`` over ``z`` split into ``blocks``.

    ``bounds`` holds one ``(lo, hi)`` pair (or ``None``) per block; they are
    only honoured for :class:`ScalarWhitening` blocks, where the whitened
    coordinate is a rescaling of the original one.  ``history`` records ``f``
    at every accepted iterate, which L-BFGS-B keeps non-increasing.
    """
    sizes = [b.size for b in blocks]
    cuts = np.cumsum(sizes)[:-1]
    if sum(sizes) != np.size(z0):
        raise ValueError("block sizes do not match the unknown vector")

    def to_z(y):
        return np.concatenate([b.inverse(part) for b, part in zip(blocks, np.split(y, cuts))])

    def to_y(z):
        return np.concatenate([b.forward(part) for b, part in zip(blocks, np.split(z, cuts))])

    cache: dict = {}

    def objective(y):
        last = cache.get("last")
        if last is not None and np.array_equal(last[0], y):
            return last[1], last[3]
        z = to_z(y)
        f, g, aux = fun(z)
        if not np.isfinite(f):
            raise FloatingPointError("non-finite cost")
        gy = np.concatenate([b.pullback(part) for b, part in zip(blocks, np.split(np.asarray(g, float), cuts))])
        cache["last"] = (y.copy(), f, aux, gy)
        return f, gy

    y_bounds = None
    if bounds is not None:
        y_bounds = []
        for b, bnd in zip(blocks, bounds):
            if bnd is not None and isinstance(b, ScalarWhitening):
                lo, hi = bnd
                y_bounds.append((None if lo is None else float(b.forward(lo)),
                                 None if hi is None else float(b.forward(hi))))
            else:
                y_bounds.extend([(None, None)] * b.size)

    history: list = []

    def callback(intermediate_result):
        history.append(float(intermediate_result.fun))

    y0 = to_y(np.asarray(z0, dtype=float))
    history.append(objective(y0)[0])
    res = minimize(objective, y0, jac=True, method="L-BFGS-B", bounds=y_bounds, callback=callback,
                   options=dict(maxiter=max_iter, maxcor=memory, ftol=ftol, gtol=gtol))
    z = to_z(res.x)
    last = cache["last"]
    if np.array_equal(last[0], res.x):
        aux = last[2]
    else:
        aux = fun(z)[2]
    converged = bool(res.success)
    message = res.message if isinstance(res.message, str) else str(res.message)
    log.debug("L-BFGS-B: %s after %d iterations", message, res.nit)
    return OptimResult(z, float(res.fun), aux, int(res.nit), int(res.nfev), converged, message, history)
