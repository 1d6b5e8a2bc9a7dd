"""Kernel definitions, pointwise evaluation, Gram matrices, and product kernels.

Three kernel families are supported:

* :class:`GaussianKernel` on points in ``R^d`` (bounded, ``k(x, x) = 1``),
* :class:`LinearKernel` on points in ``R^d`` (bounded only on a ball of
  explicitly supplied radius),
* :class:`TableKernel` on a finite state set ``{0, ..., m-1}`` given by an
  arbitrary symmetric positive semi-definite Gram table.

Points for Gaussian/Linear kernels are coordinate vectors; a 1-D array passed
as a point *set* is interpreted as scalar points in ``R^1``.  Points for Table
kernels are integer state indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Relative PSD slack: absorbs symmetric-eigensolver noise on Gram matrices.
PSD_TOL = 1e-10


class DomainMismatchError(ValueError):
    """Points do not match the kernel's domain kind or dimension."""


class UnboundedDomainError(ValueError):
    """A diagonal bound was requested for a kernel on an unbounded domain."""


def as_point_matrix(points) -> np.ndarray:
    """Coerce a point set to a float matrix of shape ``(n, d)``.

    A 1-D input of length n is read as n points in ``R^1``.
    """
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(-1, 1)
    if arr.ndim == 2:
        return arr
    raise DomainMismatchError(f"point set must be at most 2-D, got shape {arr.shape}")


def as_single_point(point) -> np.ndarray:
    """Coerce a single point to a 1-D coordinate vector."""
    arr = np.atleast_1d(np.asarray(point, dtype=float))
    if arr.ndim != 1:
        raise DomainMismatchError(f"a single point must be a vector, got shape {arr.shape}")
    return arr


class Kernel:
    """Base class: a symmetric PSD kernel with vectorised Gram evaluation."""

    def evaluate(self, x, y) -> float:
        """Evaluate ``k(x, y)`` for two single points."""
        raise NotImplementedError

    def gram(self, xs, ys) -> np.ndarray:
        """Pairwise kernel matrix ``G[i, j] = k(xs[i], ys[j])``."""
        raise NotImplementedError

    def product_evaluate(self, xpair, ypair) -> float:
        """Product kernel on pairs: ``k(x1, y1) * k(x2, y2)``.

        For the Gaussian kernel this coincides with a Gaussian kernel on
        ``R^{2d}`` with the same bandwidth.
        """
        (x1, x2), (y1, y2) = xpair, ypair
        return self.evaluate(x1, y1) * self.evaluate(x2, y2)

    def bound(self) -> float:
        """A finite constant ``c`` with ``k(x, x) <= c`` on the admissible domain."""
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class GaussianKernel(Kernel):
    """``k(x, y) = exp(-||x - y||^2 / (2 sigma^2))`` on ``R^d``."""

    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"bandwidth must be positive, got {self.sigma}")

    def evaluate(self, x, y) -> float:
        x, y = as_single_point(x), as_single_point(y)
        if x.shape != y.shape:
            raise DomainMismatchError(f"dimension mismatch: {x.shape} vs {y.shape}")
        d2 = float(np.sum((x - y) ** 2))
        return float(np.exp(-d2 / (2.0 * self.sigma**2)))

    def gram(self, xs, ys) -> np.ndarray:
        xs, ys = as_point_matrix(xs), as_point_matrix(ys)
        if xs.shape[1] != ys.shape[1]:
            raise DomainMismatchError(
                f"dimension mismatch: {xs.shape[1]} vs {ys.shape[1]}"
            )
        sq = (
            np.sum(xs**2, axis=1)[:, None]
            + np.sum(ys**2, axis=1)[None, :]
            - 2.0 * xs @ ys.T
        )
        np.maximum(sq, 0.0, out=sq)
        return np.exp(-sq / (2.0 * self.sigma**2))

    def bound(self) -> float:
        return 1.0

    def to_config(self) -> dict:
        return {"type": "gaussian", "sigma": self.sigma}


@dataclass(frozen=True)
class LinearKernel(Kernel):
    """``k(x, y) = <x, y>`` on ``R^d``.

    The kernel is unbounded on ``R^d``; a diagonal bound exists only when the
    caller restricts the domain to a ball of known ``radius``, in which case
    ``bound() = radius^2``.
    """

    radius: float | None = None

    def __post_init__(self):
        if self.radius is not None and not self.radius > 0:
            raise ValueError(f"domain radius must be positive, got {self.radius}")

    def evaluate(self, x, y) -> float:
        x, y = as_single_point(x), as_single_point(y)
        if x.shape != y.shape:
            raise DomainMismatchError(f"dimension mismatch: {x.shape} vs {y.shape}")
        return float(x @ y)

    def gram(self, xs, ys) -> np.ndarray:
        xs, ys = as_point_matrix(xs), as_point_matrix(ys)
        if xs.shape[1] != ys.shape[1]:
            raise DomainMismatchError(
                f"dimension mismatch: {xs.shape[1]} vs {ys.shape[1]}"
            )
        return xs @ ys.T

    def bound(self) -> float:
        if self.radius is None:
            raise UnboundedDomainError(
                "linear kernel has no finite diagonal bound without a domain radius"
            )
        return self.radius**2

    def to_config(self) -> dict:
        cfg = {"type": "linear"}
        if self.radius is not None:
            cfg["radius"] = self.radius
        return cfg


@dataclass(frozen=True)
class TableKernel(Kernel):
    """Arbitrary PSD kernel on a finite state set, given by its Gram table.

    State ``i`` of ``m`` is addressed by the integer index ``i``; the table
    must be symmetric and PSD up to ``PSD_TOL * trace``.
    """

    table: np.ndarray = field(default_factory=lambda: np.eye(2))

    def __post_init__(self):
        table = np.asarray(self.table, dtype=float)
        if table.ndim != 2 or table.shape[0] != table.shape[1]:
            raise ValueError(f"Gram table must be square, got shape {table.shape}")
        if not np.allclose(table, table.T, atol=1e-12, rtol=0.0):
            raise ValueError("Gram table must be symmetric")
        min_eig = float(np.linalg.eigvalsh(table).min())
        if min_eig < -PSD_TOL * max(np.trace(table), 1.0):
            raise ValueError(f"Gram table is not PSD (min eigenvalue {min_eig:.3e})")
        table = table.copy()
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    @property
    def n_states(self) -> int:
        return self.table.shape[0]

    def _indices(self, points) -> np.ndarray:
        arr = np.asarray(points)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.ndim != 1:
            raise DomainMismatchError(
                f"table-kernel points are flat index arrays, got shape {arr.shape}"
            )
        if not np.issubdtype(arr.dtype, np.integer):
            rounded = np.rint(arr)
            if not np.array_equal(rounded, arr):
                raise DomainMismatchError("table-kernel points must be integer state indices")
            arr = rounded.astype(np.int64)
        if arr.size and (arr.min() < 0 or arr.max() >= self.n_states):
            raise DomainMismatchError(
                f"state index out of range [0, {self.n_states}): "
                f"[{arr.min()}, {arr.max()}]"
            )
        return arr.astype(np.intp)

    def evaluate(self, x, y) -> float:
        i = self._indices(x)
        j = self._indices(y)
        if i.size != 1 or j.size != 1:
            raise DomainMismatchError("evaluate expects single state indices")
        return float(self.table[i[0], j[0]])

    def gram(self, xs, ys) -> np.ndarray:
        i = self._indices(xs)
        j = self._indices(ys)
        return self.table[np.ix_(i, j)]

    def bound(self) -> float:
        return float(np.max(np.diag(self.table)))

    def to_config(self) -> dict:
        return {"type": "table", "gram": self.table.tolist()}


def kernel_from_config(cfg: dict) -> Kernel:
    """Build a kernel from its config-file representation.

    Accepted forms: ``{type = "gaussian", sigma = 1.0}``,
    ``{type = "linear", radius = 2.0}`` (radius optional),
    ``{type = "table", gram = [[...], ...]}``.
    """
    kind = cfg.get("type")
    if kind == "gaussian":
        return GaussianKernel(sigma=float(cfg.get("sigma", 1.0)))
    if kind == "linear":
        radius = cfg.get("radius")
        return LinearKernel(radius=None if radius is None else float(radius))
    if kind == "table":
        if "gram" not in cfg:
            raise ValueError("table kernel config requires a 'gram' matrix")
        return TableKernel(table=np.asarray(cfg["gram"], dtype=float))
    raise ValueError(f"unknown kernel type {kind!r}")
