"""Finite-expansion RKHS elements and operators with exact Gram-matrix algebra.

Every infinite-dimensional object handled by this package lives in the span of
feature maps at finitely many anchor points:

* :class:`KernelMeanExpansion` represents ``h = sum_i w_i phi(a_i)``,
* :class:`OperatorExpansion` represents ``A = sum_ij B_ij phi(u_i) (x) phi(v_j)``.

Hilbert--Schmidt inner products, operator norms, and operator application all
reduce to dense matrix identities on kernel Gram matrices; those reductions
are the load-bearing mathematics of this module and are pinned by an explicit
Cholesky-embedding oracle in the test suite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .kernels import Kernel, TableKernel, kernel_from_config
from .simulate import MarkovChainModel, Trajectory

# Dense eigensolve budget for operator norms and spectra.
MAX_DENSE_ANCHORS = 5000


class KernelMismatchError(ValueError):
    """Operands do not share one kernel."""


def _check_same_kernel(a, b):
    if a.kernel != b.kernel:
        raise KernelMismatchError(f"kernel mismatch: {a.kernel} vs {b.kernel}")


def _anchor_array(kernel, anchors) -> np.ndarray:
    arr = np.asarray(anchors)
    if isinstance(kernel, TableKernel):
        return np.asarray(arr, dtype=np.int64).reshape(-1)
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return arr


def psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root; negative eigenvalues are clamped at 0."""
    sym = 0.5 * (mat + mat.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    eigvals = np.clip(eigvals, 0.0, None)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


def psd_inv_sqrt(mat: np.ndarray, rel_cut: float = 1e-12) -> np.ndarray:
    """Pseudo-inverse square root on the numerical range of a PSD matrix."""
    sym = 0.5 * (mat + mat.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    cut = rel_cut * max(float(eigvals.max(initial=0.0)), 0.0)
    inv = np.where(eigvals > cut, 1.0 / np.sqrt(np.clip(eigvals, cut, None)), 0.0)
    return (eigvecs * inv) @ eigvecs.T


@dataclass(frozen=True)
class KernelMeanExpansion:
    """RKHS element ``h = sum_i w_i phi(a_i)``; weights may be complex."""

    kernel: Kernel
    anchors: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        anchors = _anchor_array(self.kernel, self.anchors)
        weights = np.asarray(self.weights)
        if not np.iscomplexobj(weights):
            weights = weights.astype(float)
        if weights.ndim != 1 or len(weights) != len(anchors):
            raise ValueError(
                f"weights shape {weights.shape} does not match {len(anchors)} anchors"
            )
        if len(anchors) == 0:
            raise ValueError("expansion needs at least one anchor")
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "weights", weights)

    def inner(self, other: "KernelMeanExpansion") -> float | complex:
        _check_same_kernel(self, other)
        G = self.kernel.gram(self.anchors, other.anchors)
        val = np.conj(self.weights) @ G @ other.weights
        return complex(val) if np.iscomplexobj(self.weights) or np.iscomplexobj(other.weights) else float(val)

    def norm(self) -> float:
        G = self.kernel.gram(self.anchors, self.anchors)
        sq = np.real(np.conj(self.weights) @ G @ self.weights)
        return float(np.sqrt(max(sq, 0.0)))

    def evaluate(self, points) -> np.ndarray:
        """Function values ``h(x) = sum_i w_i k(a_i, x)`` at one or more points."""
        pts = points
        if isinstance(self.kernel, TableKernel):
            pts = np.atleast_1d(np.asarray(points))
        G = self.kernel.gram(self.anchors, pts)
        return G.T @ self.weights

    def scaled(self, factor) -> "KernelMeanExpansion":
        return KernelMeanExpansion(self.kernel, self.anchors, factor * self.weights)


def combine_means(terms) -> KernelMeanExpansion:
    """Linear combination ``sum_k c_k h_k`` by anchor concatenation."""
    terms = list(terms)
    if not terms:
        raise ValueError("empty combination")
    kernel = terms[0][1].kernel
    anchors = []
    weights = []
    for c, h in terms:
        if h.kernel != kernel:
            raise KernelMismatchError("kernel mismatch in combination")
        anchors.append(h.anchors)
        weights.append(c * h.weights)
    cat = np.concatenate(anchors, axis=0)
    return KernelMeanExpansion(kernel, cat, np.concatenate(weights))


@dataclass(frozen=True)
class OperatorExpansion:
    """Finite-rank operator ``A = sum_ij B_ij phi(u_i) (x) phi(v_j)``.

    ``u`` are the left (output-side) anchors, ``v`` the right (input-side)
    anchors; ``B`` is the ``p x q`` coefficient matrix.
    """

    kernel: Kernel
    left_anchors: np.ndarray
    right_anchors: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        left = _anchor_array(self.kernel, self.left_anchors)
        right = _anchor_array(self.kernel, self.right_anchors)
        B = np.asarray(self.coeffs, dtype=float)
        if len(left) == 0 or len(right) == 0:
            raise ValueError("operator expansion needs nonempty anchor sets")
        if B.shape != (len(left), len(right)):
            raise ValueError(
                f"coefficient shape {B.shape} does not match anchors "
                f"({len(left)}, {len(right)})"
            )
        object.__setattr__(self, "left_anchors", left)
        object.__setattr__(self, "right_anchors", right)
        object.__setattr__(self, "coeffs", B)

    def to_json_dict(self) -> dict:
        return {
            "kernel": self.kernel.to_config(),
            "left_anchors": np.asarray(self.left_anchors).tolist(),
            "right_anchors": np.asarray(self.right_anchors).tolist(),
            "B": self.coeffs.tolist(),
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True, indent=1)


def operator_from_json_dict(doc: dict) -> OperatorExpansion:
    kernel = kernel_from_config(doc["kernel"])
    return OperatorExpansion(
        kernel=kernel,
        left_anchors=np.asarray(doc["left_anchors"]),
        right_anchors=np.asarray(doc["right_anchors"]),
        coeffs=np.asarray(doc["B"], dtype=float),
    )


def operator_from_json(path) -> OperatorExpansion:
    with open(path) as fh:
        return operator_from_json_dict(json.load(fh))


def rank_one(kernel, left_point, right_point) -> OperatorExpansion:
    """``phi(x) (x) phi(y)`` as an expansion."""
    return OperatorExpansion(
        kernel=kernel,
        left_anchors=np.asarray([left_point]),
        right_anchors=np.asarray([right_point]),
        coeffs=np.array([[1.0]]),
    )


def hs_inner(a: OperatorExpansion, b: OperatorExpansion) -> float:
    """Hilbert--Schmidt inner product ``<A, B>``.

    Gram reduction: ``tr(K_uu' B2 K_v'v B1^T)`` with ``K_uu'`` the left-anchor
    cross-Gram and ``K_v'v`` the reversed right-anchor cross-Gram.
    """
    _check_same_kernel(a, b)
    K_uu = a.kernel.gram(a.left_anchors, b.left_anchors)
    K_vv = a.kernel.gram(b.right_anchors, a.right_anchors)
    return float(np.trace(K_uu @ b.coeffs @ K_vv @ a.coeffs.T))


def hs_norm(a: OperatorExpansion) -> float:
    return float(np.sqrt(max(hs_inner(a, a), 0.0)))


def op_norm(a: OperatorExpansion) -> float:
    """Operator (spectral) norm: largest singular value of ``K_u^{1/2} B K_v^{1/2}``."""
    if len(a.left_anchors) > MAX_DENSE_ANCHORS or len(a.right_anchors) > MAX_DENSE_ANCHORS:
        raise ValueError(
            f"dense eigensolve budget exceeded: {len(a.left_anchors)} x "
            f"{len(a.right_anchors)} anchors > {MAX_DENSE_ANCHORS}"
        )
    Ru = psd_sqrt(a.kernel.gram(a.left_anchors, a.left_anchors))
    Rv = psd_sqrt(a.kernel.gram(a.right_anchors, a.right_anchors))
    core = Ru @ a.coeffs @ Rv
    if min(core.shape) == 0:
        return 0.0
    return float(np.linalg.norm(core, 2))


def apply_operator(a: OperatorExpansion, h: KernelMeanExpansion) -> KernelMeanExpansion:
    """``A h`` via the push-through ``weights = B K_{v, anchors(h)} w``."""
    _check_same_kernel(a, h)
    K = a.kernel.gram(a.right_anchors, h.anchors)
    return KernelMeanExpansion(a.kernel, a.left_anchors, a.coeffs @ (K @ h.weights))


def adjoint(a: OperatorExpansion) -> OperatorExpansion:
    """Adjoint: anchor sides swapped, coefficients transposed."""
    return OperatorExpansion(a.kernel, a.right_anchors, a.left_anchors, a.coeffs.T)


def combine(terms) -> OperatorExpansion:
    """Linear combination ``sum_k c_k A_k`` via anchor concatenation.

    Coefficients are assembled block-diagonally, so HS inner products remain
    linear in every slot.
    """
    terms = list(terms)
    if not terms:
        raise ValueError("empty combination")
    kernel = terms[0][1].kernel
    lefts, rights = [], []
    p_tot = sum(len(op.left_anchors) for _, op in terms)
    q_tot = sum(len(op.right_anchors) for _, op in terms)
    B = np.zeros((p_tot, q_tot))
    i = j = 0
    for c, op in terms:
        if op.kernel != kernel:
            raise KernelMismatchError("kernel mismatch in combination")
        p, q = op.coeffs.shape
        B[i : i + p, j : j + q] = c * op.coeffs
        lefts.append(op.left_anchors)
        rights.append(op.right_anchors)
        i += p
        j += q
    return OperatorExpansion(
        kernel,
        np.concatenate(lefts, axis=0),
        np.concatenate(rights, axis=0),
        B,
    )


def _lagged_split(traj: Trajectory, eta: int):
    pts = traj.points
    n = len(pts) - eta
    if n < 1:
        raise ValueError(f"trajectory too short for lag {eta}")
    return pts[eta:], pts[:n], n


def centering_matrix(n: int) -> np.ndarray:
    return np.eye(n) - np.full((n, n), 1.0 / n)


def empirical_autocov(kernel, traj: Trajectory, eta: int,
                      centered: bool = False) -> OperatorExpansion:
    """Empirical lag-``eta`` autocovariance ``(1/n) sum_t phi(x_{t+eta}) (x) phi(x_t)``.

    Centered variant subtracts the empirical mean embedding from both tensor
    factors, which amounts to ``B = H / n`` with the usual centering matrix
    ``H``.  Anchors are the raw sample points; duplicates are kept.
    """
    lagged, base, n = _lagged_split(traj, eta)
    B = centering_matrix(n) / n if centered else np.eye(n) / n
    return OperatorExpansion(kernel, lagged, base, B)


def compressed_empirical_autocov(kernel, indices: np.ndarray, anchors, eta: int,
                                 centered: bool = False) -> OperatorExpansion:
    """Empirical autocovariance of an index sequence, grouped over state anchors.

    For trajectories taking finitely many values this is the *same* HS element
    as :func:`empirical_autocov` (coefficients are pair frequencies), but the
    expansion lives on the ``m`` state anchors, so downstream Gram algebra runs
    on ``m x m`` matrices regardless of ``n``.
    """
    idx = np.asarray(indices, dtype=np.int64)
    n = len(idx) - eta
    if n < 1:
        raise ValueError(f"index sequence too short for lag {eta}")
    anchors_arr = _anchor_array(kernel, anchors)
    m = len(anchors_arr)
    pair = np.zeros((m, m))
    np.add.at(pair, (idx[eta:], idx[:n]), 1.0)
    pair /= n
    if centered:
        left_freq = np.bincount(idx[eta:], minlength=m) / n
        right_freq = np.bincount(idx[:n], minlength=m) / n
        pair = pair - np.outer(left_freq, right_freq)
    return OperatorExpansion(kernel, anchors_arr, anchors_arr, pair)


def exact_autocov_markov(kernel, model: MarkovChainModel, eta: int,
                         centered: bool = False) -> OperatorExpansion:
    """Exact lag-``eta`` autocovariance of a stationary finite chain.

    Uncentered coefficients are ``B[j, i] = pi_i (P^eta)_{ij}`` over the state
    anchors; centering subtracts the rank-one ``mu (x) mu`` correction
    ``outer(pi, pi)``.
    """
    if eta < 0:
        raise ValueError("eta must be >= 0")
    Peta = np.linalg.matrix_power(model.transition, eta)
    B = Peta.T @ np.diag(model.stationary)
    if centered:
        B = B - np.outer(model.stationary, model.stationary)
    anchors = model.anchor_points(kernel)
    return OperatorExpansion(kernel, anchors, anchors, B)


def mean_embedding_markov(kernel, model: MarkovChainModel) -> KernelMeanExpansion:
    """Exact stationary mean embedding ``mu = sum_i pi_i phi(s_i)``."""
    return KernelMeanExpansion(kernel, model.anchor_points(kernel), model.stationary.copy())


def gamma_spectrum(kernel, traj: Trajectory, eta: int) -> np.ndarray:
    """Eigenvalues of the empirical second-moment operator of centered pair features.

    With ``zeta_t = phi(x_{t+eta}) (x) phi(x_t) - C_n(eta)``, the empirical
    operator ``(1/n) sum_t zeta_t (x) zeta_t`` has the same nonzero spectrum as
    ``(1/n) H G H`` where ``G`` is the product-kernel Gram of the lagged pairs.
    Negative eigenvalues are clamped at 0; the result is sorted descending.
    """
    lagged, base, n = _lagged_split(traj, eta)
    if n < 2:
        raise ValueError("need at least 2 lagged pairs")
    G = kernel.gram(lagged, lagged) * kernel.gram(base, base)
    H = centering_matrix(n)
    eigvals = np.linalg.eigvalsh(H @ G @ H / n)
    return np.clip(eigvals, 0.0, None)[::-1]
