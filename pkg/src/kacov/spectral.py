"""Kernel PCA, spectral projectors and perturbation certificates, and kernel EDMD.

Self-adjoint decompositions reduce to symmetric eigensolves of whitened
coefficient matrices ``K^{1/2} B K^{1/2}``; the kernel-EDMD eigenproblem for
the adjoint regularized conditional mean operator reduces to the nonsymmetric
``(G00 + n gamma I)^{-1} G_{eta 0}`` matrix.  Both reductions are verified
against explicit finite-state embeddings and a residual contract in the test
suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .kernels import Kernel
from .operators import (
    KernelMeanExpansion,
    OperatorExpansion,
    adjoint,
    combine,
    centering_matrix,
    op_norm,
    psd_inv_sqrt,
    psd_sqrt,
)
from .simulate import Trajectory

# Eigenvalues below RANK_CUT * lambda_1 count as null directions.
RANK_CUT = 1e-12
# Relative gap below which adjacent eigenvalues are grouped as one distinct value.
GROUP_TOL = 1e-6
# Automatic exact reduction threshold for trajectories over few distinct points.
DEDUP_LIMIT = 128
MAX_DENSE_SAMPLES = 5000


@dataclass(frozen=True)
class EigenGroup:
    """One distinct eigenvalue: its value, member indices, and multiplicity."""

    value: float
    indices: tuple[int, ...]

    @property
    def multiplicity(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class SpectralDecomposition:
    """Nonincreasing eigenvalues with unit-norm eigenfunction expansions."""

    eigenvalues: np.ndarray
    eigenfunctions: tuple[KernelMeanExpansion, ...]
    groups: tuple[EigenGroup, ...]
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.eigenvalues)


def _group_eigenvalues(eigvals: np.ndarray) -> tuple[EigenGroup, ...]:
    if len(eigvals) == 0:
        return ()
    tol = GROUP_TOL * eigvals[0]
    groups = []
    start = 0
    for i in range(1, len(eigvals) + 1):
        if i == len(eigvals) or eigvals[start] - eigvals[i] > tol:
            members = tuple(range(start, i))
            groups.append(EigenGroup(float(np.mean(eigvals[start:i])), members))
            start = i
    return tuple(groups)


def _make_decomposition(kernel, anchors, eigvals, weight_cols, truncated=False):
    funcs = tuple(
        KernelMeanExpansion(kernel, anchors, weight_cols[:, i])
        for i in range(weight_cols.shape[1])
    )
    return SpectralDecomposition(
        eigenvalues=np.asarray(eigvals, dtype=float),
        eigenfunctions=funcs,
        groups=_group_eigenvalues(np.asarray(eigvals, dtype=float)),
        truncated=truncated,
    )


def _dedup(samples: np.ndarray):
    """Unique sample values with inverse map, or None when not worthwhile."""
    arr = samples if samples.ndim > 1 else samples.reshape(-1, 1)
    uniq, inverse = np.unique(arr, axis=0, return_inverse=True)
    if len(uniq) > DEDUP_LIMIT or len(uniq) >= len(arr):
        return None
    if samples.ndim == 1:
        uniq = uniq.reshape(-1)
    return uniq, inverse.reshape(-1)


def kpca(kernel, samples, centered: bool = False, rank: int | None = None) -> SpectralDecomposition:
    """Kernel PCA: spectral decomposition of the empirical covariance operator.

    Eigenvalues are those of ``(1/n) G`` (uncentered) or ``(1/n) H G H``
    (centered); eigenfunction ``i`` has weights ``u_i / sqrt(n lambda_i)``
    over the samples.  Eigenvalues below ``RANK_CUT * lambda_1`` are
    truncated; if ``rank`` exceeds the numerical rank the decomposition is
    flagged ``truncated`` and carries fewer pairs.

    Sample sets over few distinct values are reduced exactly to the distinct
    points before the eigensolve, so large finite-state samples are cheap.
    """
    samples = np.asarray(samples) if not isinstance(samples, np.ndarray) else samples
    n = len(samples)
    if n < 1:
        raise ValueError("need at least one sample")
    if rank is not None and not 1 <= rank <= n:
        raise ValueError(f"rank must be in [1, {n}], got {rank}")

    reduction = _dedup(np.asarray(samples))
    if reduction is not None:
        uniq, inverse = reduction
        Gm = kernel.gram(uniq, uniq)
        counts = np.bincount(inverse, minlength=len(uniq)).astype(float)
        if centered:
            W = np.diag(counts) - np.outer(counts, counts) / n
        else:
            W = np.diag(counts)
        RW = psd_sqrt(W)
        core = RW @ Gm @ RW / n
        eigvals, eigvecs = np.linalg.eigh(core)
        order = np.argsort(eigvals)[::-1]
        eigvals, eigvecs = eigvals[order], eigvecs[:, order]
        keep = eigvals > RANK_CUT * max(eigvals[0], 0.0) if len(eigvals) else np.zeros(0, bool)
        eigvals, eigvecs = eigvals[keep], eigvecs[:, keep]
        # Lift reduced eigenvectors to unit vectors over the n samples.
        lift = psd_inv_sqrt(W) @ eigvecs
        u = lift[inverse, :]
        if centered:
            u = u - (counts @ lift) / n
        weights = u / np.sqrt(n * eigvals)[None, :] if len(eigvals) else np.zeros((n, 0))
        anchors = samples
    else:
        if n > MAX_DENSE_SAMPLES:
            raise ValueError(
                f"dense eigensolve budget exceeded: {n} samples with "
                f"more than {DEDUP_LIMIT} distinct values"
            )
        G = kernel.gram(samples, samples)
        M = G / n
        if centered:
            H = centering_matrix(n)
            M = H @ M @ H
        eigvals, eigvecs = np.linalg.eigh(0.5 * (M + M.T))
        order = np.argsort(eigvals)[::-1]
        eigvals, eigvecs = eigvals[order], eigvecs[:, order]
        keep = eigvals > RANK_CUT * max(eigvals[0], 0.0) if len(eigvals) else np.zeros(0, bool)
        eigvals, eigvecs = eigvals[keep], eigvecs[:, keep]
        weights = eigvecs / np.sqrt(n * eigvals)[None, :] if len(eigvals) else np.zeros((n, 0))
        anchors = samples

    truncated = False
    if rank is not None:
        if rank > len(eigvals):
            truncated = True
        else:
            eigvals = eigvals[:rank]
            weights = weights[:, :rank]
    return _make_decomposition(kernel, anchors, eigvals, weights, truncated=truncated)


def decompose_self_adjoint(a: OperatorExpansion) -> SpectralDecomposition:
    """Exact spectral decomposition of a self-adjoint PSD operator expansion.

    Requires identical anchor sets on both sides and a symmetric whitened
    coefficient matrix ``K^{1/2} B K^{1/2}`` (within 1e-8).  Eigenfunction
    weights are mapped back through the pseudo-inverse root of the anchor
    Gram.
    """
    if not np.array_equal(a.left_anchors, a.right_anchors):
        raise ValueError("self-adjoint decomposition needs identical anchor sets")
    K = a.kernel.gram(a.left_anchors, a.left_anchors)
    R = psd_sqrt(K)
    S = R @ a.coeffs @ R
    asym = float(np.max(np.abs(S - S.T))) if S.size else 0.0
    if asym > 1e-8 * max(1.0, float(np.max(np.abs(S)))) + 1e-8:
        raise ValueError(f"operator is not self-adjoint (asymmetry {asym:.3e})")
    eigvals, eigvecs = np.linalg.eigh(0.5 * (S + S.T))
    order = np.argsort(eigvals)[::-1]
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]
    lam_max = max(float(eigvals[0]), 0.0) if len(eigvals) else 0.0
    keep = eigvals > RANK_CUT * lam_max if lam_max > 0 else np.zeros(len(eigvals), bool)
    eigvals, eigvecs = eigvals[keep], eigvecs[:, keep]
    weights = psd_inv_sqrt(K) @ eigvecs
    return _make_decomposition(a.kernel, a.left_anchors, eigvals, weights)


def spectral_gap(dec: SpectralDecomposition, j: int) -> float:
    """Gap of the ``j``-th distinct eigenvalue (1-based).

    ``j = 1`` gives ``mu_1 - mu_2``; for ``j >= 2`` the minimum distance to
    both neighbours.  When group ``j + 1`` does not exist the lower neighbour
    is taken as 0 (gap to the null space).
    """
    groups = dec.groups
    if not 1 <= j <= len(groups):
        raise IndexError(f"group index {j} out of range [1, {len(groups)}]")
    mu = [g.value for g in groups]
    below = mu[j] if j < len(mu) else 0.0
    if j == 1:
        return mu[0] - (mu[1] if len(mu) > 1 else 0.0)
    return min(mu[j - 2] - mu[j - 1], mu[j - 1] - below)


def spectral_projector(dec: SpectralDecomposition, j: int) -> OperatorExpansion:
    """Orthogonal projector onto the eigenspace of the ``j``-th distinct eigenvalue."""
    groups = dec.groups
    if not 1 <= j <= len(groups):
        raise IndexError(f"group index {j} out of range [1, {len(groups)}]")
    members = groups[j - 1].indices
    funcs = [dec.eigenfunctions[i] for i in members]
    anchors = funcs[0].anchors
    W = np.column_stack([np.real(f.weights) for f in funcs])
    return OperatorExpansion(funcs[0].kernel, anchors, anchors, W @ W.T)


def projector_distance(pa: OperatorExpansion, pb: OperatorExpansion) -> float:
    return op_norm(combine([(1.0, pa), (-1.0, pb)]))


@dataclass(frozen=True)
class GroupCheck:
    group: int
    gap: float
    distance: float
    bound: float

    @property
    def slack(self) -> float:
        return self.bound - self.distance


@dataclass(frozen=True)
class PerturbationCertificate:
    """Outcome of the eigenvalue and projector perturbation inequalities."""

    delta: float
    eigenvalue_sup: float
    eigenvalue_bound: float
    group_checks: tuple[GroupCheck, ...]
    passed: bool

    @property
    def eigenvalue_slack(self) -> float:
        return self.eigenvalue_bound - self.eigenvalue_sup


def _empirical_group_projector(empirical: SpectralDecomposition, members) -> OperatorExpansion | None:
    available = [i for i in members if i < len(empirical.eigenfunctions)]
    if not available:
        return None
    funcs = [empirical.eigenfunctions[i] for i in available]
    anchors = funcs[0].anchors
    W = np.column_stack([np.real(f.weights) for f in funcs])
    return OperatorExpansion(funcs[0].kernel, anchors, anchors, W @ W.T)


def perturbation_certificate(exact: SpectralDecomposition,
                             empirical: SpectralDecomposition,
                             delta: float,
                             slack: float = 1e-9) -> PerturbationCertificate:
    """Check the spectral perturbation inequalities at perturbation size ``delta``.

    Eigenvalues (zero-padded) must satisfy ``sup_i |l_i - l̂_i| <= delta``;
    each distinct group ``j`` of the exact spectrum must satisfy
    ``||P_j - P̂_j|| <= 4 delta / g_j``.  Failure is reported as data, not as
    an error.
    """
    L = max(len(exact.eigenvalues), len(empirical.eigenvalues))
    le = np.zeros(L)
    le[: len(exact.eigenvalues)] = exact.eigenvalues
    lm = np.zeros(L)
    lm[: len(empirical.eigenvalues)] = empirical.eigenvalues
    eig_sup = float(np.max(np.abs(le - lm))) if L else 0.0
    eig_bound = delta + slack
    passed = eig_sup <= eig_bound

    checks = []
    for j, group in enumerate(exact.groups, start=1):
        gap = spectral_gap(exact, j)
        bound = 4.0 * delta / gap + slack
        p_exact = spectral_projector(exact, j)
        p_emp = _empirical_group_projector(empirical, group.indices)
        if p_emp is None:
            dist = float(np.sqrt(group.multiplicity))  # projector vs zero operator
        else:
            dist = projector_distance(p_exact, p_emp)
        checks.append(GroupCheck(group=j, gap=gap, distance=dist, bound=bound))
        passed = passed and dist <= bound
    return PerturbationCertificate(
        delta=delta,
        eigenvalue_sup=eig_sup,
        eigenvalue_bound=eig_bound,
        group_checks=tuple(checks),
        passed=passed,
    )


class _DensePredictor:
    """Adjoint-operator action with a cached factorization of ``G00 + n gamma I``."""

    def __init__(self, kernel, base, lagged, ridge):
        self.kernel = kernel
        self.base = base
        self.lagged = lagged
        G00 = kernel.gram(base, base)
        n = len(base)
        self.factor = scipy.linalg.cho_factor(G00 + ridge * np.eye(n))

    def propagate(self, f: KernelMeanExpansion) -> KernelMeanExpansion:
        v = self.kernel.gram(self.lagged, f.anchors) @ f.weights
        if np.iscomplexobj(v):
            w = scipy.linalg.cho_solve(self.factor, v.real) + 1j * scipy.linalg.cho_solve(
                self.factor, v.imag
            )
        else:
            w = scipy.linalg.cho_solve(self.factor, v)
        return KernelMeanExpansion(self.kernel, self.base, w)


class _ReducedPredictor:
    """Adjoint-operator action grouped over distinct anchor values.

    For samples over ``m`` distinct points, ``S0' (G00 + ridge)^{-1} Seta``
    collapses by the Woodbury identity to an ``m x m`` core, so propagation
    costs ``O(m^2)`` independent of ``n``.
    """

    def __init__(self, kernel, uniq, inv_base, inv_lagged, ridge):
        self.kernel = kernel
        self.uniq = uniq
        m = len(uniq)
        n = len(inv_base)
        Gm = kernel.gram(uniq, uniq)
        L = psd_sqrt(Gm)
        counts0 = np.bincount(inv_base, minlength=m).astype(float)
        N = np.zeros((m, m))
        np.add.at(N, (inv_base, inv_lagged), 1.0)
        A = L.T @ (counts0[:, None] * L)
        core_inner = np.linalg.solve(ridge * np.eye(m) + A, L.T @ N)
        self.core = (N - (counts0[:, None] * L) @ core_inner) / ridge

    def propagate(self, f: KernelMeanExpansion) -> KernelMeanExpansion:
        V = self.kernel.gram(self.uniq, f.anchors)
        return KernelMeanExpansion(self.kernel, self.uniq, self.core @ (V @ f.weights))


@dataclass(frozen=True)
class KoopmanDecomposition:
    """Eigenvalues (modulus-sorted) and eigenfunctions of the empirical transition estimate."""

    kernel: Kernel
    eigenvalues: np.ndarray
    eigenfunctions: tuple[KernelMeanExpansion, ...]
    gamma: float
    eta: int
    n: int
    predictor: object = field(repr=False, compare=False, default=None)


def _sort_complex(eigvals):
    return np.lexsort((-eigvals.real, -np.abs(eigvals)))


def kedmd(kernel, traj: Trajectory, eta: int, gamma: float,
          max_pairs: int | None = None) -> KoopmanDecomposition:
    """Kernel EDMD: eigendecomposition of the adjoint regularized transition estimate.

    Solves ``M w = lambda w`` with ``M = (G00 + n gamma I)^{-1} G_{eta 0}``,
    where ``G00[s, t] = k(x_s, x_t)`` and ``G_{eta 0}[s, t] = k(x_{s+eta}, x_t)``;
    eigenfunction ``i`` is ``f_i = sum_t w_{i, t} k(x_t, .)``, normalized to
    unit RKHS norm.  This orientation of the lagged Gram factor makes each
    eigenpair satisfy the operator residual identity
    ``U_n^* f_i = lambda_i f_i`` exactly on the sample span, which is verified
    through the expansion algebra in the tests.

    Trajectories over few distinct points are reduced exactly to an
    ``m x m`` eigenproblem with eigenvectors lifted back to the samples.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    pts = traj.points
    n = len(pts) - eta
    if n < 2:
        raise ValueError("need at least 2 lagged pairs")
    base, lagged = pts[:n], pts[eta : eta + n]
    ridge = n * gamma

    reduction = _dedup(np.concatenate([np.atleast_1d(base), np.atleast_1d(lagged)], axis=0))
    if reduction is not None:
        uniq, inverse = reduction
        inv_base, inv_lagged = inverse[:n], inverse[n:]
        m = len(uniq)
        Gm = kernel.gram(uniq, uniq)
        L = psd_sqrt(Gm)
        counts0 = np.bincount(inv_base, minlength=m).astype(float)
        # Pair counts: rows index base values, columns lagged values.
        N = np.zeros((m, m))
        np.add.at(N, (inv_base, inv_lagged), 1.0)
        A = L.T @ (counts0[:, None] * L)          # Phi0' Phi0
        C = L.T @ N @ L                            # Phi0' Phi_eta
        reduced = np.linalg.solve(ridge * np.eye(m) + A, C)
        eigvals, Y = np.linalg.eig(reduced)
        # Lift: w = (G00 + ridge)^{-1} Phi_eta y via the Woodbury identity.
        inner = np.linalg.solve(ridge * np.eye(m) + A, C @ Y)
        W_full = ((L @ Y)[inv_lagged, :] - (L @ inner)[inv_base, :]) / ridge
        # RKHS norms via weights grouped over the distinct anchors.
        grouped = np.zeros((m, W_full.shape[1]), dtype=W_full.dtype)
        np.add.at(grouped, inv_base, W_full)
        sq = np.real(np.einsum("ij,ik,kj->j", np.conj(grouped), Gm, grouped))
        predictor = _ReducedPredictor(kernel, uniq, inv_base, inv_lagged, ridge)
    else:
        if n > 3000:
            raise ValueError(
                f"dense kEDMD budget exceeded at n={n}; "
                f"only trajectories over <= {DEDUP_LIMIT} distinct points reduce exactly"
            )
        G00 = kernel.gram(base, base)
        G_eta0 = kernel.gram(lagged, base)
        M = np.linalg.solve(G00 + ridge * np.eye(n), G_eta0)
        eigvals, W_full = np.linalg.eig(M)
        sq = np.real(np.einsum("ij,ik,kj->j", np.conj(W_full), G00, W_full))
        predictor = _DensePredictor(kernel, base, lagged, ridge)

    order = _sort_complex(eigvals)
    eigvals, W_full, sq = eigvals[order], W_full[:, order], sq[order]

    # Normalize to unit RKHS norm; drop directions that vanish as functions.
    scale = np.sqrt(np.clip(sq, 0.0, None))
    keep = scale > 1e-12 * max(scale.max(initial=0.0), 1.0)
    eigvals, W_full, scale = eigvals[keep], W_full[:, keep], scale[keep]
    W_full = W_full / scale[None, :]
    if max_pairs is not None:
        eigvals, W_full = eigvals[:max_pairs], W_full[:, :max_pairs]

    funcs = tuple(
        KernelMeanExpansion(kernel, base, W_full[:, i]) for i in range(W_full.shape[1])
    )
    return KoopmanDecomposition(
        kernel=kernel,
        eigenvalues=eigvals,
        eigenfunctions=funcs,
        gamma=gamma,
        eta=eta,
        n=n,
        predictor=predictor,
    )


def koopman_adjoint_expansion(kernel, traj: Trajectory, eta: int, gamma: float) -> OperatorExpansion:
    """The adjoint regularized transition estimate as an explicit expansion.

    Left anchors are the unlagged samples, right anchors the lagged ones,
    coefficients ``(G00 + n gamma I)^{-1}``.  Dense in ``n``; meant for
    moderate sample sizes and for pinning the kEDMD reduction in tests.
    """
    from .cme import fit_cme

    return adjoint(fit_cme(kernel, traj, eta, gamma).expansion)


def koopman_predict(dec: KoopmanDecomposition, f: KernelMeanExpansion, point) -> float:
    """Estimate of the conditional expectation of ``f`` one lag ahead, at ``point``."""
    if dec.predictor is None:
        raise ValueError("decomposition carries no predictor")
    g = dec.predictor.propagate(f)
    val = g.evaluate(point)
    return complex(val[0]) if np.iscomplexobj(val) else float(val[0])


def function_from_values(kernel, anchors, values, ridge: float) -> KernelMeanExpansion:
    """RKHS interpolant of target values at anchors via a ridge-regularized Gram solve."""
    anchors_arr = np.asarray(anchors)
    G = kernel.gram(anchors_arr, anchors_arr)
    w = np.linalg.solve(G + ridge * np.eye(len(G)), np.asarray(values, dtype=float))
    return KernelMeanExpansion(kernel, anchors_arr, w)
