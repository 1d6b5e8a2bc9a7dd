"""Generators of stationary ergodic and mixing processes with exact ground truth.

Three model families cover the hypotheses of every limit theorem implemented
here: finite irreducible aperiodic Markov chains (exactly computable mixing
coefficients and laws), the AR(1) recursion, and noise-perturbed interval maps
on the compact domain ``[0, 1]``.

All generators are pure functions of ``(model, seed)`` backed by a
counter-based Philox stream, so identical inputs reproduce trajectories
bit-exactly and replicates may run concurrently.
"""

from __future__ import annotations

import csv
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

ROW_SUM_TOL = 1e-12
STATIONARY_TOL = 1e-10

# Zero-noise logistic maps below the chaotic threshold settle into periodic
# orbits and are not mixing; reject them instead of emitting misleading data.
LOGISTIC_CHAOS_THRESHOLD = 3.57


class DegenerateChainError(ValueError):
    """Transition matrix is reducible or periodic; no unique stationary law."""


class NonMixingConfigError(ValueError):
    """Requested noisy-map configuration is not a mixing process."""


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator; one stream per trajectory."""
    return np.random.Generator(np.random.Philox(key=int(seed)))


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Trajectory:
    """``n + eta`` consecutive observations plus provenance.

    ``points`` holds state indices (integers) for chain models and coordinates
    (floats) otherwise.  The lag ``eta`` is reserved for pairing: downstream
    estimators consume ``n = len(points) - eta`` lagged pairs.
    """

    points: np.ndarray
    eta: int
    seed: int
    burn_in: int
    model_id: str

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        pts = np.asarray(self.points)
        if len(pts) < self.eta + 1:
            raise ValueError(f"trajectory length {len(pts)} < eta + 1 = {self.eta + 1}")
        object.__setattr__(self, "points", _frozen(pts))

    @property
    def n(self) -> int:
        return len(self.points) - self.eta

    def state_indices(self) -> np.ndarray:
        """Points as integer state indices; fails on non-integral coordinates."""
        pts = self.points
        if np.issubdtype(pts.dtype, np.integer):
            return pts
        rounded = np.rint(pts)
        if pts.ndim != 1 or not np.array_equal(rounded, pts):
            raise ValueError("trajectory does not consist of integer state indices")
        return rounded.astype(np.int64)

    def to_csv(self, path) -> None:
        """Write ``t,coord_0,...,coord_{d-1}`` rows (RFC 4180)."""
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"coord_{j}" for j in range(pts.shape[1])])
            for t, row in enumerate(pts):
                writer.writerow([t] + [repr(float(v)) for v in row])


def trajectory_from_csv(path, eta: int = 0, seed: int = -1, burn_in: int = 0,
                        model_id: str = "csv") -> Trajectory:
    """Read a trajectory written by :meth:`Trajectory.to_csv`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        ncoord = len(header) - 1
        rows = [[float(v) for v in row[1:]] for row in reader]
    pts = np.asarray(rows, dtype=float)
    if ncoord == 1:
        pts = pts.reshape(-1)
    return Trajectory(points=pts, eta=eta, seed=seed, burn_in=burn_in, model_id=model_id)


def stationary_distribution(transition: np.ndarray) -> np.ndarray:
    """Stationary probability vector of an irreducible aperiodic chain.

    Solved by an eigendecomposition of the transposed transition matrix; the
    returned vector satisfies ``pi P = pi`` with infinity-norm residual at
    most ``1e-10``.
    """
    P = np.asarray(transition, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"transition matrix must be square, got {P.shape}")
    if np.any(P < 0):
        raise ValueError("transition matrix has negative entries")
    if np.max(np.abs(P.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
        raise ValueError("transition matrix rows must sum to 1")
    m = P.shape[0]
    # Primitivity check: some power <= m^2 of the support pattern is strictly
    # positive exactly when the chain is irreducible and aperiodic.
    reach = P > 0
    power = reach.copy()
    steps = 1
    while not power.all() and steps <= m * m:
        power = power @ reach
        steps += 1
    if not power.all():
        raise DegenerateChainError("chain is reducible or periodic")
    eigvals, eigvecs = np.linalg.eig(P.T)
    k = int(np.argmin(np.abs(eigvals - 1.0)))
    pi = np.real(eigvecs[:, k])
    pi = np.abs(pi)
    pi = pi / pi.sum()
    residual = float(np.max(np.abs(pi @ P - pi)))
    if residual > STATIONARY_TOL:
        raise DegenerateChainError(f"stationary solve residual {residual:.3e} too large")
    return pi


@dataclass(frozen=True)
class MarkovChainModel:
    """Finite state set embedded in ``R^d`` with a row-stochastic transition matrix."""

    transition: np.ndarray
    states: np.ndarray
    stationary: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        pi = np.asarray(self.stationary, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states.reshape(-1, 1)
        m = P.shape[0]
        if P.shape != (m, m):
            raise ValueError("transition matrix must be square")
        if states.shape[0] != m or pi.shape != (m,):
            raise ValueError("states and stationary vector must match the state count")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
            raise ValueError("transition matrix must be row-stochastic")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-10:
            raise ValueError("stationary vector must be a probability vector")
        if np.max(np.abs(pi @ P - pi)) > STATIONARY_TOL:
            raise ValueError("stationary vector does not satisfy pi P = pi")
        object.__setattr__(self, "transition", _frozen(P))
        object.__setattr__(self, "states", _frozen(states))
        object.__setattr__(self, "stationary", _frozen(pi))

    @classmethod
    def from_transition(cls, transition, states=None) -> "MarkovChainModel":
        """Build a model with the stationary law computed from the matrix.

        Default state embedding places state ``i`` at the scalar coordinate
        ``i``.
        """
        P = np.asarray(transition, dtype=float)
        pi = stationary_distribution(P)
        if states is None:
            states = np.arange(P.shape[0], dtype=float).reshape(-1, 1)
        return cls(transition=P, states=states, stationary=pi)

    @classmethod
    def two_state(cls, p: float) -> "MarkovChainModel":
        """Symmetric two-state chain with flip probability ``p``."""
        if not 0 < p < 1:
            raise ValueError("flip probability must lie in (0, 1)")
        return cls.from_transition([[1 - p, p], [p, 1 - p]])

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    def anchor_points(self, kernel) -> np.ndarray:
        """State points in the representation the kernel consumes.

        Table kernels address states by index; coordinate kernels use the
        embedded coordinates.
        """
        from .kernels import TableKernel

        if isinstance(kernel, TableKernel):
            if kernel.n_states != self.n_states:
                raise ValueError(
                    f"table kernel has {kernel.n_states} states, model has {self.n_states}"
                )
            return np.arange(self.n_states)
        return self.states


@dataclass(frozen=True)
class AR1Model:
    """``X_{t+1} = a X_t + eps_t`` with Gaussian noise; stationary for ``|a| < 1``."""

    a: float
    noise_std: float

    def __post_init__(self):
        if not abs(self.a) < 1:
            raise ValueError(f"|a| must be < 1 for stationarity, got {self.a}")
        if not self.noise_std > 0:
            raise ValueError("noise_std must be positive")


@dataclass(frozen=True)
class NoisyMapModel:
    """Interval map on ``[0, 1]`` perturbed by Gaussian noise, reflected at the boundary."""

    map_name: str
    noise_std: float
    r: float | None = None

    def __post_init__(self):
        if self.map_name not in ("logistic", "doubling"):
            raise ValueError(f"unknown map {self.map_name!r}")
        if self.map_name == "logistic":
            if self.r is None or not 0 < self.r <= 4:
                raise ValueError("logistic map needs r in (0, 4]")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        if (
            self.noise_std == 0
            and self.map_name == "logistic"
            and self.r < LOGISTIC_CHAOS_THRESHOLD
        ):
            raise NonMixingConfigError(
                f"noise-free logistic map with r={self.r} < {LOGISTIC_CHAOS_THRESHOLD} is not mixing"
            )


def simulate_markov(model: MarkovChainModel, n: int, eta: int, seed: int) -> Trajectory:
    """Stationary chain trajectory of ``n + eta`` state indices.

    The initial state is drawn from the stationary law, so the emitted
    sequence is exactly stationary and no burn-in is needed.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if eta < 0:
        raise ValueError("eta must be >= 0")
    total = n + eta
    rng = make_rng(seed)
    start = int(rng.choice(model.n_states, p=model.stationary))
    cum = np.cumsum(model.transition, axis=1)
    cum[:, -1] = 1.0  # guard against rounding in the last column
    rows = cum.tolist()
    uniforms = rng.random(total - 1).tolist()
    idx = np.empty(total, dtype=np.int64)
    idx[0] = start
    cur = start
    for t, u in enumerate(uniforms):
        cur = bisect_right(rows[cur], u)
        idx[t + 1] = cur
    return Trajectory(points=idx, eta=eta, seed=seed, burn_in=0,
                      model_id=f"markov[m={model.n_states}]")


def simulate_ar1(model: AR1Model, n: int, eta: int, seed: int,
                 burn_in: int = 1000) -> Trajectory:
    """AR(1) trajectory started from the stationary normal law, then burned in."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if burn_in < 0:
        raise ValueError("burn_in must be >= 0")
    total = burn_in + n + eta
    rng = make_rng(seed)
    x0 = rng.normal(0.0, model.noise_std / np.sqrt(1.0 - model.a**2))
    noise = rng.normal(0.0, model.noise_std, size=total)
    series, _ = lfilter([1.0], [1.0, -model.a], noise, zi=np.array([model.a * x0]))
    return Trajectory(points=series[burn_in:], eta=eta, seed=seed, burn_in=burn_in,
                      model_id=f"ar1[a={model.a}]")


def _reflect_unit(y: float) -> float:
    y = y % 2.0
    return 2.0 - y if y > 1.0 else y


def simulate_noisy_map(model: NoisyMapModel, n: int, eta: int, seed: int,
                       burn_in: int = 1000) -> Trajectory:
    """Noise-perturbed interval map trajectory; every sample lies in ``[0, 1]``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if burn_in < 0:
        raise ValueError("burn_in must be >= 0")
    total = burn_in + n + eta
    rng = make_rng(seed)
    x = float(rng.random())
    noise = rng.normal(0.0, model.noise_std, size=total) if model.noise_std > 0 else np.zeros(total)
    out = np.empty(total)
    logistic = model.map_name == "logistic"
    r = model.r if logistic else 0.0
    for t in range(total):
        fx = r * x * (1.0 - x) if logistic else (2.0 * x) % 1.0
        x = _reflect_unit(fx + noise[t])
        out[t] = x
    return Trajectory(points=out[burn_in:], eta=eta, seed=seed, burn_in=burn_in,
                      model_id=f"noisy_map[{model.map_name}]")


def beta_mixing_markov(model: MarkovChainModel, t: int) -> float:
    """Exact beta-mixing coefficient ``beta(t)`` of a stationary finite chain.

    ``beta(t) = sum_i pi_i TV(P^t(i, .), pi)`` with TV half the l1 distance.
    Beta dominates the alpha coefficient, so it is a valid (conservative)
    stand-in wherever a bound formula consumes ``alpha(t)``.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    Pt = np.linalg.matrix_power(model.transition, t)
    tv = 0.5 * np.abs(Pt - model.stationary[None, :]).sum(axis=1)
    return float(model.stationary @ tv)


def fit_geometric_mixing(betas) -> tuple[float, float]:
    """Dominating geometric envelope ``beta(t) <= a r^t`` from sampled coefficients.

    Least squares on ``log beta`` fixes the rate ``r``; the prefactor is then
    inflated so the envelope dominates every provided point.  Nonpositive
    values are dropped; at least 3 must remain.
    """
    pts = [(int(t), float(b)) for t, b in betas if b > 0]
    if len(pts) < 3:
        raise ValueError(f"need >= 3 strictly positive mixing values, got {len(pts)}")
    ts = np.array([t for t, _ in pts], dtype=float)
    logb = np.log([b for _, b in pts])
    slope, intercept = np.polyfit(ts, logb, 1)
    r = float(np.exp(slope))
    if not 0 < r < 1:
        raise ValueError(f"fitted rate r={r} is not in (0, 1); input is not geometrically decaying")
    a = float(np.exp(intercept))
    a = max(a, float(np.max(np.exp(logb - ts * np.log(r)))))
    return a, r
