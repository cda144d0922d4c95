"""
probing.py

Safety-constrained choice of a probing force that maximizes the divergence
between the innovation distributions of two pipeline hypotheses.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import linalg

from sensortrust.estimation import EkfEstimate
from sensortrust.perception import ANGLE, N_COMPONENTS, POSITION
from sensortrust.plant import CartPole
from sensortrust.utilities import emit_warning

# Relative tolerance below which two endpoint objectives count as tied.
TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class Hypothesis:
    """
    Filter estimate under one pipeline hypothesis.

    Parameters
    ----------
    label : str
        "h0" (probed sensor trusted) or "h1" (probed sensor excluded).
    x : np.ndarray
        Estimate mean.
    P : np.ndarray
        Estimate covariance (PSD).
    R : np.ndarray, optional
        Measurement noise of the hypothesis' pipeline; zero when omitted.
    available : np.ndarray, optional
        Components the hypothesis' pipeline measures; all when omitted.
    """
    label: str
    x: np.ndarray
    P: np.ndarray
    R: Optional[np.ndarray] = None
    available: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(-1)
        P = np.array(self.P, dtype=float)
        if x.shape != (N_COMPONENTS,) or P.shape != (N_COMPONENTS, N_COMPONENTS):
            raise ValueError(f"Hypothesis {self.label} needs a 4-vector and a 4x4 covariance")
        if not np.allclose(P, P.T, atol=1e-12) or np.linalg.eigvalsh(0.5 * (P + P.T)).min() < -1e-10:
            raise ValueError(f"Hypothesis {self.label} covariance must be symmetric PSD")
        R = np.zeros((N_COMPONENTS, N_COMPONENTS)) if self.R is None else np.array(self.R, dtype=float)
        available = np.ones(N_COMPONENTS, dtype=bool) if self.available is None else np.array(self.available, dtype=bool)
        object.__setattr__(self, 'x', x)
        object.__setattr__(self, 'P', P)
        object.__setattr__(self, 'R', R)
        object.__setattr__(self, 'available', available)

    @classmethod
    def from_estimate(cls, label: str, estimate: EkfEstimate, R=None, available=None) -> 'Hypothesis':
        return cls(label=label, x=estimate.x, P=estimate.P, R=R, available=available)


@dataclass(frozen=True)
class SafeSet:
    """
    Box on pole angle and cart position, enforced on predicted means.
    """
    theta_max: float = 0.5
    p_max: float = 2.4

    def __post_init__(self):
        for name in ('theta_max', 'p_max'):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"SafeSet {name} must be finite and positive, got {value}")

    def bounds(self) -> Tuple[Tuple[int, float], ...]:
        """(state index, symmetric bound) pairs."""
        return ((POSITION, self.p_max), (ANGLE, self.theta_max))

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return all(abs(x[i]) <= bound for i, bound in self.bounds())

    def to_dict(self):
        return {"theta_max": self.theta_max, "p_max": self.p_max}

    @classmethod
    def from_dict(cls, data) -> 'SafeSet':
        return cls(**data)


@dataclass(frozen=True)
class ProbingResult:
    """
    Chosen input, its objective value and whether the safety interval was feasible.
    """
    u: float
    kl: float
    feasible: bool
    interval: Optional[Tuple[float, float]] = None
    indices: np.ndarray = field(default_factory=lambda: np.arange(N_COMPONENTS))


def innovation_gap(h0: Hypothesis, h1: Hypothesis, plant: CartPole) -> Tuple[np.ndarray, np.ndarray]:
    """
    Difference of the affine next-state predictions under both hypotheses.

    Returns
    -------
    tuple of np.ndarray
        (F_gap, G_gap) with F_gap = f(x0) - f(x1) and G_gap = g(x0) - g(x1).
    """
    f0, g0 = plant.affine_decomposition(h0.x)
    f1, g1 = plant.affine_decomposition(h1.x)
    return f0 - f1, g0 - g1


def _cho(Sigma: np.ndarray):
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    try:
        return linalg.cho_factor(Sigma)
    except linalg.LinAlgError:
        raise ValueError(f"Innovation covariance is singular:\n{Sigma}")


def covariance_term(Sigma0: np.ndarray, Sigma1: np.ndarray) -> float:
    """
    Trace and log-determinant part of the Gaussian KL(N0 || N1).

    Zero when the covariances are equal.
    """
    Sigma0 = np.atleast_2d(np.asarray(Sigma0, dtype=float))
    factor1 = _cho(Sigma1)
    factor0 = _cho(Sigma0)
    n = Sigma0.shape[0]
    trace = np.trace(linalg.cho_solve(factor1, Sigma0))
    logdet0 = 2.0 * np.sum(np.log(np.diag(factor0[0])))
    logdet1 = 2.0 * np.sum(np.log(np.diag(factor1[0])))
    return 0.5 * float(trace - n + logdet1 - logdet0)


def gaussian_kl(mean0, Sigma0, mean1, Sigma1) -> float:
    """KL(N(mean0, Sigma0) || N(mean1, Sigma1))."""
    d = np.atleast_1d(np.asarray(mean1, dtype=float) - np.asarray(mean0, dtype=float))
    quad = float(d @ linalg.cho_solve(_cho(Sigma1), d))
    return 0.5 * quad + covariance_term(Sigma0, Sigma1)


def kl_objective(
    F_gap: np.ndarray,
    G_gap: np.ndarray,
    Sigma: np.ndarray,
    u,
    include_covariance_term: bool = False,
    Sigma0: Optional[np.ndarray] = None,
):
    """
    Mahalanobis form of the innovation KL divergence, 0.5 ||F + G u||^2.

    Parameters
    ----------
    F_gap, G_gap : np.ndarray
        Innovation gap on the compared components.
    Sigma : np.ndarray
        Innovation covariance under h1 (positive definite).
    u : float or np.ndarray
        Input(s); an array returns one value per input.
    include_covariance_term : bool, optional
        Add the trace/log-det term using ``Sigma0`` as the h0 covariance.
    Sigma0 : np.ndarray, optional
        Required with ``include_covariance_term``.

    Returns
    -------
    float or np.ndarray

    Raises
    ------
    ValueError
        If ``Sigma`` is singular.
    """
    F_gap = np.atleast_1d(np.asarray(F_gap, dtype=float))
    G_gap = np.atleast_1d(np.asarray(G_gap, dtype=float))
    factor = _cho(Sigma)
    a = float(F_gap @ linalg.cho_solve(factor, F_gap))
    b = float(F_gap @ linalg.cho_solve(factor, G_gap))
    c = float(G_gap @ linalg.cho_solve(factor, G_gap))
    u_arr = np.asarray(u, dtype=float)
    value = 0.5 * (a + 2.0 * b * u_arr + c * u_arr ** 2)
    if include_covariance_term:
        if Sigma0 is None:
            raise ValueError("include_covariance_term requires Sigma0")
        value = value + covariance_term(Sigma0, Sigma)
    return float(value) if value.ndim == 0 else value


def safety_interval(h: Hypothesis, safe: SafeSet, plant: CartPole) -> Optional[Tuple[float, float]]:
    """
    Inputs keeping the predicted mean of ``h`` inside the safe set.

    Each bounded row r gives -c <= f_r + g_r u <= c, intersected with the
    saturation interval.

    Returns
    -------
    tuple of float or None
        (u_low, u_high), or None when the interval is empty.
    """
    f_d, g_d = plant.affine_decomposition(h.x)
    u_max = plant.params.u_max
    low, high = -u_max, u_max
    for row, bound in safe.bounds():
        f, g = f_d[row], g_d[row]
        if abs(g) < 1e-15:
            if abs(f) > bound:
                return None
            continue
        a, b = (-bound - f) / g, (bound - f) / g
        low, high = max(low, min(a, b)), min(high, max(a, b))
    if low > high:
        return None
    return low, high


def intersect_intervals(*intervals) -> Optional[Tuple[float, float]]:
    if any(interval is None for interval in intervals):
        return None
    low = max(interval[0] for interval in intervals)
    high = min(interval[1] for interval in intervals)
    return (low, high) if low <= high else None


def innovation_covariance(h: Hypothesis, plant: CartPole, indices: np.ndarray, u: float = 0.0) -> np.ndarray:
    """Predicted innovation covariance F P F^T + Q + R on ``indices``."""
    F, _ = plant.linearize(h.x, u)
    P_pred = F @ h.P @ F.T + plant.Q
    S = P_pred[np.ix_(indices, indices)] + h.R[np.ix_(indices, indices)]
    return 0.5 * (S + S.T)


def solve_probing(
    h0: Hypothesis,
    h1: Hypothesis,
    safe: SafeSet,
    plant: CartPole,
    u_nominal: float = 0.0,
    logger: Optional[logging.Logger] = None,
) -> ProbingResult:
    """
    Maximize the innovation KL over the safe input interval.

    The objective is a convex quadratic in u, so the maximum lies at an
    endpoint. Equal endpoints go to the one nearer ``u_nominal``. When no
    input is safe under both hypotheses the nominal input is returned with
    ``feasible=False``.

    Parameters
    ----------
    h0, h1 : Hypothesis
        Probed sensor trusted / excluded.
    safe : SafeSet
    plant : CartPole
    u_nominal : float, optional
        Nominal controller's input.
    logger : logging.Logger, optional
        Receives the infeasibility warning.

    Returns
    -------
    ProbingResult
    """
    indices = np.flatnonzero(h0.available & h1.available)
    u_max = plant.params.u_max
    u_nominal = float(np.clip(u_nominal, -u_max, u_max))
    if indices.size == 0:
        emit_warning("Probing skipped: hypotheses share no measured component", logger)
        return ProbingResult(u=u_nominal, kl=0.0, feasible=False, indices=indices)

    F_gap, G_gap = innovation_gap(h0, h1, plant)
    F_gap, G_gap = F_gap[indices], G_gap[indices]
    Sigma = innovation_covariance(h1, plant, indices, u_nominal)

    interval = intersect_intervals(safety_interval(h0, safe, plant), safety_interval(h1, safe, plant))
    if interval is None:
        emit_warning(f"Probing infeasible under both hypotheses; keeping nominal input {u_nominal:.4g}", logger)
        kl = kl_objective(F_gap, G_gap, Sigma, u_nominal)
        return ProbingResult(u=u_nominal, kl=kl, feasible=False, indices=indices)

    low, high = interval
    kl_low = kl_objective(F_gap, G_gap, Sigma, low)
    kl_high = kl_objective(F_gap, G_gap, Sigma, high)
    if abs(kl_high - kl_low) <= TIE_TOLERANCE * max(1.0, abs(kl_high), abs(kl_low)):
        u_star = low if abs(low - u_nominal) < abs(high - u_nominal) else high
    else:
        u_star = high if kl_high > kl_low else low
    kl = kl_high if u_star == high else kl_low
    return ProbingResult(u=float(u_star), kl=kl, feasible=True, interval=interval, indices=indices)
