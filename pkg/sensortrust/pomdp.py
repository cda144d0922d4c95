"""
pomdp.py

Two-sensor sensor-selection POMDP: belief maps, expected posterior loss,
the myopic advantage of the expensive sensor, garbling, and discounted value
iteration on a belief grid.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from sensortrust.utilities import AssumptionViolation, ConvergenceError

logger = logging.getLogger(__name__)

MIN_GRID_SIZE = 1000


@dataclass(frozen=True)
class Chain2:
    """
    Two-state attack chain with transition matrix ``A[i, j] = P(z+ = j | z = i)``.
    """
    A: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.shape != (2, 2):
            raise ValueError(f"Transition matrix must be 2x2, got {A.shape}")
        if np.any(A < 0) or not np.allclose(A.sum(axis=1), 1.0):
            raise ValueError(f"Transition matrix rows must be probability vectors, got {A.tolist()}")
        if not (0 < A[0, 0] < 1 and 0 < A[1, 1] < 1):
            raise ValueError("Chain must be ergodic: a_00 and a_11 in (0, 1)")
        object.__setattr__(self, 'A', A)

    @classmethod
    def from_rates(cls, a01: float, a11: float) -> 'Chain2':
        return cls(np.array([[1.0 - a01, a01], [1.0 - a11, a11]]))

    @property
    def a01(self) -> float:
        return float(self.A[0, 1])

    @property
    def a11(self) -> float:
        return float(self.A[1, 1])

    @property
    def stationary(self) -> float:
        """Fixed point of the prediction map."""
        return self.a01 / (1.0 - self.a11 + self.a01)

    def to_dict(self) -> Dict[str, Any]:
        return {"a01": self.a01, "a11": self.a11}


@dataclass(frozen=True)
class SensorModel2:
    """
    Binary alarm with false-positive rate ``alpha`` and true-positive rate ``tau``.
    """
    alpha: float
    tau: float

    def __post_init__(self):
        if not (0 < self.alpha < 1 and 0 < self.tau < 1):
            raise ValueError(f"alpha and tau must lie in (0, 1), got alpha={self.alpha}, tau={self.tau}")
        if self.alpha >= self.tau:
            raise ValueError(f"Sensor must be non-trivial (alpha < tau), got alpha={self.alpha}, tau={self.tau}")

    @property
    def observation_matrix(self) -> np.ndarray:
        """``O[i, j] = P(o = i | z = j)``."""
        return np.array([[1.0 - self.alpha, 1.0 - self.tau], [self.alpha, self.tau]])

    def to_dict(self) -> Dict[str, Any]:
        return {"alpha": self.alpha, "tau": self.tau}


@dataclass(frozen=True)
class PomdpConfig:
    """
    Parameters
    ----------
    lam : float
        Cost per use of the expensive sensor.
    gamma : float
        Discount factor in [0, 1).
    grid_size : int
        Number of belief grid points (at least 1000).
    tol : float
        Sup-norm stopping tolerance of value iteration.
    max_iter : int
        Iteration cap.
    """
    lam: float = 0.05
    gamma: float = 0.9
    grid_size: int = 10_000
    tol: float = 1e-10
    max_iter: int = 20_000

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"Sensor cost must be non-negative, got {self.lam}")
        if not 0 <= self.gamma < 1:
            raise ValueError(f"Discount must lie in [0, 1), got {self.gamma}")
        if self.grid_size < MIN_GRID_SIZE:
            raise ValueError(f"Belief grid needs at least {MIN_GRID_SIZE} points, got {self.grid_size}")
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("tol must be positive and max_iter at least 1")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.grid_size)

    def to_dict(self) -> Dict[str, Any]:
        return {"lambda": self.lam, "gamma": self.gamma, "grid_size": self.grid_size, "tol": self.tol, "max_iter": self.max_iter}


def check_sensor_ordering(sensor_c: SensorModel2, sensor_e: SensorModel2) -> None:
    """
    Raise AssumptionViolation unless the expensive sensor is strictly more
    informative: ``alpha_E < alpha_C`` and ``tau_E > tau_C``.
    """
    if not (sensor_e.alpha < sensor_c.alpha and sensor_e.tau > sensor_c.tau):
        raise AssumptionViolation(
            f"Expensive sensor (alpha={sensor_e.alpha}, tau={sensor_e.tau}) is not strictly more informative "
            f"than the cheap sensor (alpha={sensor_c.alpha}, tau={sensor_c.tau})"
        )


def predict_belief(chain: Chain2, pi):
    """T(pi) = a01 (1 - pi) + a11 pi."""
    return chain.a01 * (1.0 - np.asarray(pi, dtype=float)) + chain.a11 * np.asarray(pi, dtype=float)


def observation_probability(sensor: SensorModel2, pi, o: int):
    """P(o | pi) for one sensor."""
    pi = np.asarray(pi, dtype=float)
    p_plus = sensor.tau * pi + sensor.alpha * (1.0 - pi)
    return p_plus if o == 1 else 1.0 - p_plus


def update_belief(sensor: SensorModel2, pi_pred, o: int):
    """
    Bayes posterior after observing ``o`` from ``sensor``.

    Raises
    ------
    ValueError
        If ``o`` is not 0 or 1.
    """
    if o not in (0, 1):
        raise ValueError(f"Observation must be 0 or 1, got {o}")
    pi_pred = np.asarray(pi_pred, dtype=float)
    hit = sensor.tau if o == 1 else 1.0 - sensor.tau
    false = sensor.alpha if o == 1 else 1.0 - sensor.alpha
    return hit * pi_pred / (hit * pi_pred + false * (1.0 - pi_pred))


def classification_cost(pi):
    """Expected 0-1 loss of the MAP classifier."""
    pi = np.asarray(pi, dtype=float)
    return np.minimum(pi, 1.0 - pi)


def posterior_loss(sensor: SensorModel2, pi):
    """Expected posterior classification error, min-of-affine form."""
    pi = np.asarray(pi, dtype=float)
    a, t = sensor.alpha, sensor.tau
    return np.minimum(pi * t, (1.0 - pi) * a) + np.minimum(pi * (1.0 - t), (1.0 - pi) * (1.0 - a))


def expected_posterior_loss(sensor: SensorModel2, pi):
    """Expected posterior classification error through the observation probabilities and updates."""
    total = 0.0
    for o in (0, 1):
        total = total + observation_probability(sensor, pi, o) * classification_cost(update_belief(sensor, pi, o))
    return total


def breakpoints(sensor: SensorModel2) -> Tuple[float, float]:
    """(pi^(1), pi^(0)) where the two minima of the loss switch branch."""
    a, t = sensor.alpha, sensor.tau
    return a / (t + a), (1.0 - a) / (2.0 - a - t)


def loss_slopes(sensor: SensorModel2) -> Tuple[float, float, float]:
    """Slopes of the loss left of, between and right of the breakpoints."""
    return 1.0, 1.0 - sensor.alpha - sensor.tau, -1.0


def myopic_advantage(sensor_c: SensorModel2, sensor_e: SensorModel2, pi):
    """A(pi) = L_C(pi) - L_E(pi)."""
    return posterior_loss(sensor_c, pi) - posterior_loss(sensor_e, pi)


def advantage_knots(sensor_c: SensorModel2, sensor_e: SensorModel2) -> Tuple[np.ndarray, np.ndarray]:
    """
    Knots of the piecewise-linear advantage (including 0 and 1) and its values there.

    Requires the sensor ordering, under which the advantage vanishes outside
    the expensive sensor's breakpoints.
    """
    e1, e0 = breakpoints(sensor_e)
    c1, c0 = breakpoints(sensor_c)
    xs = np.array([0.0, e1, c1, c0, e0, 1.0])
    inner = myopic_advantage(sensor_c, sensor_e, np.array([c1, c0]))
    return xs, np.array([0.0, 0.0, inner[0], inner[1], 0.0, 0.0])


def advantage_slope_table(sensor_c: SensorModel2, sensor_e: SensorModel2) -> pd.DataFrame:
    """One row per linear piece of the advantage: start, end and slope."""
    check_sensor_ordering(sensor_c, sensor_e)
    xs, vs = advantage_knots(sensor_c, sensor_e)
    return pd.DataFrame({
        "start": xs[:-1],
        "end": xs[1:],
        "slope": np.diff(vs) / np.diff(xs),
    })


def myopic_region(sensor_c: SensorModel2, sensor_e: SensorModel2, lam: float) -> Optional[Tuple[float, float]]:
    """
    Open belief interval where the expensive sensor's advantage exceeds ``lam``.

    The advantage is concave and piecewise linear with knots at the four
    breakpoints, so the super-level set is one interval or empty.

    Parameters
    ----------
    sensor_c, sensor_e : SensorModel2
        Cheap and expensive sensor.
    lam : float
        Sensor cost (non-negative).

    Returns
    -------
    tuple of float or None
        (pi_low, pi_high), or None when the advantage never exceeds ``lam``.

    Raises
    ------
    AssumptionViolation
        If the expensive sensor is not strictly more informative.
    """
    check_sensor_ordering(sensor_c, sensor_e)
    if lam < 0:
        raise ValueError(f"Sensor cost must be non-negative, got {lam}")
    xs, vs = advantage_knots(sensor_c, sensor_e)
    if vs.max() <= lam:
        return None

    def crossing(i):
        return xs[i] + (lam - vs[i]) / (vs[i + 1] - vs[i]) * (xs[i + 1] - xs[i])

    low = next(crossing(i) for i in range(len(xs) - 1) if vs[i] <= lam < vs[i + 1])
    high = next(crossing(i) for i in reversed(range(len(xs) - 1)) if vs[i] > lam >= vs[i + 1])
    return float(low), float(high)


def myopic_policy(sensor_c: SensorModel2, sensor_e: SensorModel2, lam: float, pi) -> np.ndarray:
    """True where the myopic rule uses the expensive sensor."""
    return myopic_advantage(sensor_c, sensor_e, pi) > lam


def garbling_matrix(sensor_c: SensorModel2, sensor_e: SensorModel2) -> Tuple[np.ndarray, bool]:
    """
    Solve O_C = O_E G for G.

    Returns
    -------
    tuple
        (G, valid) where ``valid`` says G is column-stochastic with entries in [0, 1].

    Raises
    ------
    ValueError
        If O_E is singular.
    """
    O_e = sensor_e.observation_matrix
    if abs(np.linalg.det(O_e)) < 1e-14:
        raise ValueError("Expensive sensor observation matrix is singular")
    G = np.linalg.solve(O_e, sensor_c.observation_matrix)
    tol = 1e-12
    valid = bool(np.all(G >= -tol) and np.all(G <= 1 + tol) and np.allclose(G.sum(axis=0), 1.0))
    return G, valid


@dataclass
class ValueIterationResult:
    """
    Converged value and action values on the predicted-belief grid.

    ``policy`` is True where the expensive sensor is chosen; ``deltas`` holds
    the sup-norm change of every sweep.
    """
    grid: np.ndarray
    V: np.ndarray
    Q_cheap: np.ndarray
    Q_expensive: np.ndarray
    policy: np.ndarray
    iterations: int
    deltas: List[float] = field(default_factory=list)

    def to_frame(self, advantage: Optional[np.ndarray] = None) -> pd.DataFrame:
        frame = pd.DataFrame({
            "pi": self.grid,
            "V": self.V,
            "Q_cheap": self.Q_cheap,
            "Q_expensive": self.Q_expensive,
            "use_expensive": self.policy,
        })
        if advantage is not None:
            frame.insert(1, "advantage", advantage)
        return frame


def _continuation(chain: Chain2, sensor: SensorModel2, grid: np.ndarray, V: np.ndarray) -> np.ndarray:
    total = np.zeros_like(grid)
    for o in (0, 1):
        successor = predict_belief(chain, update_belief(sensor, grid, o))
        total += observation_probability(sensor, grid, o) * np.interp(successor, grid, V)
    return total


def value_iteration(
    chain: Chain2,
    sensor_c: SensorModel2,
    sensor_e: SensorModel2,
    config: PomdpConfig = PomdpConfig(),
) -> ValueIterationResult:
    """
    Discounted sensor-selection values on a predicted-belief grid.

    Each step predicts, picks a sensor, observes, updates and classifies; the
    stage cost is the expected posterior loss plus ``lam`` for the expensive
    sensor. Successor beliefs are exact and values between grid points are
    linearly interpolated.

    Parameters
    ----------
    chain : Chain2
    sensor_c, sensor_e : SensorModel2
        Cheap and expensive sensor.
    config : PomdpConfig

    Returns
    -------
    ValueIterationResult
        The expensive sensor is chosen where ``Q_C - Q_E > lam``.

    Raises
    ------
    ConvergenceError
        If the sup-norm change stays above ``config.tol`` for ``max_iter`` sweeps.
    """
    grid = config.grid
    L_c = posterior_loss(sensor_c, grid)
    L_e = posterior_loss(sensor_e, grid)
    V = np.minimum(L_c, L_e + config.lam)
    deltas: List[float] = []
    Q_c, Q_e = L_c, L_e
    for iteration in range(1, config.max_iter + 1):
        if config.gamma > 0:
            Q_c = L_c + config.gamma * _continuation(chain, sensor_c, grid, V)
            Q_e = L_e + config.gamma * _continuation(chain, sensor_e, grid, V)
        V_new = np.minimum(Q_c, Q_e + config.lam)
        delta = float(np.max(np.abs(V_new - V)))
        deltas.append(delta)
        V = V_new
        if delta < config.tol:
            break
    else:
        raise ConvergenceError(f"Value iteration did not converge in {config.max_iter} sweeps (last change {deltas[-1]:.3e})")
    logger.debug("Value iteration converged after %d sweeps", iteration)
    return ValueIterationResult(
        grid=grid, V=V, Q_cheap=Q_c, Q_expensive=Q_e,
        policy=(Q_c - Q_e) > config.lam, iterations=iteration, deltas=deltas,
    )


@dataclass
class DominanceReport:
    """
    Comparison of the optimal and myopic sensor-selection policies.

    Attributes
    ----------
    violations : int
        Grid points where the myopic rule selects probing but the optimal policy does not.
    extra_probing_measure : float
        Fraction of the grid where the optimal policy selects probing and the myopic does not.
    """
    region: Optional[Tuple[float, float]]
    violations: int
    extra_probing_measure: float
    violating_beliefs: np.ndarray
    result: ValueIterationResult

    @property
    def holds(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "holds": self.holds,
            "myopic_region": list(self.region) if self.region is not None else None,
            "violations": self.violations,
            "extra_probing_measure": self.extra_probing_measure,
            "iterations": self.result.iterations,
        }


def verify_dominance(
    chain: Chain2,
    sensor_c: SensorModel2,
    sensor_e: SensorModel2,
    config: PomdpConfig = PomdpConfig(),
    strict: bool = True,
    tol: float = 1e-12,
) -> DominanceReport:
    """
    Check that the optimal policy selects probing wherever the myopic rule does.

    Parameters
    ----------
    strict : bool, optional
        Raise AssertionError with a diagnostic dump on any violation.
    tol : float, optional
        Slack on ``Q_C - Q_E`` before a grid point counts as a violation.

    Raises
    ------
    AssumptionViolation
        If the expensive sensor is not strictly more informative.
    AssertionError
        With ``strict`` when a violation is found.
    """
    check_sensor_ordering(sensor_c, sensor_e)
    result = value_iteration(chain, sensor_c, sensor_e, config)
    myopic = myopic_policy(sensor_c, sensor_e, config.lam, result.grid)
    gap = result.Q_cheap - result.Q_expensive
    violating = myopic & (gap <= config.lam - tol)
    extra = result.policy & ~myopic
    report = DominanceReport(
        region=myopic_region(sensor_c, sensor_e, config.lam),
        violations=int(violating.sum()),
        extra_probing_measure=float(extra.mean()),
        violating_beliefs=result.grid[violating],
        result=result,
    )
    if strict and not report.holds:
        dump = pd.DataFrame({
            "pi": result.grid[violating],
            "advantage": myopic_advantage(sensor_c, sensor_e, result.grid[violating]),
            "Q_gap": gap[violating],
        })
        raise AssertionError(f"Optimal policy skips the expensive sensor inside the myopic region:\n{dump.head(20)}")
    return report


@dataclass(frozen=True)
class PomdpProblem:
    """
    A complete two-sensor problem: attack chain, sensor pair and solver settings.

    The defaults are the reference configuration used to check dominance.
    """
    chain: Chain2 = field(default_factory=lambda: Chain2.from_rates(0.02, 0.98))
    sensor_c: SensorModel2 = field(default_factory=lambda: SensorModel2(0.3, 0.7))
    sensor_e: SensorModel2 = field(default_factory=lambda: SensorModel2(0.05, 0.95))
    config: PomdpConfig = field(default_factory=PomdpConfig)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'PomdpProblem':
        """
        Build a problem from ``{a01, a11, sensor_c: {alpha, tau}, sensor_e: {...},
        lambda, gamma, grid_size, tol, max_iter}``; missing keys keep their defaults.

        Raises
        ------
        ValueError
            On unknown keys or invalid values.
        """
        known = {"a01", "a11", "sensor_c", "sensor_e", "lambda", "gamma", "grid_size", "tol", "max_iter"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"Unknown POMDP config keys: {unknown}")
        default = cls()
        chain = Chain2.from_rates(data.get("a01", default.chain.a01), data.get("a11", default.chain.a11))
        sensors = []
        for key, fallback in (("sensor_c", default.sensor_c), ("sensor_e", default.sensor_e)):
            spec = data.get(key, {})
            sensors.append(SensorModel2(spec.get("alpha", fallback.alpha), spec.get("tau", fallback.tau)))
        config = PomdpConfig(
            lam=data.get("lambda", default.config.lam),
            gamma=data.get("gamma", default.config.gamma),
            grid_size=int(data.get("grid_size", default.config.grid_size)),
            tol=data.get("tol", default.config.tol),
            max_iter=int(data.get("max_iter", default.config.max_iter)),
        )
        return cls(chain, sensors[0], sensors[1], config)

    def to_dict(self) -> Dict[str, Any]:
        out = {**self.chain.to_dict(), "sensor_c": self.sensor_c.to_dict(), "sensor_e": self.sensor_e.to_dict()}
        out.update(self.config.to_dict())
        return out


def analyze(problem: PomdpProblem) -> Tuple[Dict[str, Any], pd.DataFrame]:
    """
    Full analysis of one problem.

    Returns
    -------
    tuple
        (report, grid frame). The report holds breakpoints, the myopic region,
        the dominance check, the garbling matrix, the advantage slope table and
        the value-iteration sup-norm history. The frame has one row per belief
        grid point with the advantage, values and both policies.

    Raises
    ------
    AssumptionViolation
        If the expensive sensor is not strictly more informative.
    ConvergenceError
        If value iteration does not converge.
    """
    dominance = verify_dominance(problem.chain, problem.sensor_c, problem.sensor_e, problem.config, strict=False)
    G, valid = garbling_matrix(problem.sensor_c, problem.sensor_e)
    result = dominance.result
    advantage = myopic_advantage(problem.sensor_c, problem.sensor_e, result.grid)
    frame = result.to_frame(advantage)
    frame["myopic"] = myopic_policy(problem.sensor_c, problem.sensor_e, problem.config.lam, result.grid)
    report = {
        "problem": problem.to_dict(),
        "breakpoints": {
            "cheap": list(breakpoints(problem.sensor_c)),
            "expensive": list(breakpoints(problem.sensor_e)),
        },
        "dominance": dominance.to_dict(),
        "garbling": {"matrix": G.tolist(), "valid": bool(valid)},
        "slope_table": advantage_slope_table(problem.sensor_c, problem.sensor_e).to_dict(orient="records"),
        "sup_norm_history": result.deltas,
    }
    return report, frame
