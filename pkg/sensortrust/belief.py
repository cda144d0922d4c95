"""
belief.py

Per-sensor attack beliefs: exact Bayesian-network inference from detector
alerts, and the likelihood-ratio update that follows a probing input.
"""
import itertools
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.stats import multivariate_normal

from sensortrust.detection import DetectorCharacterization
from sensortrust.perception import N_COMPONENTS, PerceptionGraph
from sensortrust.sensors import SensorId
from sensortrust.utilities import emit_warning

BELIEF_CLAMP = 1e-3
DEFAULT_PRIOR = 0.05
N_SENSORS = len(SensorId)

# All 2^3 joint attack configurations, rows in lexicographic order.
_CONFIGURATIONS = np.array(list(itertools.product((0, 1), repeat=N_SENSORS)), dtype=int)


def clamp_probability(pi) -> np.ndarray:
    return np.clip(np.asarray(pi, dtype=float), BELIEF_CLAMP, 1.0 - BELIEF_CLAMP)


@dataclass(frozen=True)
class Belief:
    """
    Attack probabilities per sensor, clamped to [1e-3, 1 - 1e-3].
    """
    pi: np.ndarray

    def __post_init__(self):
        pi = np.array(self.pi, dtype=float).reshape(-1)
        if pi.shape != (N_SENSORS,):
            raise ValueError(f"Belief needs {N_SENSORS} probabilities, got shape {pi.shape}")
        if not np.all(np.isfinite(pi)) or np.any((pi < 0) | (pi > 1)):
            raise ValueError(f"Belief entries must be probabilities, got {pi.tolist()}")
        object.__setattr__(self, 'pi', clamp_probability(pi))

    @classmethod
    def uniform(cls, value: float = DEFAULT_PRIOR) -> 'Belief':
        return cls(np.full(N_SENSORS, value))

    def __getitem__(self, sensor) -> float:
        return float(self.pi[int(SensorId.parse(sensor))])

    def with_value(self, sensor, value: float) -> 'Belief':
        pi = self.pi.copy()
        pi[int(SensorId.parse(sensor))] = value
        return Belief(pi)


@dataclass(frozen=True)
class BnModel:
    """
    Bayesian network over sensor attack states z, component compromise s
    and alerts a.

    Parameters
    ----------
    graph : PerceptionGraph
        Edges define s_j = max over N(j) of z_i.
    characterization : DetectorCharacterization
        Alert-model parameters per component.
    """
    graph: PerceptionGraph = field(default_factory=PerceptionGraph)
    characterization: DetectorCharacterization = field(default_factory=DetectorCharacterization)

    def propagate(self, z) -> np.ndarray:
        """Component compromise s from sensor attack bits z."""
        return (self.graph.incidence() @ np.asarray(z, dtype=int) > 0).astype(int)


def _component_factors(model: BnModel, s: np.ndarray, a: np.ndarray, a_prev: np.ndarray) -> np.ndarray:
    """P(a_j | s_j, a_prev_j) for every row of s (shape (n, 4))."""
    ch = model.characterization
    eta = np.where(a_prev == 1, ch.eta1, ch.eta0)
    xi = np.where(a_prev == 1, ch.xi1_mean, ch.xi0_mean)
    clean = np.where(a == 1, eta, 1.0 - eta)
    attacked = np.where(a == 1, 1.0 - xi, xi)
    return np.where(s == 1, attacked, clean)


def alert_likelihood(model: BnModel, z, a, a_prev, observed=None) -> float:
    """
    P(a_k | z, a_{k-1}) with compromise propagated through the graph.

    For s_j = 0 the false-alarm branch applies (eta); for s_j = 1 the
    missed-detection rate is marginalized over its Beta prior, which reduces
    to the Beta mean.

    Parameters
    ----------
    model : BnModel
    z : array-like
        0/1 attack bit per sensor.
    a, a_prev : array-like
        Current and previous 0/1 alert per component.
    observed : array-like of bool, optional
        Components whose alert is evidence; the rest contribute factor 1.

    Returns
    -------
    float
    """
    s = model.propagate(z)[None, :]
    factors = _component_factors(model, s, np.asarray(a, dtype=int), np.asarray(a_prev, dtype=int))[0]
    if observed is not None:
        factors = np.where(np.asarray(observed, dtype=bool), factors, 1.0)
    return float(np.prod(factors))


def alert_posterior(belief: Belief, model: BnModel, a, a_prev, observed=None) -> Belief:
    """
    Posterior attack probabilities given the current and previous alerts.

    Exact enumeration over the 8 joint attack configurations with the
    independent prior given by ``belief``.

    Parameters
    ----------
    belief : Belief
        Prior (the previous step's posterior).
    model : BnModel
    a, a_prev : array-like
        Current and previous 0/1 alerts per component.
    observed : array-like of bool, optional
        Mask of components whose alerts count as evidence.

    Returns
    -------
    Belief
    """
    a = np.asarray(a, dtype=int)
    a_prev = np.asarray(a_prev, dtype=int)
    if a.shape != (N_COMPONENTS,) or a_prev.shape != (N_COMPONENTS,):
        raise ValueError(f"Alert vectors must have {N_COMPONENTS} entries")
    Z = _CONFIGURATIONS
    prior = np.prod(np.where(Z == 1, belief.pi, 1.0 - belief.pi), axis=1)
    S = (Z @ model.graph.incidence().T > 0).astype(int)
    factors = _component_factors(model, S, a, a_prev)
    if observed is not None:
        factors = np.where(np.asarray(observed, dtype=bool), factors, 1.0)
    joint = prior * np.prod(factors, axis=1)
    posterior = (joint @ Z) / joint.sum()
    return Belief(clamp_probability(posterior))


def probing_posterior(
    belief: Belief,
    sensor: SensorId,
    y: np.ndarray,
    h0: Tuple[np.ndarray, np.ndarray],
    h1: Tuple[np.ndarray, np.ndarray],
    logger: Optional[logging.Logger] = None,
) -> Belief:
    """
    Likelihood-ratio update of one sensor's belief after probing.

    ``h0`` is the innovation model (mean, covariance) with the sensor trusted,
    ``h1`` the model with the sensor excluded. A measurement explained by
    ``h1`` raises the sensor's attack probability:
    ``pi <- pi N1 / (pi N1 + (1 - pi) N0)``.

    Parameters
    ----------
    belief : Belief
    sensor : SensorId
        Sensor selected for probing.
    y : np.ndarray
        Measurement on the compared components.
    h0, h1 : tuple of np.ndarray
        (mean, covariance) under each hypothesis.
    logger : logging.Logger, optional
        Receives the skipped-update warning.

    Returns
    -------
    Belief
        Unchanged when either covariance is degenerate.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.size == 0:
        emit_warning("Probing update skipped: no comparable components", logger)
        return belief
    log_densities = []
    for label, (mean, cov) in (("h0", h0), ("h1", h1)):
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        if cov.shape != (y.size, y.size) or not np.all(np.isfinite(cov)) or np.linalg.eigvalsh(cov).min() <= 0:
            emit_warning(f"Probing update skipped: degenerate {label} covariance", logger)
            return belief
        log_densities.append(multivariate_normal.logpdf(y, mean=np.atleast_1d(mean), cov=cov))
    log_n0, log_n1 = log_densities

    pi = belief[sensor]
    log_odds = np.log(pi) - np.log1p(-pi) + log_n1 - log_n0
    updated = 0.5 * (1.0 + np.tanh(0.5 * log_odds))
    return belief.with_value(sensor, float(clamp_probability(updated)))
