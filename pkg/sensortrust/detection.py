"""
detection.py

Per-component one-sided CUSUM over standardized filter innovations, benign
calibration of thresholds and drifts to a false-alarm budget, and empirical
estimation of the alert-transition probabilities used by the belief model.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from sensortrust.perception import COMPONENT_NAMES, N_COMPONENTS
from sensortrust.utilities import emit_warning

DEFAULT_TAU_GRID = np.round(np.linspace(0.5, 50.0, 100), 6)
DEFAULT_BUDGET = 0.05
DEFAULT_BETA = (3.0, 7.0)


def _per_component(value, name: str) -> np.ndarray:
    array = np.broadcast_to(np.asarray(value, dtype=float), (N_COMPONENTS,)).copy()
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} must be finite, got {array.tolist()}")
    return array


class CusumState:
    """
    Vectorized one-sided CUSUM, one statistic per soft component.

    ``S <- max(0, S + |r| / sigma - b)``; alert when ``S > tau``, then reset.
    Unavailable components (NaN innovation) never alert and keep their
    statistic frozen.

    Parameters
    ----------
    tau : float or array-like
        Alert thresholds, strictly positive.
    b : float or array-like
        Drift terms, non-negative.
    """
    def __init__(self, tau, b):
        self.tau = _per_component(tau, "tau")
        self.b = _per_component(b, "b")
        if np.any(self.tau <= 0):
            raise ValueError(f"tau must be strictly positive, got {self.tau.tolist()}")
        if np.any(self.b < 0):
            raise ValueError(f"b must be non-negative, got {self.b.tolist()}")
        self.S = np.zeros(N_COMPONENTS)
        self.last_alert = np.zeros(N_COMPONENTS, dtype=int)

    def reset(self) -> None:
        self.S[:] = 0.0
        self.last_alert[:] = 0

    def update_normalized(self, z: np.ndarray) -> np.ndarray:
        """
        Advance on standardized magnitudes ``|r| / sigma`` (NaN = unavailable).

        Returns
        -------
        np.ndarray
            0/1 alert per component.
        """
        z = np.asarray(z, dtype=float)
        available = np.isfinite(z)
        candidate = np.maximum(0.0, self.S + np.where(available, z, 0.0) - self.b)
        S = np.where(available, candidate, self.S)
        alerts = (available & (S > self.tau)).astype(int)
        self.S = np.where(alerts == 1, 0.0, S)
        self.last_alert = alerts
        return alerts

    def update(self, r, sigma) -> np.ndarray:
        """
        Advance on raw innovations and their standard deviations.

        Raises
        ------
        ValueError
            If an available component has a non-positive sigma.
        """
        r = np.asarray(r, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        available = np.isfinite(r) & np.isfinite(sigma)
        if np.any(sigma[available] <= 0):
            raise ValueError(f"sigma must be strictly positive, got {sigma.tolist()}")
        z = np.full(N_COMPONENTS, np.nan)
        z[available] = np.abs(r[available]) / sigma[available]
        return self.update_normalized(z)


def cusum_update(state: CusumState, r, sigma) -> np.ndarray:
    """Functional alias of :meth:`CusumState.update`."""
    return state.update(r, sigma)


def run_detector(normalized: np.ndarray, tau, b) -> np.ndarray:
    """Alert sequence (T, 4) of a fresh detector over a (T, 4) normalized-innovation run."""
    detector = CusumState(tau, b)
    normalized = np.atleast_2d(np.asarray(normalized, dtype=float))
    return np.array([detector.update_normalized(z) for z in normalized], dtype=int).reshape(-1, N_COMPONENTS)


def alert_rate(runs: Sequence[np.ndarray], tau, b) -> np.ndarray:
    """Per-component alert rate over available steps of several runs."""
    alerts = np.zeros(N_COMPONENTS)
    steps = np.zeros(N_COMPONENTS)
    for run in runs:
        run = np.atleast_2d(np.asarray(run, dtype=float))
        alerts += run_detector(run, tau, b).sum(axis=0)
        steps += np.isfinite(run).sum(axis=0)
    return np.divide(alerts, steps, out=np.zeros(N_COMPONENTS), where=steps > 0)


@dataclass(frozen=True)
class DetectorCharacterization:
    """
    Alert-model parameters per component.

    Parameters
    ----------
    eta0, eta1 : np.ndarray
        P(a_k = 1 | no attack, a_{k-1} = 0) and P(a_k = 1 | no attack, a_{k-1} = 1).
    beta0, beta1 : np.ndarray
        (4, 2) Beta parameters of the missed-detection rates xi_0 and xi_1,
        i.e. P(a_k = 0 | attack, a_{k-1} = 0 or 1).
    """
    eta0: np.ndarray = field(default_factory=lambda: np.full(N_COMPONENTS, 0.05))
    eta1: np.ndarray = field(default_factory=lambda: np.full(N_COMPONENTS, 0.05))
    beta0: np.ndarray = field(default_factory=lambda: np.tile(DEFAULT_BETA, (N_COMPONENTS, 1)))
    beta1: np.ndarray = field(default_factory=lambda: np.tile(DEFAULT_BETA, (N_COMPONENTS, 1)))

    def __post_init__(self):
        for name in ('eta0', 'eta1'):
            value = _per_component(getattr(self, name), name)
            if np.any((value <= 0) | (value >= 1)):
                raise ValueError(f"{name} must lie in (0, 1), got {value.tolist()}")
            object.__setattr__(self, name, value)
        for name in ('beta0', 'beta1'):
            value = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (N_COMPONENTS, 2)).copy()
            if np.any(value <= 0):
                raise ValueError(f"{name} Beta parameters must be positive, got {value.tolist()}")
            object.__setattr__(self, name, value)

    @property
    def xi0_mean(self) -> np.ndarray:
        return self.beta0[:, 0] / self.beta0.sum(axis=1)

    @property
    def xi1_mean(self) -> np.ndarray:
        return self.beta1[:, 0] / self.beta1.sum(axis=1)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "eta0": self.eta0.tolist(),
            "eta1": self.eta1.tolist(),
            "beta0": self.beta0.tolist(),
            "beta1": self.beta1.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'DetectorCharacterization':
        return cls(**{key: np.asarray(value, dtype=float) for key, value in data.items()})


@dataclass(frozen=True)
class DetectorCalibration:
    """
    Calibrated detector: thresholds, drifts and alert-transition estimates.

    Serialized as ``{component: {tau, b, eta0, eta1}}``.
    """
    tau: np.ndarray
    b: np.ndarray
    eta0: np.ndarray = field(default_factory=lambda: np.full(N_COMPONENTS, 0.05))
    eta1: np.ndarray = field(default_factory=lambda: np.full(N_COMPONENTS, 0.05))

    def __post_init__(self):
        for name in ('tau', 'b', 'eta0', 'eta1'):
            object.__setattr__(self, name, _per_component(getattr(self, name), name))

    def detector(self) -> CusumState:
        return CusumState(self.tau, self.b)

    def characterization(self, beta: Tuple[float, float] = DEFAULT_BETA) -> DetectorCharacterization:
        return DetectorCharacterization(
            eta0=self.eta0,
            eta1=self.eta1,
            beta0=np.tile(beta, (N_COMPONENTS, 1)),
            beta1=np.tile(beta, (N_COMPONENTS, 1)),
        )

    def with_eta(self, eta0, eta1) -> 'DetectorCalibration':
        return DetectorCalibration(self.tau, self.b, eta0, eta1)

    def to_dict(self) -> Dict[str, Any]:
        return {
            name: {
                "tau": float(self.tau[j]),
                "b": float(self.b[j]),
                "eta0": float(self.eta0[j]),
                "eta1": float(self.eta1[j]),
            }
            for j, name in enumerate(COMPONENT_NAMES)
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'DetectorCalibration':
        missing = [name for name in COMPONENT_NAMES if name not in data]
        if missing:
            raise ValueError(f"Calibration is missing components: {missing}")
        return cls(**{
            key: np.array([data[name][key] for name in COMPONENT_NAMES], dtype=float)
            for key in ('tau', 'b', 'eta0', 'eta1')
        })


def calibrate(
    benign_runs: Sequence[np.ndarray],
    tau_grid: Optional[Iterable[float]] = None,
    budget: float = DEFAULT_BUDGET,
    min_runs: int = 20,
    logger: Optional[logging.Logger] = None,
) -> DetectorCalibration:
    """
    Tune drifts and thresholds on benign normalized innovations.

    Runs are split alternately into a training half, which sets
    ``b = mean + 0.5 std``, and a held-out half, on which ``tau`` is the
    smallest grid value with per-step alert rate below ``budget``.

    Parameters
    ----------
    benign_runs : sequence of np.ndarray
        One (T, 4) array of ``|r| / sigma`` per benign run, NaN where unavailable.
    tau_grid : iterable of float, optional
        Candidate thresholds; defaults to 100 values in [0.5, 50].
    budget : float, optional
        Per-step false-alarm budget.
    min_runs : int, optional
        Minimum number of benign runs.
    logger : logging.Logger, optional
        Receives the infeasible-budget warning.

    Returns
    -------
    DetectorCalibration
        Thresholds and drifts; eta fields hold placeholders until
        :func:`estimate_eta` is applied.

    Raises
    ------
    ValueError
        If fewer than ``min_runs`` runs or an empty grid are given.
    """
    if len(benign_runs) < min_runs:
        raise ValueError(f"Calibration needs at least {min_runs} benign runs, got {len(benign_runs)}")
    grid = np.sort(np.asarray(list(tau_grid) if tau_grid is not None else DEFAULT_TAU_GRID, dtype=float))
    if grid.size == 0:
        raise ValueError("tau_grid must not be empty")
    if np.any(grid <= 0):
        raise ValueError("tau_grid values must be strictly positive")

    runs = [np.atleast_2d(np.asarray(run, dtype=float)) for run in benign_runs]
    train, held_out = runs[0::2], runs[1::2]

    stacked = np.vstack(train)
    b = np.zeros(N_COMPONENTS)
    for j in range(N_COMPONENTS):
        values = stacked[:, j][np.isfinite(stacked[:, j])]
        if values.size:
            b[j] = values.mean() + 0.5 * values.std()

    tau = np.full(N_COMPONENTS, grid[-1])
    settled = np.zeros(N_COMPONENTS, dtype=bool)
    for candidate in grid:
        rates = alert_rate(held_out, candidate, b)
        newly = ~settled & (rates < budget)
        tau[newly] = candidate
        settled |= newly
        if settled.all():
            break
    for j in np.flatnonzero(~settled):
        emit_warning(
            f"No threshold meets the {budget:.0%} alert budget for {COMPONENT_NAMES[j]}; "
            f"using the largest grid value {grid[-1]}",
            logger,
        )
    return DetectorCalibration(tau=tau, b=b)


def estimate_eta(alert_sequences: Sequence[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Laplace-smoothed alert-transition frequencies on benign alert sequences.

    Each sequence is preceded by an implicit no-alert step, so an all-zero
    sequence of length N gives ``eta0 = 1 / (N + 2)``.

    Parameters
    ----------
    alert_sequences : sequence of np.ndarray
        (T,) or (T, 4) 0/1 arrays.

    Returns
    -------
    tuple of np.ndarray
        (eta0, eta1) per component.

    Raises
    ------
    ValueError
        If no sequence or only empty sequences are given.
    """
    sequences: List[np.ndarray] = []
    for sequence in alert_sequences:
        array = np.asarray(sequence, dtype=int)
        if array.ndim == 1:
            array = np.repeat(array[:, None], N_COMPONENTS, axis=1)
        if array.shape[0]:
            sequences.append(array)
    if not sequences:
        raise ValueError("estimate_eta needs at least one non-empty alert sequence")

    counts = np.zeros((2, 2, N_COMPONENTS))
    for array in sequences:
        previous = np.vstack([np.zeros((1, N_COMPONENTS), dtype=int), array[:-1]])
        for a_prev in (0, 1):
            for a in (0, 1):
                counts[a_prev, a] += ((previous == a_prev) & (array == a)).sum(axis=0)
    eta0 = (counts[0, 1] + 1.0) / (counts[0].sum(axis=0) + 2.0)
    eta1 = (counts[1, 1] + 1.0) / (counts[1].sum(axis=0) + 2.0)
    return eta0, eta1
