"""
estimation.py

Extended Kalman filter over soft measurements, its innovations, the FIFO
replay buffer and counterfactual re-estimation under alternate pipelines.
"""
import logging
from collections import deque
from dataclasses import dataclass, replace
from typing import Deque, Iterable, Optional, Tuple

import numpy as np
from scipy import linalg

from sensortrust.perception import N_COMPONENTS, PerceptionPipeline, SoftMeasurement
from sensortrust.sensors import ALL_SENSORS, RawMeasurementSet, SensorId
from sensortrust.utilities import EstimatorFault, emit_warning

PSD_TOLERANCE = 1e-10
DEFAULT_REPLAY_LENGTH = 100


@dataclass(frozen=True)
class EkfEstimate:
    """
    Filter mean ``x``, covariance ``P`` and time index ``k``.
    """
    x: np.ndarray
    P: np.ndarray
    k: int = 0

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(-1)
        P = np.array(self.P, dtype=float)
        if x.shape != (N_COMPONENTS,) or P.shape != (N_COMPONENTS, N_COMPONENTS):
            raise ValueError(f"EkfEstimate expects a 4-vector and a 4x4 covariance, got {x.shape} and {P.shape}")
        object.__setattr__(self, 'x', x)
        object.__setattr__(self, 'P', P)

    def to_dict(self):
        return {"x": self.x.tolist(), "P": self.P.tolist(), "k": self.k}


@dataclass(frozen=True)
class Innovation:
    """
    Innovation over the available components of a soft measurement.

    Attributes
    ----------
    r : np.ndarray
        y - C x_pred on the available rows.
    S : np.ndarray
        Innovation covariance C P_pred C^T + R on the same rows.
    indices : np.ndarray
        Component index of each row.
    """
    r: np.ndarray
    S: np.ndarray
    indices: np.ndarray

    @property
    def is_empty(self) -> bool:
        return self.indices.size == 0

    @property
    def mahalanobis(self) -> float:
        if self.is_empty:
            return 0.0
        return float(np.sqrt(self.r @ linalg.solve(self.S, self.r, assume_a='pos')))

    def normalized(self) -> np.ndarray:
        """|r_j| / sqrt(S_jj) per component, NaN where unavailable."""
        out = np.full(N_COMPONENTS, np.nan)
        if not self.is_empty:
            out[self.indices] = np.abs(self.r) / np.sqrt(np.diag(self.S))
        return out

    def full(self) -> np.ndarray:
        out = np.full(N_COMPONENTS, np.nan)
        out[self.indices] = self.r
        return out


def _symmetrize_psd(P: np.ndarray) -> np.ndarray:
    P = 0.5 * (P + P.T)
    if not np.all(np.isfinite(P)):
        raise EstimatorFault(f"Non-finite covariance:\n{P}")
    w, V = np.linalg.eigh(P)
    if w.min() < -PSD_TOLERANCE * max(1.0, abs(w.max())):
        raise EstimatorFault(f"Covariance lost positive semi-definiteness (min eigenvalue {w.min():.3e})")
    if w.min() < 0:
        P = (V * np.clip(w, 0.0, None)) @ V.T
        P = 0.5 * (P + P.T)
    return P


class ExtendedKalmanFilter:
    """
    EKF with Joseph-form updates.

    Parameters
    ----------
    model : object
        Provides ``step(x, u)`` and ``linearize(x, u) -> (F, G)``; a
        :class:`~sensortrust.plant.CartPole` or any linear surrogate.
    Q : np.ndarray, optional
        Process-noise covariance; defaults to ``model.Q``.
    logger : logging.Logger, optional
        Receives recoverable-condition warnings.
    """
    def __init__(self, model, Q: Optional[np.ndarray] = None, logger: Optional[logging.Logger] = None):
        self.model = model
        self.Q = np.array(Q if Q is not None else model.Q, dtype=float)
        self._logger = logger

    def predict(self, est: EkfEstimate, u: float) -> EkfEstimate:
        """
        Propagate mean through the noiseless model and covariance through F.

        Raises
        ------
        EstimatorFault
            If the predicted covariance is not finite.
        """
        x_pred = self.model.step(est.x, u)
        F, _ = self.model.linearize(est.x, u)
        P_pred = _symmetrize_psd(F @ est.P @ F.T + self.Q)
        if not np.all(np.isfinite(x_pred)):
            raise EstimatorFault(f"Non-finite predicted state {x_pred.tolist()}")
        return EkfEstimate(x_pred, P_pred, est.k + 1)

    def innovation(self, pred: EkfEstimate, soft: SoftMeasurement, noise_scale: float = 1.0) -> Innovation:
        """Innovation of ``soft`` against prediction ``pred`` (C = selected identity rows)."""
        idx = soft.indices
        r = soft.y[idx] - pred.x[idx]
        S = pred.P[np.ix_(idx, idx)] + noise_scale * soft.R[np.ix_(idx, idx)]
        return Innovation(r=r, S=0.5 * (S + S.T), indices=idx)

    def update(self, pred: EkfEstimate, soft: SoftMeasurement, noise_scale: float = 1.0) -> Tuple[EkfEstimate, Innovation]:
        """
        Joseph-form measurement update on the available components.

        Parameters
        ----------
        pred : EkfEstimate
            Prediction x_{k:k-1}, P_{k:k-1}.
        soft : SoftMeasurement
            Soft measurement at k.
        noise_scale : float, optional
            Multiplier on R (used by weighted robust updates).

        Returns
        -------
        tuple
            (posterior, innovation). With nothing available the posterior is
            the prediction.

        Raises
        ------
        EstimatorFault
            If the innovation covariance is singular.
        """
        innov = self.innovation(pred, soft, noise_scale)
        if innov.is_empty:
            return pred, innov
        idx = innov.indices
        C = np.eye(N_COMPONENTS)[idx]
        R = noise_scale * soft.R[np.ix_(idx, idx)]
        try:
            factor = linalg.cho_factor(innov.S)
        except linalg.LinAlgError:
            raise EstimatorFault(f"Singular innovation covariance at k={pred.k}:\n{innov.S}")
        K = linalg.cho_solve(factor, C @ pred.P).T
        x_post = pred.x + K @ innov.r
        I_KC = np.eye(N_COMPONENTS) - K @ C
        P_post = _symmetrize_psd(I_KC @ pred.P @ I_KC.T + K @ R @ K.T)
        return EkfEstimate(x_post, P_post, pred.k), innov

    def step(self, est: EkfEstimate, u: float, soft: SoftMeasurement) -> Tuple[EkfEstimate, EkfEstimate, Innovation]:
        """Predict then update; returns (prediction, posterior, innovation)."""
        pred = self.predict(est, u)
        post, innov = self.update(pred, soft)
        return pred, post, innov


@dataclass(frozen=True)
class ReplayRecord:
    """
    What the loop stored at step ``k``.

    ``u_prev`` is the force applied between k-1 and k (None at k = 0);
    ``prev_soft`` is the soft measurement the live pipeline chained from.
    """
    k: int
    raw: RawMeasurementSet
    u_prev: Optional[float]
    prev_soft: Optional[SoftMeasurement]
    estimate: EkfEstimate


class ReplayBuffer:
    """FIFO of the last ``capacity`` replay records, oldest first."""

    def __init__(self, capacity: int = DEFAULT_REPLAY_LENGTH):
        if capacity < 1:
            raise ValueError(f"Replay buffer capacity must be at least 1, got {capacity}")
        self.capacity = capacity
        self._records: Deque[ReplayRecord] = deque(maxlen=capacity)

    def append(self, record: ReplayRecord) -> None:
        if self._records and record.k <= self._records[-1].k:
            raise ValueError(f"Replay records must be chronological, got k={record.k} after k={self._records[-1].k}")
        self._records.append(record)

    def replace_last_estimate(self, estimate: EkfEstimate) -> None:
        self._records[-1] = replace(self._records[-1], estimate=estimate)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def __getitem__(self, i) -> ReplayRecord:
        return self._records[i]

    @property
    def latest(self) -> Optional[ReplayRecord]:
        return self._records[-1] if self._records else None


@dataclass(frozen=True)
class ReplayResult:
    """
    Counterfactual estimate at the latest buffered step.

    ``soft`` is the alternate pipeline's last soft measurement (the chain seed
    for its next step); ``stale`` is set when the buffer was empty.
    """
    estimate: EkfEstimate
    soft: Optional[SoftMeasurement]
    sensors: frozenset
    stale: bool = False


def re_estimate_without_sensors(
    buffer: ReplayBuffer,
    excluded: Iterable[SensorId],
    ekf: ExtendedKalmanFilter,
    pipeline: PerceptionPipeline,
    current: Optional[EkfEstimate] = None,
    base: Iterable[SensorId] = ALL_SENSORS,
    logger: Optional[logging.Logger] = None,
) -> ReplayResult:
    """
    Re-run the filter over the buffer with pipeline P_{base \\ excluded}.

    Starts from the oldest buffered estimate, re-derives the alternate soft
    measurement chain from that record's stored ``prev_soft``, and replays
    predict/update through every later record. The live filter is never
    touched.

    Parameters
    ----------
    buffer : ReplayBuffer
        Recent records, oldest first.
    excluded : iterable of SensorId
        Sensors removed from ``base``.
    ekf : ExtendedKalmanFilter
        Filter whose predict/update are replayed.
    pipeline : PerceptionPipeline
        Pipeline family used to recompute soft measurements.
    current : EkfEstimate, optional
        Returned unchanged, flagged stale, when the buffer is empty.
    base : iterable of SensorId, optional
        Sensor set before exclusion; defaults to all sensors.
    logger : logging.Logger, optional
        Receives the empty-buffer warning.

    Returns
    -------
    ReplayResult
    """
    sensors = frozenset(base) - frozenset(excluded)
    if len(buffer) == 0:
        emit_warning("Replay buffer is empty; returning the current estimate unchanged", logger)
        return ReplayResult(estimate=current, soft=None, sensors=sensors, stale=True)

    records = list(buffer)
    oldest = records[0]
    estimate = oldest.estimate
    soft = pipeline.soft_measurement(sensors, oldest.raw, oldest.prev_soft)
    for record in records[1:]:
        soft = pipeline.soft_measurement(sensors, record.raw, soft)
        pred = ekf.predict(estimate, record.u_prev)
        estimate, _ = ekf.update(pred, soft)
    return ReplayResult(estimate=estimate, soft=soft, sensors=sensors)
