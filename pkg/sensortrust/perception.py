"""
perception.py

Perception pipelines over sensor subsets. A pipeline fuses raw readings of
the enabled sensors into a soft measurement shaped like the plant state
(C = I), with an availability mask and a diagonal effective noise covariance.
The perception graph records which sensors feed which soft component.
"""
from dataclasses import dataclass
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Tuple

import numpy as np

from sensortrust.plant import PlantParams
from sensortrust.sensors import ALL_SENSORS, RawMeasurementSet, SensorId, SensorNoise

COMPONENT_NAMES = ('position', 'velocity', 'angle', 'angular_velocity')
POSITION, VELOCITY, ANGLE, ANGULAR_VELOCITY = range(4)
N_COMPONENTS = len(COMPONENT_NAMES)

_DEFAULT_EDGES = frozenset({
    (SensorId.ENCODER, POSITION),
    (SensorId.ENCODER, VELOCITY),
    (SensorId.CAMERA, POSITION),
    (SensorId.CAMERA, ANGLE),
    (SensorId.IMU, VELOCITY),
    (SensorId.IMU, ANGULAR_VELOCITY),
})


def _as_subset(sensors: Optional[Iterable]) -> FrozenSet[SensorId]:
    if sensors is None:
        return ALL_SENSORS
    return frozenset(SensorId.parse(sensor) for sensor in sensors)


@dataclass(frozen=True)
class PerceptionGraph:
    """
    Bipartite sensor -> soft-component graph.

    Parameters
    ----------
    edges : frozenset of (SensorId, int)
        Edge (i, j) means sensor i contributes to soft component j.
    """
    edges: FrozenSet[Tuple[SensorId, int]] = _DEFAULT_EDGES

    def __post_init__(self):
        edges = frozenset((SensorId.parse(i), int(j)) for i, j in self.edges)
        for _, j in edges:
            if not 0 <= j < N_COMPONENTS:
                raise ValueError(f"Edge component index must be in 0..{N_COMPONENTS - 1}, got {j}")
        uncovered = [COMPONENT_NAMES[j] for j in range(N_COMPONENTS) if not any(c == j for _, c in edges)]
        if uncovered:
            raise ValueError(f"Every component needs at least one sensor; uncovered: {uncovered}")
        object.__setattr__(self, 'edges', edges)

    def neighbors(self, j: int) -> FrozenSet[SensorId]:
        return neighbors(self, j)

    def components_of(self, sensor: SensorId) -> Tuple[int, ...]:
        sensor = SensorId.parse(sensor)
        return tuple(sorted(j for i, j in self.edges if i == sensor))

    def incidence(self) -> np.ndarray:
        """(n_components, n_sensors) 0/1 matrix."""
        matrix = np.zeros((N_COMPONENTS, len(SensorId)), dtype=int)
        for i, j in self.edges:
            matrix[j, int(i)] = 1
        return matrix

    def to_dict(self) -> Dict[str, Any]:
        return {"edges": [[i.label, j] for i, j in sorted(self.edges)]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'PerceptionGraph':
        return cls(edges=frozenset((SensorId.parse(i), int(j)) for i, j in data["edges"]))


def neighbors(graph: PerceptionGraph, j: int) -> FrozenSet[SensorId]:
    """
    Sensors contributing to soft component ``j``.

    Raises
    ------
    ValueError
        If ``j`` is not a component index.
    """
    if not isinstance(j, (int, np.integer)) or not 0 <= j < N_COMPONENTS:
        raise ValueError(f"Unknown component index {j}; expected 0..{N_COMPONENTS - 1}")
    return frozenset(i for i, c in graph.edges if c == j)


@dataclass(frozen=True)
class SoftMeasurement:
    """
    Output of a perception pipeline.

    Parameters
    ----------
    y : np.ndarray
        4-vector in state layout; NaN on unavailable components.
    available : np.ndarray
        Boolean mask over components.
    R : np.ndarray
        Diagonal 4x4 effective noise covariance; zero on unavailable components.
    weights : tuple
        Per component, the (source name, weight) pairs of the fusion.
    k : int
        Time index.
    """
    y: np.ndarray
    available: np.ndarray
    R: np.ndarray
    weights: Tuple[Tuple[Tuple[str, float], ...], ...] = ((), (), (), ())
    k: int = 0

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.available)

    def variance(self, j: int) -> float:
        return float(self.R[j, j])


@dataclass(frozen=True)
class PipelineModel:
    """Measurement model of pipeline P_S: selected identity rows and nominal R."""
    sensors: FrozenSet[SensorId]
    available: np.ndarray
    C: np.ndarray
    R: np.ndarray


def _fuse(sources: List[Tuple[str, float, float]]) -> Tuple[float, float, Tuple[Tuple[str, float], ...]]:
    """
    Minimum-variance combination of independent scalar sources.

    Zero-variance sources share the weight equally among themselves.
    """
    values = np.array([value for _, value, _ in sources])
    variances = np.array([variance for _, _, variance in sources])
    exact = variances <= 0.0
    if exact.any():
        weights = exact / exact.sum()
        fused_variance = 0.0
    else:
        information = 1.0 / variances
        weights = information / information.sum()
        fused_variance = 1.0 / information.sum()
    fused = float(weights @ values)
    return fused, fused_variance, tuple((name, float(w)) for (name, _, _), w in zip(sources, weights))


def steady_state_variance(q: float, r: Optional[float]) -> float:
    """
    Stationary variance of a dead-reckoned scalar chain.

    The chain accumulates ``q`` per step and is fused each step with an
    independent source of variance ``r``. Without an anchor (``r`` is None)
    the one-step increment ``q`` is returned.
    """
    if r is None:
        return q
    if q <= 0.0 or r <= 0.0:
        return 0.0
    prior = 0.5 * (q + np.sqrt(q * q + 4.0 * q * r))
    return float(prior - q)


class PerceptionPipeline:
    """
    Family of pipelines P_S indexed by the enabled sensor subset S.

    Fallback chains when a direct source is disabled:

    - angle without the camera: previous angle + dt * IMU omega
    - angular velocity without the IMU: (camera theta - previous angle) / dt
    - velocity without the encoder: (position - previous position) / dt,
      fused with the IMU-integrated velocity when the IMU is enabled

    Integration fallbacks read the previous soft measurement, never the filter
    estimate, and propagate variances to first order. Dead-reckoned channels
    also accumulate ``drift`` per step: the IMU sees accelerations, not the
    process noise that enters the state directly.

    Parameters
    ----------
    noise : SensorNoise
        Raw sensor covariances.
    dt : float
        Step size (s).
    graph : PerceptionGraph, optional
        Defaults to the cart-pole graph.
    drift : array-like, optional
        Per-step variance added to integrated components, in state layout.
        Defaults to the diagonal of the default plant process noise.
    """
    def __init__(
        self,
        noise: SensorNoise,
        dt: float,
        graph: Optional[PerceptionGraph] = None,
        drift: Optional[Iterable[float]] = None,
    ):
        if dt <= 0:
            raise ValueError(f"dt must be positive, got {dt}")
        drift = np.diag(PlantParams().Q) if drift is None else np.asarray(list(drift), dtype=float)
        if drift.shape != (N_COMPONENTS,) or not np.all(np.isfinite(drift)) or np.any(drift < 0):
            raise ValueError(f"drift must be {N_COMPONENTS} non-negative variances, got {drift.tolist()}")
        self.noise = noise
        self.dt = dt
        self.graph = graph if graph is not None else PerceptionGraph()
        self.drift = drift

    def _position_sources(self, S, raw) -> List[Tuple[str, float, float]]:
        sources = []
        if SensorId.ENCODER in S:
            sources.append(('encoder.p', raw.encoder[0], self.noise.variance(SensorId.ENCODER, 0)))
        if SensorId.CAMERA in S:
            sources.append(('camera.p', raw.camera[0], self.noise.variance(SensorId.CAMERA, 0)))
        return sources

    def soft_measurement(
        self,
        S: Iterable[SensorId],
        raw: RawMeasurementSet,
        prev_soft: Optional[SoftMeasurement] = None,
    ) -> SoftMeasurement:
        """
        Run pipeline P_S on one set of raw readings.

        Parameters
        ----------
        S : iterable of SensorId
            Enabled sensors.
        raw : RawMeasurementSet
            Raw (possibly attacked) readings.
        prev_soft : SoftMeasurement, optional
            Previous output of the same pipeline chain; integration and
            differencing fallbacks are unavailable without it.

        Returns
        -------
        SoftMeasurement
            Components with no source and no fallback are marked unavailable.
        """
        S = _as_subset(S)
        dt = self.dt
        noise = self.noise

        def previous(j):
            if prev_soft is None or not prev_soft.available[j]:
                return None
            return prev_soft.y[j], prev_soft.R[j, j]

        y = np.full(N_COMPONENTS, np.nan)
        variances = np.zeros(N_COMPONENTS)
        available = np.zeros(N_COMPONENTS, dtype=bool)
        weights: List[Tuple[Tuple[str, float], ...]] = [(), (), (), ()]

        def commit(j, sources):
            if sources:
                y[j], variances[j], weights[j] = _fuse(sources)
                available[j] = True

        commit(POSITION, self._position_sources(S, raw))

        velocity = []
        if SensorId.ENCODER in S:
            velocity.append(('encoder.v', raw.encoder[1], noise.variance(SensorId.ENCODER, 1)))
        if SensorId.IMU in S and previous(VELOCITY) is not None:
            prev_v, prev_var = previous(VELOCITY)
            velocity.append((
                'imu.v_dot_integrated',
                prev_v + dt * raw.imu[0],
                prev_var + dt ** 2 * noise.variance(SensorId.IMU, 0) + self.drift[VELOCITY],
            ))
        if SensorId.ENCODER not in S and available[POSITION] and previous(POSITION) is not None:
            prev_p, prev_var = previous(POSITION)
            velocity.append(('position_difference', (y[POSITION] - prev_p) / dt, (variances[POSITION] + prev_var) / dt ** 2))
        commit(VELOCITY, velocity)

        angle = []
        if SensorId.CAMERA in S:
            angle.append(('camera.theta', raw.camera[1], noise.variance(SensorId.CAMERA, 1)))
        elif SensorId.IMU in S and previous(ANGLE) is not None:
            prev_theta, prev_var = previous(ANGLE)
            angle.append((
                'imu.omega_integrated',
                prev_theta + dt * raw.imu[1],
                prev_var + dt ** 2 * noise.variance(SensorId.IMU, 1) + self.drift[ANGLE],
            ))
        commit(ANGLE, angle)

        angular_velocity = []
        if SensorId.IMU in S:
            angular_velocity.append(('imu.omega', raw.imu[1], noise.variance(SensorId.IMU, 1)))
        elif SensorId.CAMERA in S and previous(ANGLE) is not None:
            prev_theta, prev_var = previous(ANGLE)
            angular_velocity.append((
                'camera.theta_difference',
                (raw.camera[1] - prev_theta) / dt,
                (noise.variance(SensorId.CAMERA, 1) + prev_var) / dt ** 2,
            ))
        commit(ANGULAR_VELOCITY, angular_velocity)

        return SoftMeasurement(
            y=y,
            available=available,
            R=np.diag(variances),
            weights=tuple(weights),
            k=raw.k,
        )

    def structural_availability(self, S: Iterable[SensorId]) -> np.ndarray:
        """Components P_S can produce once its fallback chains are primed."""
        S = _as_subset(S)
        has = {sensor: sensor in S for sensor in SensorId}
        position = has[SensorId.ENCODER] or has[SensorId.CAMERA]
        return np.array([
            position,
            has[SensorId.ENCODER] or has[SensorId.IMU] or position,
            has[SensorId.CAMERA] or has[SensorId.IMU],
            has[SensorId.IMU] or has[SensorId.CAMERA],
        ])

    def pipeline_model(self, S: Iterable[SensorId]) -> PipelineModel:
        """
        Measurement model of P_S.

        ``C`` stacks the identity rows of the structurally available
        components; ``R`` holds direct-source fused variances, the stationary
        variance of an anchored dead-reckoned chain, or the one-step increment
        variance of an unanchored one. An empty ``S`` gives an empty model, so
        the filter only predicts.
        """
        S = _as_subset(S)
        available = self.structural_availability(S)
        noise = self.noise
        dt = self.dt

        def fused(variances):
            variances = [v for v in variances if v is not None]
            if not variances:
                return 0.0
            if min(variances) <= 0:
                return 0.0
            return 1.0 / sum(1.0 / v for v in variances)

        var_p = fused([
            noise.variance(SensorId.ENCODER, 0) if SensorId.ENCODER in S else None,
            noise.variance(SensorId.CAMERA, 0) if SensorId.CAMERA in S else None,
        ])
        if SensorId.ENCODER in S:
            anchor_v = noise.variance(SensorId.ENCODER, 1)
        elif available[POSITION]:
            anchor_v = 2.0 * var_p / dt ** 2
        else:
            anchor_v = None
        if SensorId.IMU in S:
            var_v = steady_state_variance(dt ** 2 * noise.variance(SensorId.IMU, 0) + self.drift[VELOCITY], anchor_v)
        else:
            var_v = anchor_v if anchor_v is not None else 0.0
        if SensorId.CAMERA in S:
            var_theta = noise.variance(SensorId.CAMERA, 1)
        else:
            var_theta = dt ** 2 * noise.variance(SensorId.IMU, 1) + self.drift[ANGLE]
        if SensorId.IMU in S:
            var_omega = noise.variance(SensorId.IMU, 1)
        else:
            var_omega = 2.0 * noise.variance(SensorId.CAMERA, 1) / dt ** 2

        full_R = np.diag([var_p, var_v, var_theta, var_omega])
        rows = np.flatnonzero(available)
        return PipelineModel(
            sensors=S,
            available=available,
            C=np.eye(N_COMPONENTS)[rows],
            R=full_R[np.ix_(rows, rows)],
        )
