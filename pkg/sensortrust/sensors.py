"""
sensors.py

Raw sensor models (wheel encoder, external camera, IMU) with Gaussian noise,
additive bias attacks on sensor outputs, and the on/off Markov attacker used
for threshold tuning.
"""
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Any, Dict, FrozenSet, Iterable, Optional, Tuple

import numpy as np

from sensortrust.plant import CartPole, StateLike, as_state_vector

# Time tolerance used when comparing k * dt against window edges.
_TIME_TOL = 1e-9


class SensorId(IntEnum):
    """The three sensors; iteration order is Encoder < Camera < Imu."""
    ENCODER = 0
    CAMERA = 1
    IMU = 2

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def parse(cls, value) -> 'SensorId':
        """
        Resolve a sensor from an int, a SensorId or a case-insensitive name.

        Raises
        ------
        ValueError
            If the value names no sensor.
        """
        if isinstance(value, SensorId):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        key = str(value).strip().lower()
        for sensor, label in _LABELS.items():
            if key in (label, sensor.name.lower()):
                return sensor
        raise ValueError(f"Unknown sensor '{value}'. Use one of: {', '.join(_LABELS.values())}")


_LABELS = {SensorId.ENCODER: 'encoder', SensorId.CAMERA: 'camera', SensorId.IMU: 'imu'}

ALL_SENSORS: FrozenSet[SensorId] = frozenset(SensorId)

# Physical quantity behind each raw channel.
SENSOR_CHANNELS = {
    SensorId.ENCODER: ('p', 'v'),
    SensorId.CAMERA: ('p', 'theta'),
    SensorId.IMU: ('v_dot', 'omega'),
}


def _as_reading(values, name: str) -> np.ndarray:
    reading = np.array(values, dtype=float).reshape(-1)
    if reading.shape != (2,):
        raise ValueError(f"{name} reading must have 2 components, got shape {reading.shape}")
    if not np.all(np.isfinite(reading)):
        raise ValueError(f"{name} reading must be finite, got {reading.tolist()}")
    return reading


@dataclass(frozen=True)
class RawMeasurementSet:
    """
    Raw observations of all three sensors at time index ``k``.

    Parameters
    ----------
    k : int
        Time index.
    encoder : np.ndarray
        (p, v).
    camera : np.ndarray
        (p, theta).
    imu : np.ndarray
        (v_dot, omega).
    """
    k: int
    encoder: np.ndarray
    camera: np.ndarray
    imu: np.ndarray

    def __post_init__(self):
        for sensor in SensorId:
            object.__setattr__(self, sensor.label, _as_reading(getattr(self, sensor.label), sensor.label))

    def reading(self, sensor: SensorId) -> np.ndarray:
        return getattr(self, SensorId.parse(sensor).label)

    def with_offsets(self, offsets: Dict[SensorId, np.ndarray]) -> 'RawMeasurementSet':
        """Return a copy with each sensor's reading shifted by its offset."""
        changes = {
            SensorId.parse(sensor).label: self.reading(sensor) + np.asarray(offset, dtype=float)
            for sensor, offset in offsets.items()
        }
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "k": self.k,
            "encoder": self.encoder.tolist(),
            "camera": self.camera.tolist(),
            "imu": self.imu.tolist(),
        }


@dataclass(frozen=True)
class SensorNoise:
    """
    Per-sensor 2x2 measurement-noise covariances R_i.

    Defaults make the camera position noisier than the encoder position.
    """
    encoder: np.ndarray = field(default_factory=lambda: np.diag([1e-4, 1e-4]))
    camera: np.ndarray = field(default_factory=lambda: np.diag([4e-4, 1e-4]))
    imu: np.ndarray = field(default_factory=lambda: np.diag([4e-4, 1e-4]))

    def __post_init__(self):
        for sensor in SensorId:
            R = np.array(getattr(self, sensor.label), dtype=float)
            if R.shape != (2, 2):
                raise ValueError(f"{sensor.label} noise covariance must be 2x2, got shape {R.shape}")
            if not np.allclose(R, R.T, atol=1e-15):
                raise ValueError(f"{sensor.label} noise covariance must be symmetric")
            if np.linalg.eigvalsh(R).min() < -1e-15:
                raise ValueError(f"{sensor.label} noise covariance must be positive semi-definite")
            object.__setattr__(self, sensor.label, R)

    def R(self, sensor: SensorId) -> np.ndarray:
        return getattr(self, SensorId.parse(sensor).label)

    def variance(self, sensor: SensorId, channel: int) -> float:
        return float(self.R(sensor)[channel, channel])

    @classmethod
    def zero(cls) -> 'SensorNoise':
        return cls(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)))

    def scaled(self, factor: float) -> 'SensorNoise':
        return SensorNoise(self.encoder * factor, self.camera * factor, self.imu * factor)

    def to_dict(self) -> Dict[str, Any]:
        return {sensor.label: self.R(sensor).tolist() for sensor in SensorId}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SensorNoise':
        return cls(**{key: np.array(value, dtype=float) for key, value in data.items()})


def _sqrt_psd(R: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(R)
    return V * np.sqrt(np.clip(w, 0.0, None))


class SensorSuite:
    """
    Measurement models h_i plus Gaussian noise.

    Parameters
    ----------
    plant : CartPole
        Plant used to evaluate the IMU acceleration channel.
    noise : SensorNoise, optional
        Noise covariances; defaults to ``SensorNoise()``.
    """
    def __init__(self, plant: CartPole, noise: Optional[SensorNoise] = None):
        self.plant = plant
        self.noise = noise if noise is not None else SensorNoise()
        self._sqrt = {sensor: _sqrt_psd(self.noise.R(sensor)) for sensor in SensorId}

    def noiseless(self, state: StateLike, u_applied: float) -> Dict[SensorId, np.ndarray]:
        x = as_state_vector(state)
        v_dot = self.plant.continuous_dynamics(x, u_applied)[1]
        return {
            SensorId.ENCODER: np.array([x[0], x[1]]),
            SensorId.CAMERA: np.array([x[0], x[2]]),
            SensorId.IMU: np.array([v_dot, x[3]]),
        }

    def measure_all(self, state: StateLike, u_applied: float, rng: np.random.Generator, k: int = 0) -> RawMeasurementSet:
        """
        Sample every sensor at ``state``.

        The IMU acceleration channel is evaluated with the true applied force,
        which the attacker cannot touch. Two standard normals are drawn per
        sensor even when its covariance is zero, so the stream position never
        depends on the noise configuration.

        Parameters
        ----------
        state : PlantState or array-like
            True plant state.
        u_applied : float
            Force applied over the last step.
        rng : np.random.Generator
            Sensor noise stream.
        k : int, optional
            Time index stamped on the result.

        Returns
        -------
        RawMeasurementSet
        """
        clean = self.noiseless(state, u_applied)
        readings = {
            sensor.label: clean[sensor] + self._sqrt[sensor] @ rng.standard_normal(2)
            for sensor in SensorId
        }
        return RawMeasurementSet(k=k, **readings)


@dataclass(frozen=True)
class AttackWindow:
    """
    A bias injected into one sensor over ``[start_s, end_s)``.

    Parameters
    ----------
    sensor : SensorId
        Attacked sensor.
    start_s, end_s : float
        Window bounds in seconds.
    bias : np.ndarray
        Additive 2-vector on the sensor's raw channels.
    """
    sensor: SensorId
    start_s: float
    end_s: float
    bias: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'sensor', SensorId.parse(self.sensor))
        if not (np.isfinite(self.start_s) and np.isfinite(self.end_s)) or self.start_s >= self.end_s:
            raise ValueError(
                f"Attack window must satisfy start < end, got [{self.start_s}, {self.end_s}]"
            )
        object.__setattr__(self, 'bias', _as_reading(self.bias, f"{self.sensor.label} bias"))

    def is_active(self, t: float) -> bool:
        return self.start_s - _TIME_TOL <= t < self.end_s - _TIME_TOL

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sensor": self.sensor.label,
            "start_s": self.start_s,
            "end_s": self.end_s,
            "bias": self.bias.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'AttackWindow':
        return cls(
            sensor=SensorId.parse(data["sensor"]),
            start_s=float(data["start_s"]),
            end_s=float(data["end_s"]),
            bias=np.array(data["bias"], dtype=float),
        )


@dataclass(frozen=True)
class AttackSchedule:
    """
    Scripted attack: a collection of windows, possibly overlapping across sensors.
    """
    windows: Tuple[AttackWindow, ...] = ()
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, 'windows', tuple(self.windows))

    @property
    def is_empty(self) -> bool:
        return not self.windows

    def active_windows(self, t: float) -> Tuple[AttackWindow, ...]:
        return tuple(window for window in self.windows if window.is_active(t))

    def attacked_sensors(self, t: float) -> FrozenSet[SensorId]:
        return frozenset(window.sensor for window in self.active_windows(t))

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "windows": [window.to_dict() for window in self.windows]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'AttackSchedule':
        return cls(
            windows=tuple(AttackWindow.from_dict(window) for window in data.get("windows", [])),
            name=data.get("name", "custom"),
        )


def attack_indicator(sensors: Iterable[SensorId]) -> np.ndarray:
    """0/1 vector over SensorId order."""
    z = np.zeros(len(SensorId), dtype=int)
    for sensor in sensors:
        z[int(sensor)] = 1
    return z


def apply_attack(raw: RawMeasurementSet, schedule: AttackSchedule, k: int, dt: float) -> Tuple[RawMeasurementSet, np.ndarray]:
    """
    Add every active window's bias to its sensor.

    Parameters
    ----------
    raw : RawMeasurementSet
        Pre-attack readings.
    schedule : AttackSchedule
        Scripted attack.
    k : int
        Time index; the window test uses ``t = k * dt``.
    dt : float
        Step size (s).

    Returns
    -------
    tuple
        (attacked readings, z_true) with z_true the 0/1 attack indicator per sensor.
    """
    active = schedule.active_windows(k * dt)
    offsets: Dict[SensorId, np.ndarray] = {}
    for window in active:
        offsets[window.sensor] = offsets.get(window.sensor, np.zeros(2)) + window.bias
    attacked = raw.with_offsets(offsets) if offsets else raw
    return attacked, attack_indicator(offsets)


def _default_attacker_biases() -> Dict[SensorId, np.ndarray]:
    return {
        SensorId.ENCODER: np.array([0.5, 0.5]),
        SensorId.CAMERA: np.array([0.3, 0.15]),
        SensorId.IMU: np.array([0.2, 0.9]),
    }


@dataclass(frozen=True)
class StochasticAttacker:
    """
    Independent two-state (off/on) Markov attacker per sensor.

    Parameters
    ----------
    p_on : float
        P(off -> on) per step.
    p_stay : float
        P(on -> on) per step.
    biases : dict
        Fixed bias emitted by each sensor's attack when on.
    on : tuple of bool
        Current on/off state per sensor.
    """
    p_on: float = 0.01
    p_stay: float = 0.99
    biases: Dict[SensorId, np.ndarray] = field(default_factory=_default_attacker_biases)
    on: Tuple[bool, bool, bool] = (False, False, False)

    def __post_init__(self):
        for name in ('p_on', 'p_stay'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"StochasticAttacker.{name} must be a probability, got {value}")
        biases = {SensorId.parse(s): _as_reading(b, "attacker bias") for s, b in self.biases.items()}
        object.__setattr__(self, 'biases', biases)
        object.__setattr__(self, 'on', tuple(bool(flag) for flag in self.on))
        if len(self.on) != len(SensorId):
            raise ValueError("StochasticAttacker.on must have one flag per sensor")

    @property
    def stationary_on_probability(self) -> float:
        """Stationary on-probability p_on / (p_on + 1 - p_stay)."""
        denom = self.p_on + 1.0 - self.p_stay
        return self.p_on / denom if denom > 0 else float(any(self.on))

    def active_biases(self) -> Dict[SensorId, np.ndarray]:
        return {
            sensor: self.biases[sensor]
            for sensor in SensorId
            if self.on[int(sensor)] and sensor in self.biases
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "p_on": self.p_on,
            "p_stay": self.p_stay,
            "biases": {sensor.label: bias.tolist() for sensor, bias in self.biases.items()},
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'StochasticAttacker':
        kwargs = {key: data[key] for key in ('p_on', 'p_stay') if key in data}
        if "biases" in data:
            kwargs["biases"] = {SensorId.parse(s): np.array(b, dtype=float) for s, b in data["biases"].items()}
        return cls(**kwargs)


def attacker_step(attacker: StochasticAttacker, rng: np.random.Generator) -> Tuple[StochasticAttacker, Dict[SensorId, np.ndarray]]:
    """
    Advance every sensor's on/off chain by one step.

    One uniform is drawn per sensor per call.

    Returns
    -------
    tuple
        (updated attacker, biases of the sensors that are now on)
    """
    draws = rng.random(len(SensorId))
    on = tuple(
        bool(draw < (attacker.p_stay if was_on else attacker.p_on))
        for was_on, draw in zip(attacker.on, draws)
    )
    updated = replace(attacker, on=on)
    return updated, updated.active_biases()
