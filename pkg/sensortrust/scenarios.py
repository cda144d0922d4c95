"""
scenarios.py

Registry of named attack scenarios. A scenario is a factory returning an
AttackSchedule; factories may take float arguments, which are passed in the
name itself, e.g. ``EncoderAttack(0.5)``.
"""
import re
from typing import Callable, Dict, Optional

import numpy as np

from sensortrust.sensors import AttackSchedule, AttackWindow, SensorId

# Global registry to store scenario factories
_SCENARIO_REGISTRY: Dict[str, Callable[..., AttackSchedule]] = {}

_NAME_PATTERN = re.compile(r"^\s*([A-Za-z][\w-]*)\s*(?:\((.*)\))?\s*$")

ATTACK_ONSET_S = 3.0
ENCODER_BIAS = (0.5, 0.5)
IMU_BIAS = (0.2, 0.9)
CAMERA_BIAS = (0.3, 0.15)


def register_scenario(name: Optional[str] = None):
    """
    Decorator to register an attack-schedule factory under a scenario name.

    Parameters
    ----------
    name : str, optional
        Scenario name. If not provided, the function's name is used.

    Returns
    -------
    Callable
        Decorator that registers the decorated factory.

    Examples
    --------
    >>> @register_scenario("CameraGlitch")
    ... def camera_glitch():
    ...     return AttackSchedule((AttackWindow(SensorId.CAMERA, 2.0, 2.5, (0.1, 0.0)),))
    """
    def decorator(func: Callable[..., AttackSchedule]) -> Callable[..., AttackSchedule]:
        registry_name = name or func.__name__
        _SCENARIO_REGISTRY[registry_name] = func
        func._registry_name = registry_name
        return func
    return decorator


def list_scenarios() -> Dict[str, Callable[..., AttackSchedule]]:
    """Copy of the registry."""
    return _SCENARIO_REGISTRY.copy()


def get_scenario(name: str) -> AttackSchedule:
    """
    Build the schedule registered under ``name``.

    Parameters
    ----------
    name : str
        A registered name, optionally followed by comma-separated float
        arguments in parentheses.

    Returns
    -------
    AttackSchedule

    Raises
    ------
    ValueError
        If the name is malformed, unregistered, or the arguments are rejected.
    """
    match = _NAME_PATTERN.match(name or "")
    if not match:
        raise ValueError(f"Malformed scenario name '{name}'")
    base, arg_text = match.group(1), match.group(2)
    factory = _SCENARIO_REGISTRY.get(base)
    if factory is None:
        raise ValueError(
            f"Unknown scenario '{base}'. Registered scenarios: {', '.join(sorted(_SCENARIO_REGISTRY))}"
        )
    args = []
    if arg_text is not None and arg_text.strip():
        try:
            args = [float(token) for token in arg_text.split(',')]
        except ValueError:
            raise ValueError(f"Scenario arguments must be numbers, got '{arg_text}'")
    try:
        schedule = factory(*args)
    except TypeError as e:
        raise ValueError(f"Invalid arguments for scenario '{base}': {e}")
    return AttackSchedule(windows=schedule.windows, name=name.strip())


@register_scenario("NoAttack")
def no_attack() -> AttackSchedule:
    return AttackSchedule()


@register_scenario("EncoderAttack")
def encoder_attack(duration_s: float = 3.0) -> AttackSchedule:
    """Encoder p and v both shifted by +0.5 for ``duration_s`` seconds from t = 3 s."""
    if duration_s <= 0:
        raise ValueError(f"EncoderAttack duration must be positive, got {duration_s}")
    return AttackSchedule((
        AttackWindow(SensorId.ENCODER, ATTACK_ONSET_S, ATTACK_ONSET_S + duration_s, np.array(ENCODER_BIAS)),
    ))


@register_scenario("Encoder-IMUAttack")
def encoder_imu_attack() -> AttackSchedule:
    """Encoder over [3, 6] s and IMU over [4, 7] s; the attacks overlap for 2 s."""
    return AttackSchedule((
        AttackWindow(SensorId.ENCODER, 3.0, 6.0, np.array(ENCODER_BIAS)),
        AttackWindow(SensorId.IMU, 4.0, 7.0, np.array(IMU_BIAS)),
    ))


@register_scenario("EICAttack")
def eic_attack() -> AttackSchedule:
    """Encoder, then IMU, then camera, back to back."""
    return AttackSchedule((
        AttackWindow(SensorId.ENCODER, 3.0, 4.0, np.array(ENCODER_BIAS)),
        AttackWindow(SensorId.IMU, 4.0, 6.0, np.array(IMU_BIAS)),
        AttackWindow(SensorId.CAMERA, 6.0, 7.0, np.array(CAMERA_BIAS)),
    ))
