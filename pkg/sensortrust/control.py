"""
control.py

Nominal LQR design, the threshold policies that decide probing and trust,
and the robust-filter baselines (weighted-observation-likelihood updates and
prediction-only fallback).
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, FrozenSet, Iterable, Optional, Tuple

import numpy as np
from scipy import linalg

from sensortrust.belief import Belief
from sensortrust.estimation import EkfEstimate, ExtendedKalmanFilter, Innovation
from sensortrust.perception import SoftMeasurement
from sensortrust.plant import CartPole, PlantParams, saturate
from sensortrust.sensors import SensorId
from sensortrust.utilities import ConvergenceError

logger = logging.getLogger(__name__)

DEFAULT_STATE_WEIGHTS = (1.0, 1.0, 20.0, 2.0)
DEFAULT_INPUT_WEIGHT = 1.0
RICCATI_TOL = 1e-10
RICCATI_MAX_ITER = 200_000


@dataclass(frozen=True)
class LqrController:
    """
    State feedback ``u = sat(-K (x - x_ref))`` around the upright equilibrium.

    Parameters
    ----------
    K : np.ndarray
        Gain, shape (4,).
    u_max : float
        Saturation bound.
    x_ref : np.ndarray, optional
        Regulation point; the origin when omitted.
    P : np.ndarray, optional
        Riccati solution the gain was computed from.
    """
    K: np.ndarray
    u_max: float = 10.0
    x_ref: np.ndarray = field(default_factory=lambda: np.zeros(4))
    P: Optional[np.ndarray] = None

    def __post_init__(self):
        K = np.array(self.K, dtype=float).reshape(-1)
        if K.shape != (4,) or not np.all(np.isfinite(K)):
            raise ValueError(f"LQR gain must be a finite 4-vector, got {K.tolist()}")
        if not np.isfinite(self.u_max) or self.u_max <= 0:
            raise ValueError(f"u_max must be finite and positive, got {self.u_max}")
        object.__setattr__(self, 'K', K)
        object.__setattr__(self, 'x_ref', np.array(self.x_ref, dtype=float).reshape(-1))

    def control(self, x) -> float:
        return saturate(-float(self.K @ (np.asarray(x, dtype=float) - self.x_ref)), self.u_max)

    def closed_loop(self, F: np.ndarray, G: np.ndarray) -> np.ndarray:
        """F - G K for the linearization (F, G)."""
        return F - np.asarray(G, dtype=float).reshape(-1, 1) @ self.K.reshape(1, -1)

    def spectral_radius(self, F: np.ndarray, G: np.ndarray) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.closed_loop(F, G)))))

    def to_dict(self) -> Dict[str, Any]:
        return {"K": self.K.tolist(), "u_max": self.u_max, "x_ref": self.x_ref.tolist()}


def solve_riccati(
    F: np.ndarray,
    G: np.ndarray,
    M_x: np.ndarray,
    M_u: np.ndarray,
    tol: float = RICCATI_TOL,
    max_iter: int = RICCATI_MAX_ITER,
) -> np.ndarray:
    """
    Discrete algebraic Riccati equation by fixed-point iteration.

    ``P <- M_x + F^T P F - F^T P G (M_u + G^T P G)^-1 G^T P F`` from
    ``P = M_x`` until the relative change drops below ``tol``.

    Raises
    ------
    ConvergenceError
        If the iterate becomes non-finite or ``max_iter`` is reached.
    """
    F = np.asarray(F, dtype=float)
    G = np.asarray(G, dtype=float).reshape(F.shape[0], -1)
    M_x = np.asarray(M_x, dtype=float)
    M_u = np.atleast_2d(np.asarray(M_u, dtype=float))
    P = M_x.copy()
    for iteration in range(1, max_iter + 1):
        GtP = G.T @ P
        gain = linalg.solve(M_u + GtP @ G, GtP @ F, assume_a='pos')
        P_next = M_x + F.T @ P @ F - F.T @ P @ G @ gain
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            raise ConvergenceError(f"Riccati iteration diverged after {iteration} iterations")
        change = np.linalg.norm(P_next - P)
        P = P_next
        if change <= tol * max(1.0, np.linalg.norm(P)):
            logger.debug(f"Riccati iteration converged in {iteration} iterations")
            return P
    raise ConvergenceError(f"Riccati iteration did not converge within {max_iter} iterations")


def lqr_design(
    plant_params: Optional[PlantParams] = None,
    M_x=None,
    M_u=DEFAULT_INPUT_WEIGHT,
    tol: float = RICCATI_TOL,
    max_iter: int = RICCATI_MAX_ITER,
) -> LqrController:
    """
    Discrete LQR at the upright equilibrium of the cart-pole.

    Parameters
    ----------
    plant_params : PlantParams, optional
        Defaults to ``PlantParams()``.
    M_x : array-like, optional
        State weight; ``diag(1, 1, 20, 2)`` when omitted.
    M_u : float
        Input weight.

    Returns
    -------
    LqrController

    Raises
    ------
    ConvergenceError
        If the Riccati iteration does not converge or the resulting gain does
        not stabilize the linearization.
    """
    plant = CartPole(plant_params or PlantParams())
    M_x = np.diag(DEFAULT_STATE_WEIGHTS) if M_x is None else np.asarray(M_x, dtype=float)
    M_u = np.atleast_2d(np.asarray(M_u, dtype=float))
    F, G = plant.linearize(np.zeros(4), 0.0)
    P = solve_riccati(F, G, M_x, M_u, tol=tol, max_iter=max_iter)
    K = linalg.solve(M_u + G.T @ P @ G, G.T @ P @ F)
    controller = LqrController(K=K.reshape(-1), u_max=plant.params.u_max, P=P)
    rho = controller.spectral_radius(F, G)
    if rho >= 1.0:
        raise ConvergenceError(f"LQR gain does not stabilize the upright linearization (spectral radius {rho:.6f})")
    return controller


def control_cost(states: np.ndarray, inputs: np.ndarray, dt: float, M_x=None, M_u=DEFAULT_INPUT_WEIGHT) -> float:
    """Undiscounted sum of ``(x^T M_x x + M_u u^2) dt``."""
    M_x = np.diag(DEFAULT_STATE_WEIGHTS) if M_x is None else np.asarray(M_x, dtype=float)
    states = np.atleast_2d(np.asarray(states, dtype=float))
    inputs = np.asarray(inputs, dtype=float).reshape(-1)
    stage = np.einsum('ki,ij,kj->k', states, M_x, states) + float(M_u) * inputs ** 2
    return float(stage.sum() * dt)


@dataclass(frozen=True)
class ThresholdPolicy:
    """
    Belief thresholds for probing and trust decisions.

    A sensor is selected for probing while its belief lies strictly inside
    ``(window_low, window_high)``, disabled once it reaches ``disable`` and
    re-enabled once it falls to ``enable``.
    """
    window_low: float
    window_high: float
    disable: float = 0.9
    enable: float = 0.5

    def __post_init__(self):
        values = (self.window_low, self.window_high, self.disable, self.enable)
        if not all(np.isfinite(v) for v in values):
            raise ValueError(f"Thresholds must be finite, got {values}")
        if not 0.0 < self.window_low < self.window_high <= self.disable <= 1.0:
            raise ValueError(
                "Thresholds must satisfy 0 < window_low < window_high <= disable <= 1, "
                f"got window_low={self.window_low}, window_high={self.window_high}, disable={self.disable}"
            )
        if not 0.0 <= self.enable < self.disable:
            raise ValueError(f"enable must lie in [0, disable), got enable={self.enable}, disable={self.disable}")

    def in_window(self, pi: float) -> bool:
        return self.window_low < pi < self.window_high

    def with_window(self, window_low: float, window_high: float) -> 'ThresholdPolicy':
        return ThresholdPolicy(window_low, window_high, self.disable, self.enable)

    def to_dict(self) -> Dict[str, float]:
        return {
            "window_low": self.window_low,
            "window_high": self.window_high,
            "disable": self.disable,
            "enable": self.enable,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ThresholdPolicy':
        return cls(**{key: float(value) for key, value in data.items()})


LASE_AD_S = ThresholdPolicy(window_low=0.5, window_high=0.59)
LASE_AD_B = ThresholdPolicy(window_low=0.499, window_high=0.5)


def decide_probing(belief: Belief, policy: ThresholdPolicy) -> Tuple[bool, Optional[SensorId]]:
    """
    Pick at most one sensor for probing.

    Among sensors whose belief lies strictly inside the window, the largest
    belief wins; equal beliefs go to the lower SensorId.
    """
    candidates = [sensor for sensor in SensorId if policy.in_window(belief[sensor])]
    if not candidates:
        return False, None
    chosen = max(candidates, key=lambda sensor: (belief[sensor], -int(sensor)))
    return True, chosen


def decide_trustable(belief: Belief, policy: ThresholdPolicy, current: Iterable[SensorId]) -> FrozenSet[SensorId]:
    """
    Next trusted sensor set with hysteresis.

    Enabled sensors are disabled at ``pi >= disable``; disabled sensors come
    back at ``pi <= enable``. The set is never empty: if every sensor would be
    disabled the one with the lowest belief stays.
    """
    current = frozenset(current)
    trusted = set()
    for sensor in SensorId:
        pi = belief[sensor]
        if sensor in current:
            if pi < policy.disable:
                trusted.add(sensor)
        elif pi <= policy.enable:
            trusted.add(sensor)
    if not trusted:
        trusted.add(min(SensorId, key=lambda sensor: (belief[sensor], int(sensor))))
    return frozenset(trusted)


class WolfVariant(str, Enum):
    """Weighting functions for weighted-observation-likelihood updates."""
    IMQ = "imq"
    MD = "md"
    TMD = "tmd"


def wolf_weight(innov: Innovation, variant: WolfVariant, c: float) -> float:
    """
    Observation weight in [0, 1].

    - IMQ: ``(1 + ||r||^2 / c^2) ** -0.5`` with the Euclidean norm
    - MD: ``min(1, c / d)`` with ``d`` the Mahalanobis norm
    - TMD: 1 if ``d <= c`` else 0

    Raises
    ------
    ValueError
        If ``c`` is not strictly positive.
    """
    if not np.isfinite(c) or c <= 0:
        raise ValueError(f"WoLF hyperparameter c must be positive, got {c}")
    variant = WolfVariant(variant)
    if innov.is_empty:
        return 1.0
    if variant is WolfVariant.IMQ:
        return float((1.0 + float(innov.r @ innov.r) / c ** 2) ** -0.5)
    d = innov.mahalanobis
    if variant is WolfVariant.MD:
        return 1.0 if d <= c else c / d
    return 1.0 if d <= c else 0.0


def wolf_update(
    ekf: ExtendedKalmanFilter,
    pred: EkfEstimate,
    soft: SoftMeasurement,
    variant: WolfVariant,
    c: float,
) -> Tuple[EkfEstimate, float]:
    """
    Measurement update with the noise covariance scaled by ``1 / w^2``.

    Returns
    -------
    tuple
        (posterior, weight). A zero weight skips the update.
    """
    innov = ekf.innovation(pred, soft)
    w = wolf_weight(innov, variant, c)
    if w <= 0.0:
        logger.debug(f"WoLF {WolfVariant(variant).value} update skipped at k={pred.k} (weight 0)")
        return pred, 0.0
    post, _ = ekf.update(pred, soft, noise_scale=1.0 / w ** 2)
    return post, w


def kalman_pred_step(
    ekf: ExtendedKalmanFilter,
    pred: EkfEstimate,
    soft: SoftMeasurement,
    alert_any: bool,
    oracle_attack_active: bool,
    engaged: bool = False,
    attack_seen: bool = False,
) -> Tuple[EkfEstimate, bool, bool]:
    """
    Prediction-only fallback.

    Any alert engages the fallback and the prediction is returned as the
    estimate while engaged. Release happens on a step where the oracle
    reports no attack, and either an attack was seen during the engagement
    (the oracle signalled its end) or the alerts have cleared (a false alarm).

    Returns
    -------
    tuple
        (estimate, engaged after this step, attack seen during the engagement)
    """
    engaged = engaged or bool(alert_any)
    if engaged and oracle_attack_active:
        attack_seen = True
    if engaged and not oracle_attack_active and (attack_seen or not alert_any):
        engaged, attack_seen = False, False
    if engaged:
        return pred, True, attack_seen
    post, _ = ekf.update(pred, soft)
    return post, False, False


class KalmanPredictionFallback:
    """Stateful wrapper around :func:`kalman_pred_step`."""

    def __init__(self, ekf: ExtendedKalmanFilter):
        self.ekf = ekf
        self.engaged = False
        self.attack_seen = False
        self.skipped_updates = 0

    def step(self, pred: EkfEstimate, soft: SoftMeasurement, alert_any: bool, oracle_attack_active: bool) -> EkfEstimate:
        estimate, self.engaged, self.attack_seen = kalman_pred_step(
            self.ekf, pred, soft, alert_any, oracle_attack_active, self.engaged, self.attack_seen,
        )
        if self.engaged:
            self.skipped_updates += 1
        return estimate
