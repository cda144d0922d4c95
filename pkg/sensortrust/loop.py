"""
loop.py

Per-run estimator/defense loops. Every method consumes one set of raw
readings per step and returns the saturated force to apply; methods are
registered in :class:`~sensortrust.utilities.MethodFactory` under their
selector strings.
"""
import logging
from dataclasses import dataclass, field
from typing import FrozenSet, Optional, Tuple

import numpy as np

from sensortrust.belief import DEFAULT_PRIOR, Belief, BnModel, alert_posterior, probing_posterior
from sensortrust.control import (
    LASE_AD_B,
    LASE_AD_S,
    KalmanPredictionFallback,
    LqrController,
    ThresholdPolicy,
    WolfVariant,
    decide_probing,
    decide_trustable,
    lqr_design,
    wolf_update,
)
from sensortrust.detection import DetectorCalibration
from sensortrust.estimation import (
    DEFAULT_REPLAY_LENGTH,
    EkfEstimate,
    ExtendedKalmanFilter,
    ReplayBuffer,
    ReplayRecord,
    re_estimate_without_sensors,
)
from sensortrust.perception import N_COMPONENTS, PerceptionGraph, PerceptionPipeline, SoftMeasurement
from sensortrust.plant import CartPole, PlantParams, saturate
from sensortrust.probing import Hypothesis, SafeSet, innovation_covariance, solve_probing
from sensortrust.sensors import ALL_SENSORS, RawMeasurementSet, SensorId, SensorNoise
from sensortrust.utilities import MethodFactory

logger = logging.getLogger(__name__)

DEFAULT_WOLF_C = {
    WolfVariant.IMQ: 0.1,
    WolfVariant.MD: 3.0,
    WolfVariant.TMD: 3.0,
}


@dataclass
class LoopContext:
    """
    Components shared by every method of one run.

    Parameters
    ----------
    plant : CartPole
        Filter model and probing model.
    pipeline : PerceptionPipeline
    ekf : ExtendedKalmanFilter
    controller : LqrController
    calibration : DetectorCalibration
        Detector thresholds and alert-model parameters.
    safe : SafeSet
    graph : PerceptionGraph
    replay_length : int
        Replay buffer capacity.
    """
    plant: CartPole
    pipeline: PerceptionPipeline
    ekf: ExtendedKalmanFilter
    controller: LqrController
    calibration: DetectorCalibration
    safe: SafeSet = field(default_factory=SafeSet)
    graph: PerceptionGraph = field(default_factory=PerceptionGraph)
    replay_length: int = DEFAULT_REPLAY_LENGTH

    @classmethod
    def build(
        cls,
        calibration: DetectorCalibration,
        plant_params: Optional[PlantParams] = None,
        noise: Optional[SensorNoise] = None,
        controller: Optional[LqrController] = None,
        safe: Optional[SafeSet] = None,
        replay_length: int = DEFAULT_REPLAY_LENGTH,
    ) -> 'LoopContext':
        plant = CartPole(plant_params or PlantParams())
        noise = noise if noise is not None else SensorNoise()
        return cls(
            plant=plant,
            pipeline=PerceptionPipeline(noise, plant.dt, drift=np.diag(plant.params.Q)),
            ekf=ExtendedKalmanFilter(plant),
            controller=controller if controller is not None else lqr_design(plant.params),
            calibration=calibration,
            safe=safe if safe is not None else SafeSet(),
            replay_length=replay_length,
        )


@dataclass(frozen=True)
class StepOutput:
    """What one loop step decided and estimated."""
    u: float
    estimate: EkfEstimate
    soft: SoftMeasurement
    alerts: np.ndarray
    belief: Belief
    trusted: FrozenSet[SensorId]
    probing: bool = False
    probing_sensor: Optional[SensorId] = None


class DefenseMethod:
    """
    Base loop: EKF prediction, CUSUM monitoring and passive belief tracking.

    The detector watches the all-sensor soft measurement against the live
    prediction, so alerts reflect the sensors themselves rather than the
    pipeline currently in use. Subclasses implement :meth:`_advance`.

    Parameters
    ----------
    context : LoopContext
    initial : EkfEstimate
        Prior at the first step; the first step updates it without predicting.
    prior : float, optional
        Initial attack probability of every sensor.
    logger : logging.Logger, optional
        Receives recoverable-condition warnings.
    """
    method_name = "base"

    def __init__(self, context: LoopContext, initial: EkfEstimate, prior: float = DEFAULT_PRIOR, logger: Optional[logging.Logger] = None):
        self.context = context
        self.logger = logger
        self.estimate = initial
        self.u_prev: Optional[float] = None
        self.detector = context.calibration.detector()
        self.bn = BnModel(context.graph, context.calibration.characterization())
        self.belief = Belief.uniform(prior)
        self.alerts_prev = np.zeros(N_COMPONENTS, dtype=int)
        self.monitor_soft: Optional[SoftMeasurement] = None
        self.trusted: FrozenSet[SensorId] = ALL_SENSORS
        self.last_normalized = np.full(N_COMPONENTS, np.nan)

    def _predict(self) -> EkfEstimate:
        if self.u_prev is None:
            return self.estimate
        return self.context.ekf.predict(self.estimate, self.u_prev)

    def step(self, raw: RawMeasurementSet, attack_active: bool = False) -> StepOutput:
        """
        Advance by one step on the readings ``raw``.

        Parameters
        ----------
        raw : RawMeasurementSet
            Possibly attacked readings at this step.
        attack_active : bool, optional
            Ground-truth attack flag, read only by oracle-driven baselines.

        Returns
        -------
        StepOutput

        Raises
        ------
        EstimatorFault
            If the filter covariance degenerates.
        """
        ctx = self.context
        pred = self._predict()
        monitor_soft = ctx.pipeline.soft_measurement(ALL_SENSORS, raw, self.monitor_soft)
        self.last_normalized = ctx.ekf.innovation(pred, monitor_soft).normalized()
        alerts = self.detector.update_normalized(self.last_normalized)
        self.belief = alert_posterior(self.belief, self.bn, alerts, self.alerts_prev, observed=monitor_soft.available)

        output = self._advance(raw, pred, monitor_soft, alerts, attack_active)

        self.monitor_soft = monitor_soft
        self.alerts_prev = alerts
        self.estimate = output.estimate
        self.u_prev = output.u
        return output

    def _advance(self, raw, pred, monitor_soft, alerts, attack_active) -> StepOutput:
        raise NotImplementedError

    def _output(self, u, estimate, soft, alerts, probing=False, probed=None) -> StepOutput:
        return StepOutput(
            u=saturate(u, self.context.plant.params.u_max),
            estimate=estimate,
            soft=soft,
            alerts=alerts,
            belief=self.belief,
            trusted=self.trusted,
            probing=probing,
            probing_sensor=probed,
        )


@MethodFactory.register("normal")
class NormalEkf(DefenseMethod):
    """All sensors, plain EKF, LQR on the estimate."""

    def _advance(self, raw, pred, monitor_soft, alerts, attack_active):
        post, _ = self.context.ekf.update(pred, monitor_soft)
        return self._output(self.context.controller.control(post.x), post, monitor_soft, alerts)


class WolfMethod(DefenseMethod):
    """Weighted-observation-likelihood EKF on all sensors."""
    variant = WolfVariant.IMQ

    def __init__(self, context, initial, c: Optional[float] = None, prior=DEFAULT_PRIOR, logger=None):
        super().__init__(context, initial, prior=prior, logger=logger)
        self.c = DEFAULT_WOLF_C[self.variant] if c is None else float(c)
        if not np.isfinite(self.c) or self.c <= 0:
            raise ValueError(f"WoLF hyperparameter c must be positive, got {self.c}")
        self.last_weight = 1.0

    def _advance(self, raw, pred, monitor_soft, alerts, attack_active):
        post, self.last_weight = wolf_update(self.context.ekf, pred, monitor_soft, self.variant, self.c)
        return self._output(self.context.controller.control(post.x), post, monitor_soft, alerts)


@MethodFactory.register("wolf-imq")
class WolfImq(WolfMethod):
    variant = WolfVariant.IMQ


@MethodFactory.register("wolf-md")
class WolfMd(WolfMethod):
    variant = WolfVariant.MD


@MethodFactory.register("wolf-tmd")
class WolfTmd(WolfMethod):
    variant = WolfVariant.TMD


@MethodFactory.register("kalmanpred")
class KalmanPred(DefenseMethod):
    """Prediction only from any alert until the oracle end, or until a benign alert clears."""

    def __init__(self, context, initial, prior=DEFAULT_PRIOR, logger=None):
        super().__init__(context, initial, prior=prior, logger=logger)
        self.fallback = KalmanPredictionFallback(context.ekf)

    def _advance(self, raw, pred, monitor_soft, alerts, attack_active):
        estimate = self.fallback.step(pred, monitor_soft, bool(alerts.any()), attack_active)
        return self._output(self.context.controller.control(estimate.x), estimate, monitor_soft, alerts)


@dataclass(frozen=True)
class PendingProbing:
    """
    Innovation models recorded when a probing input was applied.

    The probing step is resolved at the next step on the soft measurement of the
    ``sensors_h1`` pipeline, chained from ``soft_h1``.
    """
    sensor: SensorId
    sensors_h1: FrozenSet[SensorId]
    soft_h1: Optional[SoftMeasurement]
    indices: np.ndarray
    mean0: np.ndarray
    cov0: np.ndarray
    mean1: np.ndarray
    cov1: np.ndarray


class LaseAd(DefenseMethod):
    """
    Belief-driven sensor disabling with replay re-estimation and probing.

    Per step: passive belief update from alerts, the pending probing update,
    the trust decision, re-estimation over the replay buffer when the trusted
    set changes (a plain update otherwise), then either the nominal LQR input
    or, when a belief sits inside the probing window, the safe input that
    best separates the two pipeline hypotheses.

    Parameters
    ----------
    policy : ThresholdPolicy, optional
        Defaults to the variant's preset window.
    """
    default_policy = LASE_AD_S

    def __init__(self, context, initial, policy: Optional[ThresholdPolicy] = None, prior=DEFAULT_PRIOR, logger=None):
        super().__init__(context, initial, prior=prior, logger=logger)
        self.policy = policy if policy is not None else self.default_policy
        self.buffer = ReplayBuffer(context.replay_length)
        self.prev_soft: Optional[SoftMeasurement] = None
        self.pending: Optional[PendingProbing] = None

    def _resolve_probing(self, raw: RawMeasurementSet) -> None:
        pending, self.pending = self.pending, None
        soft = self.context.pipeline.soft_measurement(pending.sensors_h1, raw, pending.soft_h1)
        keep = soft.available[pending.indices]
        idx = pending.indices[keep]
        sel = np.flatnonzero(keep)
        self.belief = probing_posterior(
            self.belief,
            pending.sensor,
            soft.y[idx],
            (pending.mean0[sel], pending.cov0[np.ix_(sel, sel)]),
            (pending.mean1[sel], pending.cov1[np.ix_(sel, sel)]),
            logger=self.logger,
        )

    def _hypotheses(self, sensor: SensorId, estimate: EkfEstimate, soft: SoftMeasurement):
        ctx = self.context
        if sensor in self.trusted:
            sensors_h0 = self.trusted
            sensors_h1 = self.trusted - {sensor}
            if not sensors_h1:
                return None
            replay = re_estimate_without_sensors(
                self.buffer, {sensor}, ctx.ekf, ctx.pipeline, current=estimate, base=self.trusted, logger=self.logger,
            )
            est0, est1, soft_h1 = estimate, replay.estimate, replay.soft
        else:
            sensors_h0 = self.trusted | {sensor}
            sensors_h1 = self.trusted
            replay = re_estimate_without_sensors(
                self.buffer, (), ctx.ekf, ctx.pipeline, current=estimate, base=sensors_h0, logger=self.logger,
            )
            est0, est1, soft_h1 = replay.estimate, estimate, soft
        model_h1 = ctx.pipeline.pipeline_model(sensors_h1)
        rows = np.flatnonzero(model_h1.available)
        R = np.zeros((N_COMPONENTS, N_COMPONENTS))
        R[np.ix_(rows, rows)] = model_h1.R
        h0 = Hypothesis.from_estimate("h0", est0, R=R, available=ctx.pipeline.structural_availability(sensors_h0))
        h1 = Hypothesis.from_estimate("h1", est1, R=R, available=model_h1.available)
        return h0, h1, sensors_h1, soft_h1

    def _apply_probing(self, sensor: SensorId, estimate: EkfEstimate, soft: SoftMeasurement, u_nominal: float) -> Tuple[float, bool]:
        ctx = self.context
        hypotheses = self._hypotheses(sensor, estimate, soft)
        if hypotheses is None:
            logger.debug(f"Probing {sensor.label} skipped at k={estimate.k}: no other trusted sensor")
            return u_nominal, False
        h0, h1, sensors_h1, soft_h1 = hypotheses
        result = solve_probing(h0, h1, ctx.safe, ctx.plant, u_nominal=u_nominal, logger=self.logger)
        if not result.feasible:
            return u_nominal, False
        idx = result.indices
        means = []
        for h in (h0, h1):
            f_d, g_d = ctx.plant.affine_decomposition(h.x)
            means.append((f_d + g_d * result.u)[idx])
        self.pending = PendingProbing(
            sensor=sensor,
            sensors_h1=sensors_h1,
            soft_h1=soft_h1,
            indices=idx,
            mean0=means[0],
            cov0=innovation_covariance(h0, ctx.plant, idx, result.u),
            mean1=means[1],
            cov1=innovation_covariance(h1, ctx.plant, idx, result.u),
        )
        return result.u, True

    def _advance(self, raw, pred, monitor_soft, alerts, attack_active):
        ctx = self.context
        soft = ctx.pipeline.soft_measurement(self.trusted, raw, self.prev_soft)
        if self.pending is not None:
            self._resolve_probing(raw)

        trusted_next = decide_trustable(self.belief, self.policy, self.trusted)
        self.buffer.append(ReplayRecord(k=raw.k, raw=raw, u_prev=self.u_prev, prev_soft=self.prev_soft, estimate=pred))
        if trusted_next != self.trusted:
            logger.debug(
                f"k={raw.k}: trusted set {sorted(s.label for s in self.trusted)} -> "
                f"{sorted(s.label for s in trusted_next)}"
            )
            replay = re_estimate_without_sensors(
                self.buffer, ALL_SENSORS - trusted_next, ctx.ekf, ctx.pipeline, current=pred, logger=self.logger,
            )
            estimate, soft = replay.estimate, replay.soft
            self.trusted = trusted_next
        else:
            estimate, _ = ctx.ekf.update(pred, soft)
        self.buffer.replace_last_estimate(estimate)
        self.prev_soft = soft

        u = ctx.controller.control(estimate.x)
        wanted, sensor = decide_probing(self.belief, self.policy)
        probing = False
        if wanted:
            u, probing = self._apply_probing(sensor, estimate, soft, u)
        return self._output(u, estimate, soft, alerts, probing=probing, probed=sensor if probing else None)


@MethodFactory.register("lase-ad-s")
class LaseAdS(LaseAd):
    default_policy = LASE_AD_S


@MethodFactory.register("lase-ad-b")
class LaseAdB(LaseAd):
    default_policy = LASE_AD_B


def lase_ad_step(loop: LaseAd, raw: RawMeasurementSet, attack_active: bool = False) -> Tuple[float, LaseAd]:
    """Functional form of :meth:`LaseAd.step`; returns (u, loop)."""
    return loop.step(raw, attack_active).u, loop
