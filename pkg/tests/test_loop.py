"""Unit tests for loop.py"""
import unittest
from unittest.mock import patch

import numpy as np
import pytest

from sensortrust.belief import Belief, BnModel
from sensortrust.control import LASE_AD_B, LASE_AD_S, ThresholdPolicy
from sensortrust.detection import DetectorCalibration, DetectorCharacterization
from sensortrust.estimation import EkfEstimate, re_estimate_without_sensors
from sensortrust.loop import (
    DEFAULT_WOLF_C,
    KalmanPred,
    LaseAd,
    LaseAdB,
    LaseAdS,
    LoopContext,
    NormalEkf,
    WolfImq,
    lase_ad_step,
)
from sensortrust.sensors import ALL_SENSORS, SensorId, SensorSuite
from sensortrust.utilities import MethodFactory

ENCODER, CAMERA, IMU = SensorId.ENCODER, SensorId.CAMERA, SensorId.IMU

QUIET = DetectorCalibration(tau=1e6, b=0.0)
JUMPY = DetectorCalibration(tau=1e-6, b=0.0)


def _context(calibration=QUIET):
    return LoopContext.build(calibration)


def _initial(theta=0.05):
    return EkfEstimate(np.array([0.0, 0.0, theta, 0.0]), np.eye(4) * 1e-4)


class ReadingStream:
    """Closed-loop readings from the true plant, driven by the inputs fed back."""

    def __init__(self, context, seed=0, theta=0.05):
        self.plant = context.plant
        self.suite = SensorSuite(self.plant, context.pipeline.noise)
        self.rng = np.random.default_rng(seed)
        self.x = np.array([0.0, 0.0, theta, 0.0])
        self.u = 0.0
        self.k = 0

    def read(self, encoder_bias=None):
        raw = self.suite.measure_all(self.x, self.u, self.rng, self.k)
        if encoder_bias is not None:
            raw = raw.with_offsets({ENCODER: np.asarray(encoder_bias, dtype=float)})
        return raw

    def apply(self, u):
        self.x = self.plant.step(self.x, u)
        self.u = u
        self.k += 1


class TestRegistry(unittest.TestCase):

    def test_every_selector_is_registered(self):
        """All seven method selectors resolve in the factory."""
        expected = {"normal", "wolf-imq", "wolf-md", "wolf-tmd", "kalmanpred", "lase-ad-b", "lase-ad-s"}
        self.assertTrue(expected.issubset(set(MethodFactory.names())))

    def test_factory_builds_configured_instances(self):
        """Factory kwargs reach the method constructor."""
        method = MethodFactory.create("wolf-imq", context=_context(), initial=_initial(), c=0.5)
        self.assertIsInstance(method, WolfImq)
        self.assertEqual(method.c, 0.5)

    def test_wolf_defaults_per_variant(self):
        """Unset c falls back to the variant default."""
        method = MethodFactory.create("wolf-imq", context=_context(), initial=_initial())
        self.assertEqual(method.c, DEFAULT_WOLF_C[method.variant])

    def test_wolf_rejects_non_positive_c(self):
        """c must be positive."""
        with self.assertRaises(ValueError):
            MethodFactory.create("wolf-md", context=_context(), initial=_initial(), c=0.0)

    def test_lase_ad_presets(self):
        """Each LASE-AD variant ships its preset probing window."""
        ctx = _context()
        self.assertEqual(LaseAdS(ctx, _initial()).policy, LASE_AD_S)
        self.assertEqual(LaseAdB(ctx, _initial()).policy, LASE_AD_B)

    def test_unknown_kwarg_rejected(self):
        """Factory validates kwargs against the constructor."""
        with self.assertRaises(ValueError):
            MethodFactory.create("normal", context=_context(), initial=_initial(), policy=LASE_AD_S)


class TestNormalLoop:

    def test_first_step_updates_the_initial_prior(self):
        """The first step has no prediction; its estimate moves toward the readings."""
        ctx = _context()
        method = NormalEkf(ctx, _initial())
        stream = ReadingStream(ctx)
        out = method.step(stream.read())
        assert out.estimate.P.trace() < _initial().P.trace()
        assert method.u_prev == out.u

    def test_regulates_the_pendulum(self):
        """Closed loop on the plain filter keeps the pole upright."""
        ctx = _context()
        method = NormalEkf(ctx, _initial())
        stream = ReadingStream(ctx, seed=3)
        for _ in range(600):
            out = method.step(stream.read())
            assert abs(out.u) <= ctx.plant.params.u_max
            stream.apply(out.u)
        assert abs(stream.x[2]) < 0.05

    def test_passive_belief_stays_low_without_alerts(self):
        """No alerts keeps every belief at or below the prior."""
        ctx = _context()
        method = NormalEkf(ctx, _initial())
        stream = ReadingStream(ctx)
        for _ in range(50):
            out = method.step(stream.read())
            stream.apply(out.u)
        assert np.all(out.belief.pi <= 0.05 + 1e-12)
        assert out.trusted == ALL_SENSORS
        assert not out.alerts.any()

    def test_normalized_innovations_tracked(self):
        """The detector input of every step is exposed."""
        ctx = _context()
        method = NormalEkf(ctx, _initial())
        stream = ReadingStream(ctx)
        method.step(stream.read())
        assert method.last_normalized.shape == (4,)
        assert np.all(np.isfinite(method.last_normalized))


class TestKalmanPred:

    def test_engages_on_alert_during_attack(self):
        """An alert while the attack is active skips the update."""
        ctx = _context(JUMPY)
        initial = _initial()
        method = KalmanPred(ctx, initial)
        stream = ReadingStream(ctx)
        out = method.step(stream.read(), attack_active=True)
        assert out.alerts.any()
        assert method.fallback.engaged
        np.testing.assert_array_equal(out.estimate.x, initial.x)
        np.testing.assert_array_equal(out.estimate.P, initial.P)

    def test_false_alarm_releases_when_alerts_clear(self):
        """A benign alert engages the fallback only until the detector goes quiet."""
        ctx = _context(JUMPY)
        method = KalmanPred(ctx, _initial())
        stream = ReadingStream(ctx)
        out = method.step(stream.read(), attack_active=False)
        assert out.alerts.any()
        assert method.fallback.engaged
        stream.apply(out.u)
        method.detector = QUIET.detector()
        out = method.step(stream.read(), attack_active=False)
        assert not out.alerts.any()
        assert not method.fallback.engaged
        assert method.fallback.skipped_updates == 1


class TestLaseAd:

    def _warm(self, method, stream, steps=20):
        for _ in range(steps):
            out = method.step(stream.read())
            stream.apply(out.u)
        return out

    def test_matches_plain_filter_without_alerts(self):
        """With all sensors trusted and no probing, LASE-AD is the plain filter."""
        ctx = _context()
        normal = NormalEkf(ctx, _initial())
        lase = LaseAdS(ctx, _initial())
        stream = ReadingStream(ctx, seed=7)
        for _ in range(200):
            raw = stream.read()
            out_n = normal.step(raw)
            out_l = lase.step(raw)
            assert not out_l.probing
            np.testing.assert_allclose(out_l.u, out_n.u, rtol=0, atol=1e-12)
            np.testing.assert_allclose(out_l.estimate.x, out_n.estimate.x, rtol=0, atol=1e-12)
            stream.apply(out_n.u)

    def test_disables_sensor_above_threshold(self):
        """A belief above the disable threshold drops the sensor and re-estimates."""
        ctx = _context()
        method = LaseAdS(ctx, _initial())
        stream = ReadingStream(ctx)
        self._warm(method, stream)
        with patch("sensortrust.loop.alert_posterior", return_value=Belief(np.array([0.95, 0.05, 0.05]))):
            out = method.step(stream.read())
        assert out.trusted == frozenset({CAMERA, IMU})
        assert method.trusted == out.trusted
        assert not out.probing
        replay = re_estimate_without_sensors(method.buffer, {ENCODER}, ctx.ekf, ctx.pipeline)
        np.testing.assert_allclose(out.estimate.x, replay.estimate.x, atol=1e-12)

    def test_hysteresis_keeps_sensor_disabled(self):
        """A disabled sensor returns only once its belief falls below the enable threshold."""
        ctx = _context()
        method = LaseAdS(ctx, _initial(), policy=ThresholdPolicy(0.6, 0.7))
        stream = ReadingStream(ctx)
        self._warm(method, stream)
        with patch("sensortrust.loop.alert_posterior", return_value=Belief(np.array([0.95, 0.05, 0.05]))):
            stream.apply(method.step(stream.read()).u)
        with patch("sensortrust.loop.alert_posterior", return_value=Belief(np.array([0.55, 0.05, 0.05]))):
            out = method.step(stream.read())
        assert ENCODER not in out.trusted
        stream.apply(out.u)
        with patch("sensortrust.loop.alert_posterior", return_value=Belief(np.array([0.3, 0.05, 0.05]))):
            out = method.step(stream.read())
        assert out.trusted == ALL_SENSORS

    def test_probing_inside_window(self):
        """A belief inside the window applies a safe probing input and resolves it next step."""
        ctx = _context()
        method = LaseAdS(ctx, _initial())
        stream = ReadingStream(ctx)
        self._warm(method, stream)
        with patch("sensortrust.loop.alert_posterior", return_value=Belief(np.array([0.55, 0.05, 0.05]))):
            out = method.step(stream.read())
        assert out.probing
        assert out.probing_sensor == ENCODER
        assert abs(out.u) <= ctx.plant.params.u_max
        assert method.pending is not None
        assert method.pending.sensors_h1 == frozenset({CAMERA, IMU})
        stream.apply(out.u)
        follow = method.step(stream.read())
        assert method.pending is None or follow.probing
        assert np.all((follow.belief.pi > 0) & (follow.belief.pi < 1))

    def test_probing_disabled_sensor(self):
        """A disabled sensor inside the window is tested by probing against the pipeline that includes it."""
        ctx = _context()
        method = LaseAdS(ctx, _initial())
        stream = ReadingStream(ctx)
        self._warm(method, stream)
        with patch("sensortrust.loop.alert_posterior", return_value=Belief(np.array([0.95, 0.05, 0.05]))):
            stream.apply(method.step(stream.read()).u)
        with patch("sensortrust.loop.alert_posterior", return_value=Belief(np.array([0.55, 0.05, 0.05]))):
            out = method.step(stream.read())
        assert ENCODER not in out.trusted
        assert out.probing
        assert method.pending.sensors_h1 == frozenset({CAMERA, IMU})

    def test_no_probing_when_candidate_is_the_only_trusted(self):
        """Nothing to compare against: the nominal input is kept."""
        ctx = _context()
        method = LaseAdS(ctx, _initial())
        stream = ReadingStream(ctx)
        self._warm(method, stream)
        method.trusted = frozenset({CAMERA})
        with patch("sensortrust.loop.alert_posterior", return_value=Belief(np.array([0.95, 0.55, 0.95]))):
            out = method.step(stream.read())
        assert out.trusted == frozenset({CAMERA})
        assert not out.probing
        assert out.u == pytest.approx(ctx.controller.control(out.estimate.x))

    def test_functional_step(self):
        """lase_ad_step returns the applied input and the same loop object."""
        ctx = _context()
        method = LaseAdB(ctx, _initial())
        stream = ReadingStream(ctx)
        u, loop = lase_ad_step(method, stream.read())
        assert loop is method
        assert u == method.u_prev
        assert isinstance(loop, LaseAd)


class TestProbingUnderAttack:
    """Probing on live readings, with alerts made uninformative so only probing moves the belief."""

    BIAS = (0.5, 0.5)

    def _method(self):
        ctx = _context()
        method = LaseAdS(ctx, _initial())
        method.bn = BnModel(ctx.graph, DetectorCharacterization(eta0=0.5, eta1=0.5, beta0=(1.0, 1.0), beta1=(1.0, 1.0)))
        return ctx, method

    def _run(self, method, stream, steps, bias=None):
        out = None
        for _ in range(steps):
            out = method.step(stream.read(bias))
            stream.apply(out.u)
        return out

    def test_probing_raises_belief_of_attacked_encoder(self):
        """A window belief on a biased encoder is pushed past the disable threshold by one probing step."""
        ctx, method = self._method()
        stream = ReadingStream(ctx, seed=5)
        self._run(method, stream, 100)
        out = self._run(method, stream, 60, self.BIAS)
        assert out.belief[ENCODER] == pytest.approx(0.05)
        assert ENCODER in out.trusted

        method.belief = Belief(np.array([0.55, 0.05, 0.05]))
        out = method.step(stream.read(self.BIAS))
        assert out.probing
        assert out.probing_sensor == ENCODER
        stream.apply(out.u)

        out = method.step(stream.read(self.BIAS))
        assert out.belief[ENCODER] > LASE_AD_S.disable
        assert ENCODER not in out.trusted

    def test_probing_keeps_clean_encoder(self):
        """The same window belief on a clean encoder stays below the disable threshold."""
        ctx, method = self._method()
        stream = ReadingStream(ctx, seed=5)
        self._run(method, stream, 160)

        method.belief = Belief(np.array([0.55, 0.05, 0.05]))
        out = method.step(stream.read())
        assert out.probing
        stream.apply(out.u)

        out = method.step(stream.read())
        assert out.belief[ENCODER] < LASE_AD_S.disable
        assert ENCODER in out.trusted
