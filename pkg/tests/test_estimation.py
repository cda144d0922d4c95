"""Unit tests for estimation.py"""
import logging
import unittest
from unittest.mock import Mock

import numpy as np
import pytest
from scipy.linalg import expm

from sensortrust.estimation import (
    EkfEstimate,
    ExtendedKalmanFilter,
    ReplayBuffer,
    ReplayRecord,
    re_estimate_without_sensors,
)
from sensortrust.perception import PerceptionPipeline, SoftMeasurement
from sensortrust.plant import CartPole
from sensortrust.sensors import ALL_SENSORS, SensorId, SensorSuite
from sensortrust.utilities import EstimatorFault, SensorTrustWarning

DT = 0.005


class LinearModel:
    """Linear surrogate plant x+ = F x + G u."""

    def __init__(self, F, G, Q):
        self.F = F
        self.G = G
        self.Q = Q

    def step(self, x, u, noise=None):
        x_next = self.F @ x + self.G[:, 0] * u
        return x_next if noise is None else x_next + noise

    def linearize(self, x, u):
        return self.F, self.G


def _linear_model(Q_scale=1e-4):
    A = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [0.0, -0.1, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, -10.0, -0.2],
    ])
    F = expm(A * 0.01)
    G = 0.01 * np.array([[0.0], [1.0], [0.0], [-1.0]])
    return LinearModel(F, G, Q_scale * np.eye(4))


def _soft(y, variances, available=None, k=0):
    available = np.ones(4, dtype=bool) if available is None else np.asarray(available, dtype=bool)
    y = np.where(available, y, np.nan)
    return SoftMeasurement(y=y, available=available, R=np.diag(np.where(available, variances, 0.0)), k=k)


def _simulate(steps, attack=None, capacity=100, seed=0):
    """Hanging pendulum, all sensors, optional encoder bias over [start, end) steps."""
    plant = CartPole()
    suite = SensorSuite(plant)
    pipeline = PerceptionPipeline(suite.noise, DT)
    ekf = ExtendedKalmanFilter(plant)
    rng = np.random.default_rng(seed)
    x = np.array([0.0, 0.0, np.pi - 0.2, 0.0])
    est = EkfEstimate(x, np.diag([1e-3, 1e-3, 1e-3, 1e-3]))
    buffer = ReplayBuffer(capacity)
    prev_soft = None
    for k in range(steps):
        if k > 0:
            x = plant.step(x, 0.0, noise=plant.sample_process_noise(rng))
        raw = suite.measure_all(x, 0.0, rng, k)
        if attack is not None and attack[0] <= k < attack[1]:
            raw = raw.with_offsets({SensorId.ENCODER: np.array([0.5, 0.5])})
        soft = pipeline.soft_measurement(ALL_SENSORS, raw, prev_soft)
        pred = est if k == 0 else ekf.predict(est, 0.0)
        est, _ = ekf.update(pred, soft)
        buffer.append(ReplayRecord(k, raw, None if k == 0 else 0.0, prev_soft, est))
        prev_soft = soft
    return x, est, buffer, ekf, pipeline


class TestPredict:
    """EKF prediction."""

    def test_linear_prediction_matches_closed_form(self):
        """Test prediction on a linear plant with Q = 0."""
        model = _linear_model(Q_scale=0.0)
        ekf = ExtendedKalmanFilter(model)
        est = EkfEstimate(np.array([0.1, -0.2, 0.3, 0.0]), np.diag([1.0, 2.0, 3.0, 4.0]), k=3)
        pred = ekf.predict(est, 0.7)
        np.testing.assert_allclose(pred.x, model.F @ est.x + model.G[:, 0] * 0.7, atol=1e-12)
        np.testing.assert_allclose(pred.P, model.F @ est.P @ model.F.T, atol=1e-12)
        assert pred.k == 4

    def test_equilibrium_mean_unchanged(self):
        """Test the mean stays at the upright equilibrium with u = 0."""
        ekf = ExtendedKalmanFilter(CartPole())
        pred = ekf.predict(EkfEstimate(np.zeros(4), np.eye(4) * 1e-3), 0.0)
        np.testing.assert_array_equal(pred.x, np.zeros(4))

    def test_trace_grows_without_updates(self):
        """Test the covariance trace never shrinks under prediction only."""
        ekf = ExtendedKalmanFilter(CartPole())
        est = EkfEstimate(np.zeros(4), np.eye(4) * 1e-4)
        traces = [np.trace(est.P)]
        for _ in range(100):
            est = ekf.predict(est, 0.0)
            traces.append(np.trace(est.P))
        assert np.all(np.diff(traces) >= 0)


class TestUpdate:
    """EKF measurement update."""

    def setup_method(self):
        self.ekf = ExtendedKalmanFilter(_linear_model())
        self.pred = EkfEstimate(np.array([0.1, 0.2, 0.3, 0.4]), np.diag([1e-2, 2e-2, 3e-2, 4e-2]))

    def test_perfect_measurement(self):
        """Test R -> 0 puts the posterior mean on the measurement."""
        y = np.array([1.0, 2.0, 3.0, 4.0])
        post, innov = self.ekf.update(self.pred, _soft(y, np.zeros(4)))
        np.testing.assert_allclose(post.x, y, atol=1e-12)
        np.testing.assert_allclose(innov.r, y - self.pred.x)

    def test_uninformative_measurement(self):
        """Test a huge R leaves the prediction unchanged."""
        post, _ = self.ekf.update(self.pred, _soft(np.full(4, 100.0), np.full(4, 1e14)))
        np.testing.assert_allclose(post.x, self.pred.x, atol=1e-9)
        np.testing.assert_allclose(post.P, self.pred.P, atol=1e-9)

    def test_partial_availability(self):
        """Test unavailable rows are ignored."""
        soft = _soft(np.array([1.0, 0.0, 0.0, 0.0]), np.full(4, 1e-4), available=[True, False, False, False])
        post, innov = self.ekf.update(self.pred, soft)
        np.testing.assert_array_equal(innov.indices, [0])
        assert post.x[0] != self.pred.x[0]
        np.testing.assert_array_equal(post.x[1:], self.pred.x[1:])

    def test_nothing_available(self):
        """Test an empty measurement returns the prediction."""
        soft = _soft(np.zeros(4), np.zeros(4), available=[False] * 4)
        post, innov = self.ekf.update(self.pred, soft)
        assert post is self.pred
        assert innov.is_empty

    def test_singular_innovation_covariance(self):
        """Test a singular innovation covariance raises EstimatorFault."""
        pred = EkfEstimate(np.zeros(4), np.zeros((4, 4)))
        with pytest.raises(EstimatorFault, match="Singular"):
            self.ekf.update(pred, _soft(np.ones(4), np.zeros(4)))

    def test_covariance_stays_symmetric_psd(self):
        """Test symmetry and PSD after an update."""
        post, _ = self.ekf.update(self.pred, _soft(np.ones(4), np.full(4, 1e-3)))
        np.testing.assert_array_equal(post.P, post.P.T)
        assert np.linalg.eigvalsh(post.P).min() >= -1e-10

    def test_normalized_innovation(self):
        """Test |r| / sigma per component, NaN where unavailable."""
        soft = _soft(np.array([0.3, 0.0, 0.0, 0.0]), np.full(4, 0.0), available=[True, False, False, False])
        innov = self.ekf.innovation(self.pred, soft)
        normalized = innov.normalized()
        assert normalized[0] == pytest.approx(0.2 / 0.1)
        assert np.isnan(normalized[1:]).all()


class TestKalmanOracle(unittest.TestCase):
    """EKF against an independent textbook Kalman filter on a linear plant."""

    def test_matches_textbook_kf(self):
        """Test 1000 steps agree to 1e-9 with partial availability mixed in."""
        model = _linear_model()
        ekf = ExtendedKalmanFilter(model)
        rng = np.random.default_rng(2024)
        R_diag = np.array([1e-3, 2e-3, 1e-3, 5e-3])

        x_true = np.array([0.2, 0.0, 0.1, 0.0])
        est = EkfEstimate(np.zeros(4), np.eye(4))
        x_kf, P_kf = np.zeros(4), np.eye(4)
        for k in range(1000):
            u = np.sin(0.01 * k)
            x_true = model.step(x_true, u, noise=rng.normal(scale=1e-2, size=4))
            y = x_true + rng.normal(scale=np.sqrt(R_diag))
            available = np.ones(4, dtype=bool)
            if k % 7 == 0:
                available[2:] = False

            est = ekf.predict(est, u)
            est, _ = ekf.update(est, _soft(y, R_diag, available))

            x_kf = model.F @ x_kf + model.G[:, 0] * u
            P_kf = model.F @ P_kf @ model.F.T + model.Q
            H = np.eye(4)[available]
            S = H @ P_kf @ H.T + np.diag(R_diag[available])
            K = P_kf @ H.T @ np.linalg.inv(S)
            x_kf = x_kf + K @ (y[available] - H @ x_kf)
            P_kf = (np.eye(4) - K @ H) @ P_kf

        np.testing.assert_allclose(est.x, x_kf, atol=1e-9)
        np.testing.assert_allclose(est.P, P_kf, atol=1e-9)


class TestReplayBuffer(unittest.TestCase):
    """FIFO buffer."""

    def test_capacity_and_order(self):
        """Test the buffer keeps the newest records in order."""
        _, _, buffer, _, _ = _simulate(30, capacity=10)
        self.assertEqual(len(buffer), 10)
        self.assertEqual([record.k for record in buffer], list(range(20, 30)))

    def test_rejects_non_chronological(self):
        """Test that appending an older record raises ValueError."""
        _, _, buffer, _, _ = _simulate(5)
        with self.assertRaises(ValueError):
            buffer.append(buffer[0])

    def test_rejects_zero_capacity(self):
        """Test capacity must be positive."""
        with self.assertRaises(ValueError):
            ReplayBuffer(0)


class TestReEstimate:
    """Counterfactual replay."""

    def test_no_exclusion_is_bit_identical(self):
        """Test replay with every sensor reproduces the live estimate exactly."""
        _, est, buffer, ekf, pipeline = _simulate(150)
        result = re_estimate_without_sensors(buffer, set(), ekf, pipeline)
        np.testing.assert_array_equal(result.estimate.x, est.x)
        np.testing.assert_array_equal(result.estimate.P, est.P)
        assert not result.stale

    def test_benign_exclusion_stays_close(self):
        """Test excluding the encoder on benign data stays within 5 sigma."""
        _, est, buffer, ekf, pipeline = _simulate(300)
        result = re_estimate_without_sensors(buffer, {SensorId.ENCODER}, ekf, pipeline)
        sigma = np.sqrt(np.diag(est.P) + np.diag(result.estimate.P))
        assert np.all(np.abs(result.estimate.x - est.x) <= 5 * sigma)
        assert result.sensors == {SensorId.CAMERA, SensorId.IMU}

    def test_exclusion_removes_attack_bias(self):
        """Test excluding an attacked encoder tracks the truth better than the live filter."""
        x_true, est, buffer, ekf, pipeline = _simulate(400, attack=(200, 400), capacity=300)
        result = re_estimate_without_sensors(buffer, {SensorId.ENCODER}, ekf, pipeline)
        live_error = np.linalg.norm(est.x[:2] - x_true[:2])
        replay_error = np.linalg.norm(result.estimate.x[:2] - x_true[:2])
        assert live_error > 2 * replay_error

    def test_empty_buffer_warns(self):
        """Test an empty buffer returns the current estimate with a warning."""
        current = EkfEstimate(np.zeros(4), np.eye(4))
        plant = CartPole()
        pipeline = PerceptionPipeline(SensorSuite(plant).noise, DT)
        with pytest.warns(SensorTrustWarning, match="empty"):
            result = re_estimate_without_sensors(ReplayBuffer(), {SensorId.ENCODER}, ExtendedKalmanFilter(plant), pipeline, current)
        assert result.estimate is current
        assert result.stale

    def test_empty_buffer_logs(self):
        """Test the empty-buffer warning goes to a provided logger."""
        logger = Mock(spec=logging.Logger)
        plant = CartPole()
        pipeline = PerceptionPipeline(SensorSuite(plant).noise, DT)
        re_estimate_without_sensors(ReplayBuffer(), set(), ExtendedKalmanFilter(plant), pipeline, logger=logger)
        logger.warning.assert_called_once()

    def test_live_filter_untouched(self):
        """Test replay does not mutate buffered records."""
        _, _, buffer, ekf, pipeline = _simulate(50)
        before = [record.estimate.x.copy() for record in buffer]
        re_estimate_without_sensors(buffer, {SensorId.CAMERA}, ekf, pipeline)
        for record, x in zip(buffer, before):
            np.testing.assert_array_equal(record.estimate.x, x)
