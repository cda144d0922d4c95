"""Unit tests for sensors.py and scenarios.py"""
import unittest

import numpy as np
import pytest

from sensortrust.plant import CartPole
from sensortrust.scenarios import get_scenario, list_scenarios, register_scenario
from sensortrust.sensors import (
    AttackSchedule,
    AttackWindow,
    RawMeasurementSet,
    SensorId,
    SensorNoise,
    SensorSuite,
    StochasticAttacker,
    apply_attack,
    attacker_step,
)

DT = 0.005


def _raw(k=0):
    return RawMeasurementSet(k=k, encoder=[1.0, 2.0], camera=[3.0, 4.0], imu=[5.0, 6.0])


class TestSensorId(unittest.TestCase):
    """Sensor enumeration."""

    def test_order(self):
        """Test deterministic iteration order."""
        self.assertEqual(list(SensorId), [SensorId.ENCODER, SensorId.CAMERA, SensorId.IMU])

    def test_parse(self):
        """Test parsing from names and integers."""
        self.assertEqual(SensorId.parse("Imu"), SensorId.IMU)
        self.assertEqual(SensorId.parse("camera"), SensorId.CAMERA)
        self.assertEqual(SensorId.parse(0), SensorId.ENCODER)

    def test_parse_unknown(self):
        """Test that unknown names raise ValueError."""
        with self.assertRaises(ValueError):
            SensorId.parse("lidar")


class TestMeasureAll:
    """Measurement models."""

    def setup_method(self):
        self.plant = CartPole()

    def test_zero_noise_equilibrium(self):
        """Test readings are all zero at equilibrium without noise."""
        suite = SensorSuite(self.plant, SensorNoise.zero())
        raw = suite.measure_all(np.zeros(4), 0.0, np.random.default_rng(0), k=4)
        assert raw.k == 4
        for sensor in SensorId:
            np.testing.assert_array_equal(raw.reading(sensor), np.zeros(2))

    def test_imu_acceleration_channel(self):
        """Test the IMU v_dot channel equals the model's cart acceleration."""
        suite = SensorSuite(self.plant, SensorNoise.zero())
        state = np.array([0.0, 0.0, 0.1, 0.0])
        raw = suite.measure_all(state, 0.0, np.random.default_rng(0))
        assert raw.imu[0] == self.plant.continuous_dynamics(state, 0.0)[1]
        assert raw.camera[1] == 0.1

    def test_sample_covariance(self):
        """Test empirical covariances are within 5% of R_i."""
        noise = SensorNoise()
        suite = SensorSuite(self.plant, noise)
        rng = np.random.default_rng(123)
        n = 100_000
        samples = {sensor: np.empty((n, 2)) for sensor in SensorId}
        for i in range(n):
            raw = suite.measure_all(np.zeros(4), 0.0, rng)
            for sensor in SensorId:
                samples[sensor][i] = raw.reading(sensor)
        for sensor in SensorId:
            cov = np.cov(samples[sensor].T)
            expected = noise.R(sensor)
            np.testing.assert_allclose(np.diag(cov), np.diag(expected), rtol=0.05)

    def test_noise_config_does_not_shift_stream(self):
        """Test zero and default noise consume the same number of draws."""
        rng_a = np.random.default_rng(5)
        rng_b = np.random.default_rng(5)
        SensorSuite(self.plant, SensorNoise.zero()).measure_all(np.zeros(4), 0.0, rng_a)
        SensorSuite(self.plant).measure_all(np.zeros(4), 0.0, rng_b)
        assert rng_a.random() == rng_b.random()

    def test_rejects_bad_reading(self):
        """Test that a 3-component reading is rejected."""
        with pytest.raises(ValueError):
            RawMeasurementSet(k=0, encoder=[0, 0, 0], camera=[0, 0], imu=[0, 0])


class TestApplyAttack:
    """Additive bias injection."""

    def test_empty_schedule(self):
        """Test an empty schedule leaves readings untouched."""
        raw = _raw()
        attacked, z = apply_attack(raw, AttackSchedule(), 700, DT)
        assert attacked is raw
        np.testing.assert_array_equal(z, [0, 0, 0])

    def test_encoder_attack(self):
        """Test encoder p and v each shift by +0.5 while the window is active."""
        raw = _raw(k=700)
        attacked, z = apply_attack(raw, get_scenario("EncoderAttack(3.0)"), 700, DT)
        np.testing.assert_allclose(attacked.encoder, [1.5, 2.5])
        np.testing.assert_array_equal(attacked.camera, raw.camera)
        np.testing.assert_array_equal(attacked.imu, raw.imu)
        np.testing.assert_array_equal(z, [1, 0, 0])

    def test_encoder_imu_overlap(self):
        """Test both biases apply at t = 5 s in the Encoder-IMU scenario."""
        raw = _raw(k=1000)
        attacked, z = apply_attack(raw, get_scenario("Encoder-IMUAttack"), 1000, DT)
        np.testing.assert_allclose(attacked.encoder, [1.5, 2.5])
        np.testing.assert_allclose(attacked.imu, [5.2, 6.9])
        np.testing.assert_array_equal(z, [1, 0, 1])

    def test_window_is_half_open(self):
        """Test the window starts at its start and ends before its end."""
        schedule = get_scenario("EncoderAttack(0.5)")
        assert apply_attack(_raw(), schedule, 599, DT)[1][0] == 0
        assert apply_attack(_raw(), schedule, 600, DT)[1][0] == 1
        assert apply_attack(_raw(), schedule, 699, DT)[1][0] == 1
        assert apply_attack(_raw(), schedule, 700, DT)[1][0] == 0

    def test_eic_camera_bias(self):
        """Test the camera bias in the final EIC window."""
        attacked, z = apply_attack(_raw(), get_scenario("EICAttack"), 1300, DT)
        np.testing.assert_allclose(attacked.camera, [3.3, 4.15])
        np.testing.assert_array_equal(z, [0, 1, 0])

    def test_attack_never_touches_other_sensors(self):
        """Test attacking one sensor leaves the other channels bit-identical."""
        raw = _raw()
        schedule = AttackSchedule((AttackWindow(SensorId.IMU, 0.0, 1.0, (1.0, 1.0)),))
        attacked, _ = apply_attack(raw, schedule, 0, DT)
        np.testing.assert_array_equal(attacked.encoder, raw.encoder)
        np.testing.assert_array_equal(attacked.camera, raw.camera)

    def test_window_validation(self):
        """Test windows with start >= end are rejected."""
        with pytest.raises(ValueError, match="start < end"):
            AttackWindow(SensorId.ENCODER, 4.0, 3.0, (0.5, 0.5))

    def test_schedule_dict_round_trip(self):
        """Test schedule serialization preserves windows."""
        schedule = get_scenario("EICAttack")
        restored = AttackSchedule.from_dict(schedule.to_dict())
        assert len(restored.windows) == 3
        assert restored.windows[2].sensor == SensorId.CAMERA
        np.testing.assert_array_equal(restored.windows[2].bias, [0.3, 0.15])


class TestScenarioRegistry(unittest.TestCase):
    """Named scenario lookup."""

    def test_builtin_names(self):
        """Test that the four built-in scenarios are registered."""
        names = list_scenarios()
        for name in ("NoAttack", "EncoderAttack", "Encoder-IMUAttack", "EICAttack"):
            self.assertIn(name, names)

    def test_encoder_attack_duration(self):
        """Test the duration argument sets the window end."""
        window = get_scenario("EncoderAttack(0.5)").windows[0]
        self.assertEqual((window.start_s, window.end_s), (3.0, 3.5))
        self.assertEqual(get_scenario("EncoderAttack").windows[0].end_s, 6.0)

    def test_unknown_scenario(self):
        """Test unknown names raise ValueError listing registered names."""
        with self.assertRaises(ValueError) as context:
            get_scenario("Meteor")
        self.assertIn("NoAttack", str(context.exception))

    def test_bad_arguments(self):
        """Test non-numeric and surplus arguments raise ValueError."""
        with self.assertRaises(ValueError):
            get_scenario("EncoderAttack(long)")
        with self.assertRaises(ValueError):
            get_scenario("NoAttack(1.0)")

    def test_custom_registration(self):
        """Test registering a new scenario factory."""
        @register_scenario("TestCameraBlip")
        def blip():
            return AttackSchedule((AttackWindow(SensorId.CAMERA, 1.0, 1.5, (0.1, 0.0)),))

        schedule = get_scenario("TestCameraBlip")
        self.assertEqual(schedule.name, "TestCameraBlip")
        self.assertEqual(blip._registry_name, "TestCameraBlip")


class TestStochasticAttacker:
    """Markov on/off attacker."""

    def test_never_attacks_without_onset(self):
        """Test p_on = 0 keeps an idle attacker idle."""
        attacker = StochasticAttacker(p_on=0.0)
        rng = np.random.default_rng(0)
        for _ in range(1000):
            attacker, biases = attacker_step(attacker, rng)
            assert biases == {}

    def test_stationary_probability(self):
        """Test the stationary on-probability of the default chain is 0.5."""
        assert StochasticAttacker().stationary_on_probability == pytest.approx(0.5)

    def test_transition_frequencies(self):
        """Test empirical transition frequencies match the parameters within 1%."""
        attacker = StochasticAttacker(p_on=0.01, p_stay=0.99)
        rng = np.random.default_rng(42)
        counts = np.zeros((2, 2))
        previous = attacker.on[0]
        for _ in range(200_000):
            attacker, _ = attacker_step(attacker, rng)
            counts[int(previous), int(attacker.on[0])] += 1
            previous = attacker.on[0]
        p_on = counts[0, 1] / counts[0].sum()
        p_stay = counts[1, 1] / counts[1].sum()
        assert abs(p_on - 0.01) < 2e-3
        assert abs(p_stay - 0.99) < 0.01

    def test_emits_fixed_bias_when_on(self):
        """Test an always-on attacker emits its fixed biases."""
        attacker = StochasticAttacker(p_on=1.0, p_stay=1.0)
        attacker, biases = attacker_step(attacker, np.random.default_rng(0))
        assert set(biases) == set(SensorId)
        np.testing.assert_array_equal(biases[SensorId.ENCODER], [0.5, 0.5])

    def test_rejects_bad_probability(self):
        """Test probabilities outside [0, 1] are rejected."""
        with pytest.raises(ValueError):
            StochasticAttacker(p_on=1.5)
