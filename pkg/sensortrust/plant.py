"""
plant.py

Nonlinear cart-pole plant: classic cart-pole equations of motion, RK4
discretization, process noise, the control-affine decomposition used by the
probing optimizer and the finite-difference Jacobians used by the EKF.

States are 4-vectors ordered (p, v, theta, omega); theta is measured from
upright and never wrapped.
"""
from dataclasses import dataclass, field
from typing import Any, Dict, Tuple, Union

import numpy as np

StateLike = Union['PlantState', np.ndarray, list, tuple]

STATE_NAMES = ('p', 'v', 'theta', 'omega')


@dataclass(frozen=True)
class PlantState:
    """
    Cart-pole state.

    Parameters
    ----------
    p : float
        Cart position (m).
    v : float
        Cart velocity (m/s).
    theta : float
        Pole angle from upright (rad), unwrapped.
    omega : float
        Pole angular velocity (rad/s).
    """
    p: float = 0.0
    v: float = 0.0
    theta: float = 0.0
    omega: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError(f"PlantState fields must be finite, got {self.as_array().tolist()}")

    def as_array(self) -> np.ndarray:
        return np.array([self.p, self.v, self.theta, self.omega], dtype=float)

    @classmethod
    def from_array(cls, x) -> 'PlantState':
        x = np.asarray(x, dtype=float).reshape(4)
        return cls(*(float(value) for value in x))


def as_state_vector(state: StateLike) -> np.ndarray:
    """Return ``state`` as a float 4-vector (copy)."""
    if isinstance(state, PlantState):
        return state.as_array()
    x = np.array(state, dtype=float).reshape(-1)
    if x.shape != (4,):
        raise ValueError(f"State must have 4 components, got shape {x.shape}")
    return x


def _default_process_noise() -> np.ndarray:
    return np.diag([1e-6, 1e-5, 1e-6, 1e-5])


@dataclass(frozen=True)
class PlantParams:
    """
    Physical and discretization parameters of the cart-pole.

    Defaults are the classic cart-pole values; they are configuration, not
    measured ground truth.

    Parameters
    ----------
    cart_mass : float
        Cart mass (kg).
    pole_mass : float
        Pole mass (kg).
    half_length : float
        Distance from pivot to the pole's centre of mass (m).
    gravity : float
        Gravitational acceleration (m/s^2).
    dt : float
        Integration step (s).
    u_max : float
        Force saturation bound (N); the admissible input set is [-u_max, u_max].
    Q : np.ndarray
        4x4 process-noise covariance, symmetric PSD.
    """
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    half_length: float = 0.5
    gravity: float = 9.8
    dt: float = 0.005
    u_max: float = 10.0
    Q: np.ndarray = field(default_factory=_default_process_noise)

    def __post_init__(self):
        for name in ('cart_mass', 'pole_mass', 'half_length', 'gravity', 'dt', 'u_max'):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"PlantParams.{name} must be strictly positive, got {value}")
        Q = np.array(self.Q, dtype=float)
        if Q.shape != (4, 4):
            raise ValueError(f"PlantParams.Q must be 4x4, got shape {Q.shape}")
        if not np.allclose(Q, Q.T, atol=1e-12):
            raise ValueError("PlantParams.Q must be symmetric")
        if np.linalg.eigvalsh(Q).min() < -1e-12:
            raise ValueError("PlantParams.Q must be positive semi-definite")
        object.__setattr__(self, 'Q', Q)

    @property
    def total_mass(self) -> float:
        return self.cart_mass + self.pole_mass

    def to_dict(self) -> Dict[str, Any]:
        return {
            "cart_mass": self.cart_mass,
            "pole_mass": self.pole_mass,
            "half_length": self.half_length,
            "gravity": self.gravity,
            "dt": self.dt,
            "u_max": self.u_max,
            "Q": self.Q.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'PlantParams':
        data = dict(data)
        if "Q" in data:
            data["Q"] = np.array(data["Q"], dtype=float)
        return cls(**data)


def saturate(u: float, u_max: float) -> float:
    """Clip a scalar force to [-u_max, u_max]."""
    return float(np.clip(u, -u_max, u_max))


class CartPole:
    """
    Cart-pole dynamics with RK4 discretization.

    All methods are pure: the instance only holds immutable parameters, so a
    single CartPole may be shared across threads and runs.

    Parameters
    ----------
    params : PlantParams, optional
        Plant parameters; defaults to ``PlantParams()``.
    """
    def __init__(self, params: PlantParams = None):
        self.params = params if params is not None else PlantParams()

    @property
    def dt(self) -> float:
        return self.params.dt

    @property
    def Q(self) -> np.ndarray:
        return self.params.Q

    def _derivatives(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        """Batched equations of motion; X is (n, 4), U is (n,)."""
        prm = self.params
        v, theta, omega = X[:, 1], X[:, 2], X[:, 3]
        sin_t = np.sin(theta)
        cos_t = np.cos(theta)
        polemass_length = prm.pole_mass * prm.half_length

        temp = (U + polemass_length * omega ** 2 * sin_t) / prm.total_mass
        omega_dot = (prm.gravity * sin_t - cos_t * temp) / (
            prm.half_length * (4.0 / 3.0 - prm.pole_mass * cos_t ** 2 / prm.total_mass)
        )
        v_dot = temp - polemass_length * omega_dot * cos_t / prm.total_mass
        return np.stack([v, v_dot, omega, omega_dot], axis=1)

    def _rk4(self, X: np.ndarray, U: np.ndarray, dt: float) -> np.ndarray:
        k1 = self._derivatives(X, U)
        k2 = self._derivatives(X + 0.5 * dt * k1, U)
        k3 = self._derivatives(X + 0.5 * dt * k2, U)
        k4 = self._derivatives(X + dt * k3, U)
        return X + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def continuous_dynamics(self, state: StateLike, u: float) -> np.ndarray:
        """
        Time derivative of the state under a constant force.

        Parameters
        ----------
        state : PlantState or array-like
            Current state.
        u : float
            Horizontal force on the cart (N).

        Returns
        -------
        np.ndarray
            (v, v_dot, omega, omega_dot).
        """
        x = as_state_vector(state)
        return self._derivatives(x[None, :], np.array([float(u)]))[0]

    def step(self, state: StateLike, u: float, noise=None, dt: float = None) -> np.ndarray:
        """
        Advance the state by one RK4 step with ``u`` held constant.

        Parameters
        ----------
        state : PlantState or array-like
            Current state.
        u : float
            Applied force (N); must already be saturated.
        noise : array-like, optional
            Additive process-noise sample w_k.
        dt : float, optional
            Step size override; defaults to ``params.dt``.

        Returns
        -------
        np.ndarray
            Next state.

        Raises
        ------
        ValueError
            If the state or input is not finite, or the input exceeds the
            saturation bound.
        """
        x = as_state_vector(state)
        u = float(u)
        if not (np.all(np.isfinite(x)) and np.isfinite(u)):
            raise ValueError(f"Non-finite state or input: x={x.tolist()}, u={u}")
        if abs(u) > self.params.u_max * (1.0 + 1e-6) + 1e-6:
            raise ValueError(f"Input {u} exceeds saturation bound {self.params.u_max}")
        x_next = self._rk4(x[None, :], np.array([u]), self.dt if dt is None else dt)[0]
        if noise is not None:
            x_next = x_next + np.asarray(noise, dtype=float).reshape(4)
        return x_next

    def sample_process_noise(self, rng: np.random.Generator) -> np.ndarray:
        """Draw w_k ~ N(0, Q); always consumes four standard normals."""
        w, V = np.linalg.eigh(self.Q)
        L = V * np.sqrt(np.clip(w, 0.0, None))
        return L @ rng.standard_normal(4)

    def affine_decomposition(self, state: StateLike, delta: float = 1e-3) -> Tuple[np.ndarray, np.ndarray]:
        """
        Split the discrete step into x+ ~= f_d(x) + g_d(x) u.

        f_d is the unforced step; g_d is the central finite difference of the
        step with respect to u at u = 0.

        Parameters
        ----------
        state : PlantState or array-like
            Linearization state.
        delta : float, optional
            Input perturbation for the central difference.

        Returns
        -------
        tuple of np.ndarray
            (f_d, g_d), both 4-vectors.
        """
        x = as_state_vector(state)
        X = np.repeat(x[None, :], 3, axis=0)
        U = np.array([0.0, delta, -delta])
        out = self._rk4(X, U, self.dt)
        f_d = out[0]
        g_d = (out[1] - out[2]) / (2.0 * delta)
        return f_d, g_d

    def linearize(self, state: StateLike, u: float, h: float = 1e-6) -> Tuple[np.ndarray, np.ndarray]:
        """
        Central finite-difference Jacobians of the noiseless step.

        Parameters
        ----------
        state : PlantState or array-like
            Linearization state.
        u : float
            Linearization input.
        h : float, optional
            Perturbation size.

        Returns
        -------
        tuple of np.ndarray
            F (4x4) = d step / d x and G (4x1) = d step / d u.
        """
        x = as_state_vector(state)
        u = float(u)
        X = np.repeat(x[None, :], 10, axis=0)
        U = np.full(10, u)
        for i in range(4):
            X[2 * i, i] += h
            X[2 * i + 1, i] -= h
        U[8] += h
        U[9] -= h
        out = self._rk4(X, U, self.dt)
        F = np.empty((4, 4))
        for i in range(4):
            F[:, i] = (out[2 * i] - out[2 * i + 1]) / (2.0 * h)
        G = ((out[8] - out[9]) / (2.0 * h)).reshape(4, 1)
        return F, G

    def upright_continuous_jacobians(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        Analytic continuous-time linearization (A, B) at the upright equilibrium.
        """
        prm = self.params
        denom = prm.half_length * (4.0 / 3.0 - prm.pole_mass / prm.total_mass)
        a_theta = prm.gravity / denom
        b_theta = -1.0 / (prm.total_mass * denom)
        ml = prm.pole_mass * prm.half_length
        A = np.zeros((4, 4))
        A[0, 1] = 1.0
        A[2, 3] = 1.0
        A[3, 2] = a_theta
        A[1, 2] = -ml * a_theta / prm.total_mass
        B = np.zeros((4, 1))
        B[3, 0] = b_theta
        B[1, 0] = 1.0 / prm.total_mass - ml * b_theta / prm.total_mass
        return A, B
