"""Closed-form rigid-body model of a planar double pendulum built from two
uniform thin rods.

Conventions
-----------
q1 is the angle of the first link measured from the downward vertical,
q2 is the relative angle of the second link at the elbow; both rotate in
the same (counterclockwise) sense.  The stable equilibrium is q = (0, 0),
the upright unstable equilibrium is q = (pi, 0).  Each link has its
center of mass at mid-link (lc = l/2) and a rotational inertia I about
that point.

With the abbreviations

    a1 = m1 lc1^2 + I1 + m2 l1^2        a2 = m2 lc2^2 + I2
    b  = m2 l1 lc2
    g1 = g (m1 lc1 + m2 l1)             g2 = g m2 lc2

the model is

    M(q)  = [[a1 + a2 + 2 b cos q2,  a2 + b cos q2],
             [a2 + b cos q2,         a2          ]]
    c(q, qd) = [-b sin q2 (2 qd1 qd2 + qd2^2),  b sin q2 qd1^2]
    V(q)  = g1 (1 - cos q1) + g2 (1 - cos(q1 + q2))
    g(q)  = dV/dq

c is written from the Christoffel symbols of the first kind, so the
power-balance identity qd' (dM/dt qd - 2 c) = 0 holds exactly and the
total energy E = 1/2 qd' M qd + V is conserved along torque-free flow.
V is offset so that V(0, 0) = 0; the potential maximum V(pi, 0) =
2 (g1 + g2) is attained in the upright position.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


class ModelError(Exception):
    """Signals an inconsistency in the physical model (e.g. a non-SPD
    stiffness at the stable equilibrium)."""


@dataclass(frozen=True)
class PendulumParams:
    """Physical constants of the thin-rod double pendulum.

    Defaults are the reference parameter set: l = 0.5 m, m = 0.66183 kg,
    g = 9.81 m/s^2 and I = 0.0153 kg m^2 for both links.
    """

    l1: float = 0.5
    l2: float = 0.5
    m1: float = 0.66183
    m2: float = 0.66183
    grav: float = 9.81
    i1: float = 0.0153
    i2: float = 0.0153

    def __post_init__(self):
        for name in ("l1", "l2", "m1", "m2", "grav", "i1", "i2"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive")

    def coeffs(self) -> tuple[float, float, float, float, float]:
        """Lumped coefficients (a1, a2, b, g1, g2) used by the closed forms."""
        lc1, lc2 = 0.5 * self.l1, 0.5 * self.l2
        a1 = self.m1 * lc1**2 + self.i1 + self.m2 * self.l1**2
        a2 = self.m2 * lc2**2 + self.i2
        b = self.m2 * self.l1 * lc2
        g1 = self.grav * (self.m1 * lc1 + self.m2 * self.l1)
        g2 = self.grav * self.m2 * lc2
        return a1, a2, b, g1, g2

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("l1", "l2", "m1", "m2", "grav", "i1", "i2")}

    @classmethod
    def from_dict(cls, d: dict) -> "PendulumParams":
        return cls(**d)


@dataclass
class State:
    """Joint angles q [rad] and velocities qd [rad/s], stored unwrapped."""

    q: np.ndarray
    qd: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(2)
        self.qd = np.asarray(self.qd, dtype=float).reshape(2)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.qd])

    @classmethod
    def from_vector(cls, x) -> "State":
        x = np.asarray(x, dtype=float).reshape(4)
        return cls(x[:2].copy(), x[2:].copy())

    def copy(self) -> "State":
        return State(self.q.copy(), self.qd.copy())


@dataclass(frozen=True)
class LinearModes:
    """Natural frequencies (ascending) and unit mode shapes of the
    linearization at the stable equilibrium.  Each shape has its first
    nonzero component positive."""

    omega: np.ndarray
    v: np.ndarray  # v[i] is the shape of mode i+1

    @property
    def periods(self) -> np.ndarray:
        return 2.0 * np.pi / self.omega


def mass_matrix(params: PendulumParams, q) -> np.ndarray:
    """Symmetric positive-definite mass matrix M(q); depends on q only
    through q2."""
    a1, a2, b, _, _ = params.coeffs()
    c2 = np.cos(q[1])
    m12 = a2 + b * c2
    return np.array([[a1 + a2 + 2.0 * b * c2, m12], [m12, a2]])


def coriolis(params: PendulumParams, q, qd) -> np.ndarray:
    """Coriolis/centrifugal vector c(q, qd), quadratic in qd."""
    _, _, b, _, _ = params.coeffs()
    s2 = np.sin(q[1])
    return np.array(
        [-b * s2 * (2.0 * qd[0] * qd[1] + qd[1] ** 2), b * s2 * qd[0] ** 2]
    )


def gravity(params: PendulumParams, q) -> np.ndarray:
    """Gravity torque vector g(q) = dV/dq."""
    _, _, _, g1, g2 = params.coeffs()
    s12 = np.sin(q[0] + q[1])
    return np.array([g1 * np.sin(q[0]) + g2 * s12, g2 * s12])


def potential(params: PendulumParams, q) -> float:
    """Potential energy V(q), offset so that V(0, 0) = 0."""
    _, _, _, g1, g2 = params.coeffs()
    return g1 * (1.0 - np.cos(q[0])) + g2 * (1.0 - np.cos(q[0] + q[1]))


def kinetic(params: PendulumParams, q, qd) -> float:
    """Kinetic energy 1/2 qd' M(q) qd."""
    qd = np.asarray(qd, dtype=float)
    return 0.5 * float(qd @ mass_matrix(params, q) @ qd)


def energy(params: PendulumParams, state: State) -> float:
    """Total energy E = 1/2 qd' M qd + V."""
    return kinetic(params, state.q, state.qd) + potential(params, state.q)


def max_potential_energy(params: PendulumParams) -> float:
    """V(pi, 0), the potential ceiling of brake-orbit families."""
    _, _, _, g1, g2 = params.coeffs()
    return 2.0 * (g1 + g2)


def forward_dynamics(params: PendulumParams, state: State, tau) -> np.ndarray:
    """Joint accelerations qdd = M^-1 (tau - c - g)."""
    tau = np.asarray(tau, dtype=float)
    rhs = tau - coriolis(params, state.q, state.qd) - gravity(params, state.q)
    return np.linalg.solve(mass_matrix(params, state.q), rhs)


def potential_hessian(params: PendulumParams, q) -> np.ndarray:
    """Hessian d^2V/dq^2, used by the linearization and the variational
    equations."""
    _, _, _, g1, g2 = params.coeffs()
    c12 = np.cos(q[0] + q[1])
    h12 = g2 * c12
    return np.array([[g1 * np.cos(q[0]) + h12, h12], [h12, h12]])


def linearize(params: PendulumParams) -> tuple[np.ndarray, np.ndarray]:
    """(M0, K0) of the small-oscillation model M0 qdd + K0 q = 0 at the
    stable equilibrium.

    Raises ModelError if K0 fails to be symmetric positive-definite,
    which would indicate a modeling bug.
    """
    q_eq = np.zeros(2)
    m0 = mass_matrix(params, q_eq)
    k0 = potential_hessian(params, q_eq)
    if not np.allclose(k0, k0.T, atol=1e-8):
        raise ModelError("stiffness matrix is not symmetric")
    if np.any(np.linalg.eigvalsh(k0) <= 1e-8):
        raise ModelError("stiffness matrix is not positive-definite")
    return m0, k0


def linear_modes(params: PendulumParams) -> LinearModes:
    """Frequencies and shapes of the generalized eigenproblem
    K0 v = omega^2 M0 v, ascending in omega."""
    m0, k0 = linearize(params)
    w2, vecs = scipy.linalg.eigh(k0, m0)
    order = np.argsort(w2)
    omega = np.sqrt(w2[order])
    shapes = []
    for i in order:
        v = vecs[:, i]
        v = v / np.linalg.norm(v)
        lead = v[np.nonzero(np.abs(v) > 1e-12)[0][0]]
        if lead < 0:
            v = -v
        shapes.append(v)
    return LinearModes(omega=omega, v=np.array(shapes))


def wrap_angle(x):
    """Wrap angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(x, dtype=float), 2.0 * np.pi)


def wrap_distance(q, q_ref) -> float:
    """Euclidean norm of the per-joint wrapped difference q - q_ref."""
    return float(np.linalg.norm(wrap_angle(np.asarray(q) - np.asarray(q_ref))))
