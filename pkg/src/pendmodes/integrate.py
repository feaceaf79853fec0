"""Deterministic fixed-step RK4 integration of the pendulum flow, with
optional simultaneous integration of the variational equations for the
flow Jacobian."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .dynamics import PendulumParams, State

SIM_DT = 1e-3      # closed-loop control simulation step
SHOOT_DT = 2.5e-4  # continuation / shooting step


class IntegrationBlowup(Exception):
    """Non-finite state encountered during integration."""

    def __init__(self, t: float):
        self.t = t
        super().__init__(f"integration produced a non-finite state at t = {t:.6f} s")


@dataclass
class Trajectory:
    """Fixed-step trajectory record.

    `t[k]` is exactly k * dt; `states[k]` holds (q1, q2, qd1, qd2) and
    `taus[k]` the torque applied over the step starting at t[k] (the last
    entry carries the policy evaluated at the final sample).
    """

    dt: float
    t: np.ndarray
    states: np.ndarray
    taus: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    def state(self, k: int) -> State:
        return State.from_vector(self.states[k])

    def samples(self):
        for k in range(len(self.t)):
            yield self.t[k], self.state(k), self.taus[k].copy()


@dataclass
class FlowJacobian:
    """End state and 4x4 sensitivity of the torque-free flow with respect
    to the initial state."""

    end_state: State
    jac: np.ndarray


def step(params: PendulumParams, state: State, tau, dt: float) -> State:
    """One RK4 step with zero-order-hold torque."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    tau = np.asarray(tau, dtype=float)
    a1, a2, b, g1, g2 = params.coeffs()
    x = _kernels._rk4_step(a1, a2, b, g1, g2, state.as_vector(), tau[0], tau[1], dt)
    if not np.all(np.isfinite(x)):
        raise IntegrationBlowup(dt)
    return State.from_vector(x)


def flow(
    params: PendulumParams,
    state0: State,
    torque_policy: Optional[Callable[[State, float], np.ndarray]],
    duration: float,
    dt: float,
) -> Trajectory:
    """Integrate for `duration` seconds recording every step.

    `torque_policy` maps (state, t) to a torque vector; None means
    torque-free flow (fast path).
    """
    if duration < 0.0:
        raise ValueError("duration must be non-negative")
    a1, a2, b, g1, g2 = params.coeffs()
    n = int(round(duration / dt))
    t = np.arange(n + 1) * dt
    states = np.empty((n + 1, 4))
    taus = np.zeros((n + 1, 2))
    x = state0.as_vector()
    states[0] = x

    if torque_policy is None:
        if n:
            _kernels._flow_const_record(a1, a2, b, g1, g2, x, 0.0, 0.0, dt, n, 1, states)
        if not np.all(np.isfinite(states[-1])):
            bad = np.nonzero(~np.isfinite(states).all(axis=1))[0][0]
            raise IntegrationBlowup(t[bad])
        return Trajectory(dt=dt, t=t, states=states, taus=taus)

    for k in range(n):
        tau = np.asarray(torque_policy(State.from_vector(x), t[k]), dtype=float)
        taus[k] = tau
        x = _kernels._rk4_step(a1, a2, b, g1, g2, x, tau[0], tau[1], dt)
        if not np.all(np.isfinite(x)):
            raise IntegrationBlowup(t[k + 1])
        states[k + 1] = x
    taus[n] = np.asarray(torque_policy(State.from_vector(x), t[n]), dtype=float)
    return Trajectory(dt=dt, t=t, states=states, taus=taus)


def flow_jacobian(
    params: PendulumParams, state0: State, duration: float, dt: float
) -> FlowJacobian:
    """Torque-free flow Jacobian d(state(T))/d(state(0)) via the
    variational equations integrated alongside the state.

    `dt` is the target step; the actual step is duration/n with
    n = ceil(duration/dt) so the end time is hit exactly.
    """
    if duration < 0.0:
        raise ValueError("duration must be non-negative")
    if duration == 0.0:
        return FlowJacobian(end_state=state0.copy(), jac=np.eye(4))
    a1, a2, b, g1, g2 = params.coeffs()
    n = max(1, int(np.ceil(duration / dt - 1e-12)))
    h = duration / n
    y = _kernels._flow_var(a1, a2, b, g1, g2, state0.as_vector(), h, n)
    if not np.all(np.isfinite(y)):
        raise IntegrationBlowup(duration)
    return FlowJacobian(
        end_state=State.from_vector(y[:4]), jac=y[4:].reshape(4, 4).copy()
    )


TRAJECTORY_HEADER = "t,q1,q2,qd1,qd2,tau1,tau2"


def trajectory_to_csv(traj: Trajectory, path) -> None:
    data = np.column_stack([traj.t, traj.states, traj.taus])
    with open(path, "w") as f:
        f.write(TRAJECTORY_HEADER + "\n")
        for row in data:
            f.write(",".join(f"{v:.17g}" for v in row) + "\n")


def trajectory_from_csv(path) -> Trajectory:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t = data[:, 0]
    dt = t[1] - t[0] if len(t) > 1 else 1.0
    return Trajectory(dt=float(dt), t=t, states=data[:, 1:5], taus=data[:, 5:7])
