"""Swing-up torque laws and the four-state controller.

The swing-up torque is the sum of a chart-tracking stabilizer and an
energy injector.  The stabilizer is a PD on the mismatch between the
measured state and its chart projection, premultiplied by the mass
matrix; the injector scales a sliding-mode energy law by the largest
factor that keeps the combined torque inside the per-joint limits (a
scalar linear program solved in closed form every cycle, with the sign
function smoothed by tanh).

A finite state machine sequences Bootstrap (dissipate to rest), Start
(one-step kick along the linear mode shape), SwingUp, and Hold (gravity-
compensated PD at upright with damping matched through matrix square
roots).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    PendulumParams,
    State,
    energy,
    gravity,
    linear_modes,
    mass_matrix,
    potential,
    wrap_angle,
)
from .manifold import DegeneratePhase, ManifoldChart, ProjectionFlags
from .manifold import phase as modal_phase

Q_DES = np.array([np.pi, 0.0])


class MatrixSqrtFailure(Exception):
    pass


class ControllerPhase(enum.Enum):
    BOOTSTRAP = "bootstrap"
    START = "start"
    SWINGUP = "swingup"
    HOLD = "hold"


class FailureReason(enum.Enum):
    MANIFOLD_DISTANCE = "manifold_distance"
    ENERGY_DROP = "energy_drop"
    ENERGY_STAGNATION = "energy_stagnation"
    TIMEOUT = "timeout"
    BLOWUP = "blowup"


@dataclass
class ControllerConfig:
    """Gains, limits, and thresholds of the swing-up controller."""

    mode_index: int
    tau_max: np.ndarray          # per-joint torque limit [N*m]
    e_des: float                 # energy target [J]
    q_crit: np.ndarray           # critical turning point [rad]
    k_p: float = 9.0             # chart stabilizer stiffness [1/s^2]
    k_r: np.ndarray = field(default_factory=lambda: np.diag([2.0, 2.0]))
    zeta_r: float = 1.0
    d_bs: np.ndarray = field(default_factory=lambda: np.diag([0.5, 0.5]))
    beta: float = 0.01           # start-kick scale
    delta_e: float = 0.02        # hold handover energy slack [J]
    delta_v: float = 0.05        # hold handover speed gate [rad/s]
    capture_scale: float = 1.5   # capture radius / |q_crit - q_des|
    hold_gravity_margin: float = 1.0
    fail_dist: float = 1.0       # manifold distance threshold (mixed units)
    fail_dist_window: float = 0.5    # [s] sustained
    fail_drop: float = 0.5           # [J] energy drop ...
    fail_drop_window: float = 0.1    # ... within this window [s]
    fail_stall: float = 0.01         # [J] minimum progress ...
    fail_stall_window: float = 20.0  # ... over this window [s]
    dt: float = 1e-3
    max_sim_time: float = 400.0

    def __post_init__(self):
        self.tau_max = np.asarray(self.tau_max, dtype=float).reshape(2)
        self.q_crit = np.asarray(self.q_crit, dtype=float).reshape(2)
        self.k_r = np.asarray(self.k_r, dtype=float).reshape(2, 2)
        self.d_bs = np.asarray(self.d_bs, dtype=float).reshape(2, 2)
        if np.any(self.tau_max <= 0.0):
            raise ValueError("tau_max must be positive componentwise")

    @property
    def k_d(self) -> float:
        return 2.0 * np.sqrt(self.k_p)

    @property
    def capture_radius(self) -> float:
        return self.capture_scale * float(
            np.linalg.norm(wrap_angle(self.q_crit - Q_DES))
        )

    def to_dict(self) -> dict:
        return {
            "mode_index": self.mode_index,
            "tau_max": list(self.tau_max),
            "e_des": self.e_des,
            "q_crit": list(self.q_crit),
            "k_p": self.k_p,
            "k_r": [list(r) for r in self.k_r],
            "zeta_r": self.zeta_r,
            "d_bs": [list(r) for r in self.d_bs],
            "beta": self.beta,
            "delta_e": self.delta_e,
            "delta_v": self.delta_v,
            "capture_scale": self.capture_scale,
            "hold_gravity_margin": self.hold_gravity_margin,
            "fail_dist": self.fail_dist,
            "fail_dist_window": self.fail_dist_window,
            "fail_drop": self.fail_drop,
            "fail_drop_window": self.fail_drop_window,
            "fail_stall": self.fail_stall,
            "fail_stall_window": self.fail_stall_window,
            "dt": self.dt,
            "max_sim_time": self.max_sim_time,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ControllerConfig":
        d = dict(d)
        for k in ("tau_max", "q_crit", "k_r", "d_bs"):
            if k in d:
                d[k] = np.array(d[k], dtype=float)
        return cls(**d)


def spd_sqrt(a: np.ndarray) -> np.ndarray:
    """Principal square root of a symmetric positive-definite 2x2 matrix
    via X^1/2 = (X + sqrt(det X) I) / sqrt(tr X + 2 sqrt(det X))."""
    a = np.asarray(a, dtype=float)
    if abs(a[0, 1] - a[1, 0]) > 1e-10:
        raise MatrixSqrtFailure("matrix is not symmetric")
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    tr = a[0, 0] + a[1, 1]
    if det <= 0.0 or tr <= 0.0:
        raise MatrixSqrtFailure("matrix is not positive-definite")
    s = np.sqrt(det)
    return (a + s * np.eye(2)) / np.sqrt(tr + 2.0 * s)


def clamp(tau, tau_max) -> np.ndarray:
    return np.clip(tau, -tau_max, tau_max)


def tau_manifold(params: PendulumParams, chart: ManifoldChart, state: State, k_p: float):
    """Chart-tracking stabilizer M(q) [-k_p (q - q_d) - k_d (qd - qd_d)];
    zero (flagged) when the chart projection is degenerate."""
    q_d, qd_d, flags = chart.nearest(state)
    if flags.degenerate:
        return np.zeros(2), flags
    k_d = 2.0 * np.sqrt(k_p)
    err_q = wrap_angle(state.q - q_d)
    err_qd = state.qd - qd_d
    tau = mass_matrix(params, state.q) @ (-k_p * err_q - k_d * err_qd)
    return tau, flags


def tau_bar(params: PendulumParams, state: State, e_des: float) -> np.ndarray:
    """Unconstrained sliding-mode energy law sign(e_des - E) M qd."""
    return np.sign(e_des - energy(params, state)) * (
        mass_matrix(params, state.q) @ state.qd
    )


def alpha_opt(tau_m, tau_bar_vec, tau_max) -> float:
    """Largest alpha with |tau_m + alpha * tau_bar| <= tau_max.

    Solved in closed form: rows of [tau_bar; -tau_bar] alpha <=
    [tau_max - tau_m; tau_max + tau_m] with positive coefficients bound
    alpha from above; the smallest such bound wins.  If tau_m already
    saturates any joint the answer is 0, as is the unbounded tau_bar = 0
    case.
    """
    tau_m = np.asarray(tau_m, dtype=float)
    tau_bar_vec = np.asarray(tau_bar_vec, dtype=float)
    tau_max = np.asarray(tau_max, dtype=float)
    if np.any(np.abs(tau_m) > tau_max):
        return 0.0
    x = np.concatenate([tau_bar_vec, -tau_bar_vec])
    y = np.concatenate([tau_max - tau_m, tau_max + tau_m])
    pos = x > 0.0
    if not np.any(pos):
        return 0.0
    return float(np.min(y[pos] / x[pos]))


def tau_energy(params: PendulumParams, state: State, tau_m, e_des: float, tau_max):
    """Saturating energy injector alpha_opt tanh(e_des - E) M qd."""
    bar = tau_bar(params, state, e_des)
    alpha = alpha_opt(tau_m, bar, tau_max)
    gap = e_des - energy(params, state)
    tau = alpha * np.tanh(gap) * (mass_matrix(params, state.q) @ state.qd)
    return tau, alpha


def tau_bootstrap(state: State, d_bs, tau_max) -> np.ndarray:
    """Artificial joint friction -D_bs qd, clamped."""
    return clamp(-np.asarray(d_bs) @ state.qd, np.asarray(tau_max, dtype=float))


def tau_start(params: PendulumParams, q, v_mode, beta: float) -> np.ndarray:
    """One-step kick beta M(q) v along the linear mode shape."""
    return beta * (mass_matrix(params, q) @ v_mode)


def tau_hold(params: PendulumParams, state: State, q_des, k_r, zeta_r: float, tau_max):
    """Gravity-compensated PD at the upright position with damping
    D = zeta (K^1/2 M^1/2 + M^1/2 K^1/2), clamped."""
    k_r = np.asarray(k_r, dtype=float)
    m_sqrt = spd_sqrt(mass_matrix(params, state.q))
    k_sqrt = spd_sqrt(k_r)
    d_r = zeta_r * (k_sqrt @ m_sqrt + m_sqrt @ k_sqrt)
    err = wrap_angle(state.q - np.asarray(q_des, dtype=float))
    tau = -k_r @ err - d_r @ state.qd + gravity(params, state.q)
    return clamp(tau, np.asarray(tau_max, dtype=float))


@dataclass
class StepInfo:
    """Per-step telemetry emitted by the state machine."""

    phase: ControllerPhase
    tau: np.ndarray
    tau_m: np.ndarray
    alpha: float
    e: float
    phi: float
    failure: FailureReason | None = None


class ControllerContext:
    """Mutable controller state advanced once per simulation step."""

    def __init__(self, params: PendulumParams, chart: ManifoldChart, config: ControllerConfig):
        if chart.mode_index != config.mode_index:
            raise ValueError("chart/config mode mismatch")
        self.params = params
        self.chart = chart
        self.config = config
        self.v_mode = linear_modes(params).v[config.mode_index - 1]
        self.phase = ControllerPhase.START
        self.phase_entered = {self.phase: 0.0}
        self.failures: list[tuple[float, FailureReason]] = []
        self._dist_exceed_since: float | None = None
        n_drop = max(1, int(round(config.fail_drop_window / config.dt)))
        n_stall = max(1, int(round(config.fail_stall_window / config.dt)))
        self._e_hist = np.full(n_stall + 1, np.nan)
        self._n_drop = n_drop
        self._hist_idx = 0

    def start_from(self, state: State) -> None:
        """Pick the initial phase: Start at rest near the equilibrium,
        Bootstrap anywhere else."""
        e = energy(self.params, state)
        at_rest = e < 1e-4 and np.linalg.norm(state.qd) < 1e-3
        self.phase = ControllerPhase.START if at_rest else ControllerPhase.BOOTSTRAP
        self.phase_entered = {self.phase: 0.0}

    def _enter(self, phase: ControllerPhase, t: float) -> None:
        self.phase = phase
        self.phase_entered[phase] = t
        self._dist_exceed_since = None
        self._e_hist[:] = np.nan
        self._hist_idx = 0

    def _detect_failure(self, state: State, e: float, t: float, q_d, qd_d, flags):
        cfg = self.config
        if not flags.degenerate:
            dist = np.sqrt(
                np.linalg.norm(wrap_angle(state.q - q_d)) ** 2
                + np.linalg.norm(state.qd - qd_d) ** 2
            )
            if dist > cfg.fail_dist:
                if self._dist_exceed_since is None:
                    self._dist_exceed_since = t
                elif t - self._dist_exceed_since >= cfg.fail_dist_window:
                    return FailureReason.MANIFOLD_DISTANCE
            else:
                self._dist_exceed_since = None
        hist = self._e_hist
        idx = self._hist_idx
        hist[idx % len(hist)] = e
        self._hist_idx += 1
        if e < cfg.e_des - cfg.delta_e:
            drop_ref = hist[(idx - self._n_drop) % len(hist)]
            if np.isfinite(drop_ref) and drop_ref - e > cfg.fail_drop:
                return FailureReason.ENERGY_DROP
            stall_ref = hist[(idx + 1) % len(hist)]  # oldest entry
            if np.isfinite(stall_ref) and e - stall_ref < cfg.fail_stall:
                return FailureReason.ENERGY_STAGNATION
        return None


def step_state_machine(ctx: ControllerContext, state: State, t: float) -> StepInfo:
    """Evaluate the active control law, apply transitions, and return the
    clamped torque with telemetry."""
    cfg = ctx.config
    params = ctx.params
    m = mass_matrix(params, state.q)
    e = 0.5 * float(state.qd @ m @ state.qd) + potential(params, state.q)
    try:
        phi = modal_phase(state)
        degenerate = False
    except DegeneratePhase:
        phi = 0.0
        degenerate = True
    tau_m = np.zeros(2)
    alpha = 0.0
    failure = None

    if ctx.phase is ControllerPhase.BOOTSTRAP:
        tau = tau_bootstrap(state, cfg.d_bs, cfg.tau_max)
        if e < 1e-4 and np.linalg.norm(state.qd) < 1e-3:
            ctx._enter(ControllerPhase.START, t)
    elif ctx.phase is ControllerPhase.START:
        tau = clamp(tau_start(params, state.q, ctx.v_mode, cfg.beta), cfg.tau_max)
        ctx._enter(ControllerPhase.SWINGUP, t)
    elif ctx.phase is ControllerPhase.SWINGUP:
        if degenerate:
            q_d, qd_d = state.q, state.qd
            flags = ProjectionFlags(degenerate=True)
        else:
            q_d, qd_d, flags = ctx.chart.project_ex(e, phi, clamp_hard=True)
            tau_m = m @ (
                -cfg.k_p * wrap_angle(state.q - q_d) - cfg.k_d * (state.qd - qd_d)
            )
        mqd = m @ state.qd
        bar = np.sign(cfg.e_des - e) * mqd
        alpha = alpha_opt(tau_m, bar, cfg.tau_max)
        tau = clamp(tau_m + alpha * np.tanh(cfg.e_des - e) * mqd, cfg.tau_max)
        failure = ctx._detect_failure(state, e, t, q_d, qd_d, flags)
        if failure is not None:
            ctx.failures.append((t, failure))
            ctx._enter(ControllerPhase.BOOTSTRAP, t)
        elif (
            e >= cfg.e_des - cfg.delta_e
            and np.linalg.norm(state.qd) <= cfg.delta_v
            and np.linalg.norm(wrap_angle(state.q - Q_DES)) <= cfg.capture_radius
            and np.max(np.abs(gravity(params, state.q)))
            <= cfg.hold_gravity_margin * np.min(cfg.tau_max)
        ):
            ctx._enter(ControllerPhase.HOLD, t)
    else:  # HOLD
        tau = tau_hold(params, state, Q_DES, cfg.k_r, cfg.zeta_r, cfg.tau_max)

    if np.any(np.abs(tau) > cfg.tau_max + 1e-12):
        raise AssertionError(f"torque limit violated at t = {t:.3f} s: {tau}")
    return StepInfo(
        phase=ctx.phase, tau=tau, tau_m=tau_m, alpha=alpha, e=e, phi=phi, failure=failure
    )
