"""Experiment orchestration: single swing-up runs, the torque-limit
sweep, and file export/import for every artifact."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .control import (
    ControllerConfig,
    ControllerContext,
    ControllerPhase,
    FailureReason,
    Q_DES,
    step_state_machine,
)
from .dynamics import PendulumParams, State, wrap_angle
from .integrate import Trajectory, trajectory_from_csv, trajectory_to_csv
from .manifold import ManifoldChart, build_chart
from .modal import ModeFamily, continue_mode, critical_energy, holdable_energy
from .dynamics import max_potential_energy

TAU_G_HAT = 6.49  # reference gravitational torque for percentage columns [N*m]
HOLD_MARGIN = 0.9  # energy-target gravity reserve at the turning points
FAMILY_CEILING_GAP = 2e-5  # continuation stops this far below the potential maximum

SUCCESS_SPEED = 1e-3  # [rad/s]
SUCCESS_DIST = 1e-3   # [rad]

PHASE_CODE = {
    ControllerPhase.BOOTSTRAP: 0,
    ControllerPhase.START: 1,
    ControllerPhase.SWINGUP: 2,
    ControllerPhase.HOLD: 3,
}


class SimBlowup(Exception):
    def __init__(self, t: float):
        self.t = t
        super().__init__(f"simulation blew up at t = {t:.3f} s")


@dataclass
class ExperimentResult:
    """Outcome of one closed-loop swing-up run."""

    config: ControllerConfig
    success: bool
    t_hold: float | None
    t_end: float | None
    failure_reason: str | None
    trajectory: Trajectory
    e_trace: np.ndarray
    phi_trace: np.ndarray
    tau_m_trace: np.ndarray
    alpha_trace: np.ndarray
    phase_trace: np.ndarray  # int codes per PHASE_CODE


@dataclass
class SweepRow:
    tau_max: float
    percent: float
    q_crit1_deg: float
    t_end: dict[int, float | None] = field(default_factory=dict)
    failure: dict[int, str | None] = field(default_factory=dict)


@dataclass
class SweepTable:
    rows: list[SweepRow]

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("tau_max,percent_tau_g_hat,q_crit1_deg,t_end_mode1,t_end_mode2\n")
            for r in self.rows:
                cells = []
                for m in (1, 2):
                    t = r.t_end.get(m)
                    cells.append(f"{t:.3f}" if t is not None else "FAIL")
                f.write(
                    f"{r.tau_max:.17g},{r.percent:.2f},{r.q_crit1_deg:.4f},"
                    f"{cells[0]},{cells[1]}\n"
                )

    def to_text(self) -> str:
        lines = [
            f"{'tau_max':>8} {'% of ref':>9} {'q_crit1':>9} {'mode 1':>12} {'mode 2':>12}"
        ]
        for r in self.rows:
            cells = []
            for m in (1, 2):
                t = r.t_end.get(m)
                if t is not None:
                    cells.append(f"{t:10.2f} s")
                else:
                    reason = r.failure.get(m) or "fail"
                    cells.append(f"x ({reason[:8]})")
            lines.append(
                f"{r.tau_max:8.2f} {r.percent:8.1f}% {r.q_crit1_deg:8.2f}deg "
                f"{cells[0]:>12} {cells[1]:>12}"
            )
        return "\n".join(lines)


def make_controller_config(
    params: PendulumParams,
    family: ModeFamily,
    tau_max: float,
    overrides: dict | None = None,
) -> ControllerConfig:
    """Controller configuration for one torque limit and mode: the energy
    target comes from the holdable-orbit bound, the capture geometry from
    the critical turning point."""
    _, q_crit = critical_energy(params, family, tau_max)
    e_des, _ = holdable_energy(params, family, tau_max, margin=HOLD_MARGIN)
    cfg = ControllerConfig(
        mode_index=family.mode_index,
        tau_max=np.array([tau_max, tau_max]),
        e_des=e_des,
        q_crit=q_crit,
    )
    if overrides:
        d = cfg.to_dict()
        d.update(overrides)
        cfg = ControllerConfig.from_dict(d)
    return cfg


def run_experiment(
    config: ControllerConfig,
    chart: ManifoldChart,
    initial_state: State | None = None,
) -> ExperimentResult:
    """Closed-loop simulation until the success criterion or the time
    budget runs out.  Starts at the stable equilibrium by default."""
    params = chart.params
    ctx = ControllerContext(params, chart, config)
    state = initial_state.copy() if initial_state else State(np.zeros(2), np.zeros(2))
    ctx.start_from(state)

    dt = config.dt
    n_max = int(round(config.max_sim_time / dt))
    t_arr = np.arange(n_max + 1) * dt
    states = np.empty((n_max + 1, 4))
    taus = np.zeros((n_max + 1, 2))
    tau_m = np.zeros((n_max + 1, 2))
    alpha = np.zeros(n_max + 1)
    e_tr = np.zeros(n_max + 1)
    phi_tr = np.zeros(n_max + 1)
    ph_tr = np.zeros(n_max + 1, dtype=np.int8)

    a1, a2, b, g1, g2 = params.coeffs()
    x = state.as_vector()
    t_hold = None
    t_end = None
    k = 0
    for k in range(n_max + 1):
        states[k] = x
        state = State.from_vector(x)
        info = step_state_machine(ctx, state, t_arr[k])
        taus[k] = info.tau
        tau_m[k] = info.tau_m
        alpha[k] = info.alpha
        e_tr[k] = info.e
        phi_tr[k] = info.phi
        ph_tr[k] = PHASE_CODE[info.phase]
        if t_hold is None and info.phase is ControllerPhase.HOLD:
            t_hold = float(t_arr[k])
        if (
            np.linalg.norm(x[2:]) < SUCCESS_SPEED
            and np.linalg.norm(wrap_angle(x[:2] - Q_DES)) < SUCCESS_DIST
        ):
            t_end = float(t_arr[k])
            break
        if k == n_max:
            break
        x = _kernels._rk4_step(a1, a2, b, g1, g2, x, info.tau[0], info.tau[1], dt)
        if not np.all(np.isfinite(x)):
            raise SimBlowup(float(t_arr[k + 1]))

    n = k + 1
    success = t_end is not None
    failure_reason = None
    if not success:
        failure_reason = (
            ctx.failures[-1][1].value if ctx.failures else FailureReason.TIMEOUT.value
        )
    traj = Trajectory(dt=dt, t=t_arr[:n].copy(), states=states[:n], taus=taus[:n])
    return ExperimentResult(
        config=config,
        success=success,
        t_hold=t_hold,
        t_end=t_end,
        failure_reason=failure_reason,
        trajectory=traj,
        e_trace=e_tr[:n],
        phi_trace=phi_tr[:n],
        tau_m_trace=tau_m[:n],
        alpha_trace=alpha[:n],
        phase_trace=ph_tr[:n],
    )


def _sweep_cell(args):
    chart_path, family_path, tau, mode, overrides, out_dir = args
    chart = ManifoldChart.load(chart_path)
    family = ModeFamily.from_dir(family_path)
    config = make_controller_config(chart.params, family, tau, overrides)
    result = run_experiment(config, chart)
    if out_dir is not None:
        cell_dir = Path(out_dir) / f"tau_{tau:g}_mode_{mode}"
        export_result(result, cell_dir)
    return (
        tau,
        mode,
        result.t_end if result.success else None,
        result.failure_reason,
        float(np.degrees(config.q_crit[0])),
    )


def run_sweep(
    chart_paths: dict[int, str],
    family_paths: dict[int, str],
    tau_list,
    modes=(1, 2),
    overrides: dict | None = None,
    out_dir=None,
    workers: int | None = None,
) -> SweepTable:
    """One swing-up run per (torque limit, mode) cell, in parallel
    worker processes; failures are recorded, never raised."""
    cells = [
        (chart_paths[m], family_paths[m], float(tau), m, overrides, out_dir)
        for tau in tau_list
        for m in modes
    ]
    rows = {float(tau): SweepRow(
        tau_max=float(tau), percent=float(tau) / TAU_G_HAT * 100.0, q_crit1_deg=0.0
    ) for tau in tau_list}
    if workers is None or workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_sweep_cell, cells))
    else:
        outcomes = [_sweep_cell(c) for c in cells]
    for tau, mode, t_end, reason, q_crit_deg in outcomes:
        row = rows[tau]
        row.t_end[mode] = t_end
        row.failure[mode] = None if t_end is not None else reason
        if mode == 1:
            row.q_crit1_deg = q_crit_deg
    return SweepTable(rows=[rows[float(t)] for t in tau_list])


# -- persistence ------------------------------------------------------------

def export_result(result: ExperimentResult, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    trajectory_to_csv(result.trajectory, path / "trajectory.csv")
    metrics = np.column_stack(
        [
            result.trajectory.t,
            result.e_trace,
            result.phi_trace,
            result.tau_m_trace,
            result.alpha_trace,
            result.phase_trace,
        ]
    )
    with open(path / "metrics.csv", "w") as f:
        f.write("t,e,phi,tau_m1,tau_m2,alpha,phase\n")
        for row in metrics:
            f.write(",".join(f"{v:.17g}" for v in row) + "\n")
    summary = {
        "schema_version": 1,
        "config": result.config.to_dict(),
        "success": result.success,
        "t_hold": result.t_hold,
        "t_end": result.t_end,
        "failure_reason": result.failure_reason,
    }
    with open(path / "result.json", "w") as f:
        json.dump(summary, f, indent=1)


def load_result_summary(path) -> dict:
    with open(Path(path) / "result.json") as f:
        return json.load(f)


def export_multiplier_grid(records, path) -> None:
    with open(path, "w") as f:
        f.write("energy,mag1,mag2,mag3,mag4\n")
        for r in records:
            f.write(
                f"{r.energy:.17g},"
                + ",".join(f"{m:.17g}" for m in r.magnitudes)
                + "\n"
            )


def load_multiplier_grid(path) -> list[tuple[float, np.ndarray]]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return [(row[0], row[1:5]) for row in data]


def compute_family(
    params: PendulumParams, mode_index: int, ceiling_gap: float = FAMILY_CEILING_GAP
) -> ModeFamily:
    """Continuation with the harness default ceiling (high enough for the
    weakest torque limits in the sweep)."""
    ceiling = max_potential_energy(params) - ceiling_gap
    return continue_mode(params, mode_index, energy_ceiling=ceiling)


def default_harness_config() -> dict:
    """Defaults emitted by `pendmodes config --default`."""
    params = PendulumParams()
    return {
        "schema_version": 1,
        "params": params.to_dict(),
        "family_ceiling_gap": FAMILY_CEILING_GAP,
        "chart_samples_per_orbit": 400,
        "controller": {
            "k_p": ControllerConfig(
                mode_index=1, tau_max=[1.0, 1.0], e_des=0.0, q_crit=[np.pi, 0.0]
            ).k_p,
            "hold_margin": HOLD_MARGIN,
            "dt": 1e-3,
            "max_sim_time": 400.0,
        },
        "sweep_tau_list": [0.5, 0.3, 0.2, 0.1, 0.05, 0.02],
    }
