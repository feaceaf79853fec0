"""Brake-orbit families of the double pendulum.

Each mode is computed by numerical continuation in energy: starting from
the linear mode at a tiny energy, a Newton shooting step adjusts the
turning point and half period so that all velocities vanish after half a
period and the turning point sits on the requested energy level.  The
Newton system uses the integrated flow Jacobian for the velocity
residuals and the gravity vector for the energy residual.

The full period is assembled from the integrated first half by time
reflection: the torque-free dynamics are reversible, so a trajectory
started at a zero-velocity configuration retraces itself exactly with
negated velocities.  This keeps near-ceiling orbits (whose monodromy
amplifies float noise by many orders of magnitude) well defined.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .dynamics import (
    PendulumParams,
    State,
    gravity,
    linear_modes,
    linearize,
    max_potential_energy,
    potential,
)
from .integrate import SHOOT_DT, Trajectory, trajectory_from_csv, trajectory_to_csv

FAMILY_SCHEMA_VERSION = 1


class NoConvergence(Exception):
    def __init__(self, residual: float, iters: int):
        self.best_residual = residual
        self.iters = iters
        super().__init__(
            f"shooting did not converge ({iters} iterations, best residual {residual:.3e})"
        )


class SpuriousTurningPoint(Exception):
    """The converged orbit has more than two turning points (branch jump)."""


class ContinuationStalled(Exception):
    pass


class NeverUnstable(Exception):
    pass


class Unreachable(Exception):
    """No generator point satisfies the critical-energy condition."""


@dataclass
class BrakeOrbit:
    """One periodic brake orbit: two zero-velocity turning points, a
    period, and dense samples over one period starting at turn_a."""

    energy: float
    turn_a: np.ndarray
    turn_b: np.ndarray
    period: float
    samples: Trajectory
    residual: float = 0.0
    newton_iters: int = 0

    @property
    def half_period(self) -> float:
        return 0.5 * self.period


@dataclass
class MultiplierRecord:
    """Magnitudes of the four characteristic multipliers at one energy,
    sorted descending; `eigenvalues` keeps the raw spectrum."""

    energy: float
    magnitudes: np.ndarray
    eigenvalues: np.ndarray


@dataclass
class ContinuationControls:
    e_start: float = 1e-4
    de_init: float = 1e-3
    de_max: float = 0.15
    de_floor: float = 1e-5
    grow: float = 2.0
    shrink: float = 0.5
    easy_iters: int = 5
    dt: float = SHOOT_DT
    samples_per_orbit: int = 800  # even; full-period sample count


@dataclass
class ModeFamily:
    """Energy-ordered collection of brake orbits of one mode with the
    piecewise-linear generator curves E -> turning point."""

    mode_index: int
    params: PendulumParams
    orbits: list[BrakeOrbit]
    energies: np.ndarray = field(init=False)
    periods: np.ndarray = field(init=False)
    turns_a: np.ndarray = field(init=False)
    turns_b: np.ndarray = field(init=False)

    def __post_init__(self):
        self.energies = np.array([o.energy for o in self.orbits])
        self.periods = np.array([o.period for o in self.orbits])
        self.turns_a = np.array([o.turn_a for o in self.orbits])
        self.turns_b = np.array([o.turn_b for o in self.orbits])

    def generator_plus(self, e: float) -> np.ndarray:
        return np.array(
            [np.interp(e, self.energies, self.turns_a[:, j]) for j in range(2)]
        )

    def generator_minus(self, e: float) -> np.ndarray:
        return np.array(
            [np.interp(e, self.energies, self.turns_b[:, j]) for j in range(2)]
        )

    def period_at(self, e: float) -> float:
        return float(np.interp(e, self.energies, self.periods))

    def to_dir(self, path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        index = {
            "schema_version": FAMILY_SCHEMA_VERSION,
            "mode_index": self.mode_index,
            "params": self.params.to_dict(),
            "orbits": [],
        }
        for i, orb in enumerate(self.orbits):
            ref = f"orbit_{i:04d}.csv"
            index["orbits"].append(
                {
                    "energy": orb.energy,
                    "period": orb.period,
                    "turn_a": list(orb.turn_a),
                    "turn_b": list(orb.turn_b),
                    "samples_ref": ref,
                }
            )
            trajectory_to_csv(orb.samples, path / ref)
        with open(path / "family.json", "w") as f:
            json.dump(index, f, indent=1)

    @classmethod
    def from_dir(cls, path) -> "ModeFamily":
        path = Path(path)
        with open(path / "family.json") as f:
            index = json.load(f)
        if index["schema_version"] != FAMILY_SCHEMA_VERSION:
            raise ValueError(f"unsupported family schema {index['schema_version']}")
        orbits = [
            BrakeOrbit(
                energy=rec["energy"],
                turn_a=np.array(rec["turn_a"]),
                turn_b=np.array(rec["turn_b"]),
                period=rec["period"],
                samples=trajectory_from_csv(path / rec["samples_ref"]),
            )
            for rec in index["orbits"]
        ]
        return cls(
            mode_index=index["mode_index"],
            params=PendulumParams.from_dict(index["params"]),
            orbits=orbits,
        )


def _shoot(coeffs, turn, t_end, dt):
    a1, a2, b, g1, g2 = coeffs
    n = max(1, int(np.ceil(t_end / dt - 1e-12)))
    h = t_end / n
    x0 = np.array([turn[0], turn[1], 0.0, 0.0])
    return _kernels._flow_const(a1, a2, b, g1, g2, x0, 0.0, 0.0, h, n)


def _residual(coeffs, turn, t_end, target_energy, params, dt, symmetric):
    """Shooting residual.

    symmetric=True: t_end is a quarter period and the residual demands
    q(T/4) = 0 (the odd-symmetric family crosses the origin there).
    symmetric=False: t_end is a half period and the residual demands
    q̇(T/2) = 0.  Both carry the turning-point energy mismatch as the
    third component.
    """
    x_end = _shoot(coeffs, turn, t_end, dt)
    dv = potential(params, turn) - target_energy
    if symmetric:
        r = np.array([x_end[0], x_end[1], dv])
    else:
        r = np.array([x_end[2], x_end[3], dv])
    return r, x_end


def _residual_and_jacobian(coeffs, turn, t_end, target_energy, params, dt, symmetric):
    a1, a2, b, g1, g2 = coeffs
    n = max(1, int(np.ceil(t_end / dt - 1e-12)))
    h = t_end / n
    x0 = np.array([turn[0], turn[1], 0.0, 0.0])
    y = _kernels._flow_var(a1, a2, b, g1, g2, x0, h, n)
    x_end = y[:4]
    phi = y[4:].reshape(4, 4)
    dv = potential(params, turn) - target_energy
    grad_v = gravity(params, turn)
    if symmetric:
        r = np.array([x_end[0], x_end[1], dv])
        jac = np.array(
            [
                [phi[0, 0], phi[0, 1], x_end[2]],
                [phi[1, 0], phi[1, 1], x_end[3]],
                [grad_v[0], grad_v[1], 0.0],
            ]
        )
    else:
        qdd1, qdd2 = _kernels._accel(
            a1, a2, b, g1, g2, x_end[0], x_end[1], x_end[2], x_end[3], 0.0, 0.0
        )
        r = np.array([x_end[2], x_end[3], dv])
        jac = np.array(
            [
                [phi[2, 0], phi[2, 1], qdd1],
                [phi[3, 0], phi[3, 1], qdd2],
                [grad_v[0], grad_v[1], 0.0],
            ]
        )
    return r, jac, x_end


def _turning_reversals(states: np.ndarray) -> int:
    """Number of velocity-direction reversals over one period (circular).

    At a genuine turning point the trajectory retraces itself, so the
    velocity direction flips by ~180 deg across the zero crossing; slow
    near-saddle crawls of winding orbits keep their direction and are not
    counted.  A clean brake orbit has exactly two reversals.
    """
    vel = states[:-1, 2:]  # drop the duplicated endpoint
    speed = np.linalg.norm(vel, axis=1)
    defined = speed > 1e-3 * speed.max()
    dirs = vel[defined] / speed[defined, None]
    if len(dirs) < 2:
        return 0
    dots = np.sum(dirs * np.roll(dirs, -1, axis=0), axis=1)
    return int(np.sum(dots < -0.5))


def _assemble_from_half(rec: np.ndarray, half_period: float) -> Trajectory:
    """Extend integrated half-period samples to a full period by time
    reflection about the far turning point (exact for the reversible
    torque-free flow)."""
    n_half = len(rec) - 1
    n_total = 2 * n_half
    states = np.empty((n_total + 1, 4))
    states[: n_half + 1] = rec
    for k in range(n_half + 1, n_total + 1):
        mirror = rec[n_total - k]
        states[k, 0] = mirror[0]
        states[k, 1] = mirror[1]
        states[k, 2] = -mirror[2]
        states[k, 3] = -mirror[3]
    dt_rec = 2.0 * half_period / n_total
    t = np.arange(n_total + 1) * dt_rec
    return Trajectory(dt=dt_rec, t=t, states=states, taus=np.zeros((n_total + 1, 2)))


def _assemble_samples(
    params: PendulumParams,
    turn: np.ndarray,
    t_end: float,
    n_total: int,
    dt: float,
    symmetric: bool,
) -> Trajectory:
    """Dense samples over one period from the integrated shooting segment
    (quarter period if symmetric, else half), completed by the odd and
    time-reflection symmetries of the family."""
    a1, a2, b, g1, g2 = params.coeffs()
    n_seg = n_total // 4 if symmetric else n_total // 2
    m = max(1, int(np.ceil(t_end / n_seg / dt - 1e-12)))
    h = t_end / (n_seg * m)
    rec = np.empty((n_seg + 1, 4))
    x0 = np.array([turn[0], turn[1], 0.0, 0.0])
    _kernels._flow_const_record(a1, a2, b, g1, g2, x0, 0.0, 0.0, h, n_seg * m, m, rec)
    if not symmetric:
        return _assemble_from_half(rec, t_end)
    # odd symmetry: x(T/2 - s) = (-q(s), qd(s))
    n_half = 2 * n_seg
    half = np.empty((n_half + 1, 4))
    half[: n_seg + 1] = rec
    for k in range(n_seg + 1, n_half + 1):
        src = rec[n_half - k]
        half[k, 0] = -src[0]
        half[k, 1] = -src[1]
        half[k, 2] = src[2]
        half[k, 3] = src[3]
    return _assemble_from_half(half, 2.0 * t_end)


def find_brake_orbit(
    params: PendulumParams,
    guess_turn,
    guess_half_period: float,
    target_energy: float,
    dt: float = SHOOT_DT,
    tol: float = 1e-9,
    max_iters: int = 25,
    samples_per_orbit: int = 800,
    symmetric: bool = True,
) -> BrakeOrbit:
    """Newton shooting for a brake orbit at the requested energy.

    Unknowns are the turning point (2) and a fraction of the period (1);
    the third residual is always the potential-energy mismatch at the
    turning point.  With symmetric=True the time unknown is the quarter
    period and the matching condition is the origin crossing q(T/4) = 0,
    which exploits the odd symmetry of the families; with symmetric=False
    the time unknown is the half period and the condition is the plain
    zero-velocity residual q̇(T/2) = 0.  The symmetric form is the
    default: near the potential ceiling the half-period residual passes
    the saddle twice and its float noise floor (flow amplification times
    machine epsilon on the turning point) rises far above any usable
    tolerance, while the quarter-period residual amplifies only once.

    The convergence test accepts the iterate once the residual is below
    `tol` or below the estimated noise floor of the shot, whichever is
    larger; the achieved value is recorded on the returned orbit.
    """
    coeffs = params.coeffs()
    turn = np.asarray(guess_turn, dtype=float).copy()
    t_end = float(guess_half_period) * (0.5 if symmetric else 1.0)
    r, jac, _ = _residual_and_jacobian(
        coeffs, turn, t_end, target_energy, params, dt, symmetric
    )
    best = np.linalg.norm(r)
    iters = 0

    def floor_estimate() -> float:
        amp = np.max(np.abs(jac[:2, :2]))
        return 20.0 * amp * np.max(np.abs(turn)) * np.finfo(float).eps

    while np.linalg.norm(r) >= max(tol, floor_estimate()):
        if iters >= max_iters:
            raise NoConvergence(best, iters)
        delta = np.linalg.solve(jac, -r)
        lam = 1.0
        r_norm = np.linalg.norm(r)
        for _ in range(14):
            turn_try = turn + lam * delta[:2]
            te_try = t_end + lam * delta[2]
            if te_try > 0.1 * t_end:
                r_try, _ = _residual(
                    coeffs, turn_try, te_try, target_energy, params, dt, symmetric
                )
                if np.linalg.norm(r_try) < r_norm:
                    break
            lam *= 0.5
        else:
            raise NoConvergence(best, iters)
        turn, t_end = turn_try, te_try
        iters += 1
        r, jac, _ = _residual_and_jacobian(
            coeffs, turn, t_end, target_energy, params, dt, symmetric
        )
        best = min(best, float(np.linalg.norm(r)))

    half_period = 2.0 * t_end if symmetric else t_end
    samples = _assemble_samples(
        params, turn, t_end, samples_per_orbit, dt, symmetric
    )
    reversals = _turning_reversals(samples.states)
    if reversals != 2:
        raise SpuriousTurningPoint(
            f"orbit at E = {target_energy:.4f} J has {reversals} velocity reversals"
        )
    turn_b = samples.states[samples_per_orbit // 2, :2].copy()
    odd_err = np.max(np.abs(turn + turn_b))
    if odd_err > 1e-4 * max(1.0, np.max(np.abs(turn))):
        # the mode families of this system are odd-symmetric; anything
        # else is a subsidiary branch picked up by a too-large step
        raise SpuriousTurningPoint(
            f"asymmetric brake orbit at E = {target_energy:.4f} J "
            f"(|turn_a + turn_b| = {odd_err:.2e}, branch jump)"
        )
    return BrakeOrbit(
        energy=float(target_energy),
        turn_a=turn,
        turn_b=turn_b,
        period=2.0 * half_period,
        samples=samples,
        residual=float(np.linalg.norm(r)),
        newton_iters=iters,
    )


def _extrapolate(xs, ys, x):
    """Polynomial extrapolation through the last Lagrange nodes."""
    if len(xs) == 2:
        w = (x - xs[1]) / (xs[1] - xs[0])
        return ys[1] + w * (ys[1] - ys[0])
    x0, x1, x2 = xs
    l0 = (x - x1) * (x - x2) / ((x0 - x1) * (x0 - x2))
    l1 = (x - x0) * (x - x2) / ((x1 - x0) * (x1 - x2))
    l2 = (x - x0) * (x - x1) / ((x2 - x0) * (x2 - x1))
    return l0 * ys[0] + l1 * ys[1] + l2 * ys[2]


def _predict(params, orbits, e_next, e_max):
    """Predictor for (turn, half period) by extrapolating the previous
    orbits.  Near the potential ceiling the turning point is polynomial
    in sqrt(e_max - E) and the period in log(e_max - E), matching the
    homoclinic scaling; the Newton basin shrinks like the inverse of the
    flow amplification there, so prediction accuracy is what keeps the
    continuation alive.  The predicted turn is nudged along the potential
    gradient afterwards so its energy residual vanishes."""
    last = orbits[-1]
    if len(orbits) < 2:
        return last.turn_a.copy(), last.half_period
    tail = orbits[-3:] if len(orbits) >= 3 else orbits[-2:]
    gap_next = e_max - e_next
    if gap_next < 0.1:
        s = [np.sqrt(e_max - o.energy) for o in tail]
        turn = _extrapolate(s, [o.turn_a for o in tail], np.sqrt(gap_next))
        ln = [np.log(e_max - o.energy) for o in tail]
        hp = _extrapolate(ln, [o.half_period for o in tail], np.log(gap_next))
    else:
        e = [o.energy for o in tail]
        turn = _extrapolate(e, [o.turn_a for o in tail], e_next)
        hp = _extrapolate(e, [o.half_period for o in tail], e_next)
    for _ in range(3):
        grad = gravity(params, turn)
        gg = float(grad @ grad)
        if gg < 1e-24:
            break
        turn = turn + (e_next - potential(params, turn)) / gg * grad
    return turn, float(np.clip(hp, 0.5 * last.half_period, 3.0 * last.half_period))


def continue_mode(
    params: PendulumParams,
    mode_index: int,
    energy_ceiling: float | None = None,
    controls: ContinuationControls | None = None,
) -> ModeFamily:
    """Continue the brake-orbit family of one mode from the linear limit
    up to the energy ceiling (default: 1e-3 J below the potential
    maximum)."""
    if mode_index not in (1, 2):
        raise ValueError("mode_index must be 1 or 2")
    controls = controls or ContinuationControls()
    e_max = max_potential_energy(params)
    if energy_ceiling is None:
        energy_ceiling = e_max - 1e-3
    if not energy_ceiling < e_max:
        raise ValueError("energy ceiling must lie below the potential maximum")

    modes = linear_modes(params)
    _, k0 = linearize(params)
    v = modes.v[mode_index - 1]
    omega = modes.omega[mode_index - 1]

    e0 = controls.e_start
    amp = np.sqrt(2.0 * e0 / float(v @ k0 @ v))
    orbit = find_brake_orbit(
        params,
        amp * v,
        np.pi / omega,
        e0,
        dt=controls.dt,
        samples_per_orbit=controls.samples_per_orbit,
    )
    orbits = [orbit]

    de = controls.de_init
    while orbits[-1].energy < energy_ceiling - 1e-12:
        e_cur = orbits[-1].energy
        step_cap = min(controls.de_max, 0.25 * (e_max - e_cur))
        e_next = min(e_cur + min(de, step_cap), energy_ceiling)
        turn_guess, hp_guess = _predict(params, orbits, e_next, e_max)
        try:
            orbit = find_brake_orbit(
                params,
                turn_guess,
                hp_guess,
                e_next,
                dt=controls.dt,
                samples_per_orbit=controls.samples_per_orbit,
            )
        except (NoConvergence, SpuriousTurningPoint):
            de *= controls.shrink
            if de < controls.de_floor:
                if e_cur >= 12.9:
                    break
                raise ContinuationStalled(
                    f"mode {mode_index} stalled at E = {e_cur:.4f} J"
                )
            continue
        orbits.append(orbit)
        if orbit.newton_iters <= controls.easy_iters:
            de = min(de * controls.grow, controls.de_max)
        elif orbit.newton_iters <= 12:
            de = min(de * 1.3, controls.de_max)

    return ModeFamily(mode_index=mode_index, params=params, orbits=orbits)


def characteristic_multipliers(
    params: PendulumParams, orbit: BrakeOrbit, dt: float = SHOOT_DT
) -> MultiplierRecord:
    """Eigenvalue magnitudes of the monodromy matrix integrated over one
    full period from turn_a."""
    a1, a2, b, g1, g2 = params.coeffs()
    n = max(1, int(np.ceil(orbit.period / dt - 1e-12)))
    h = orbit.period / n
    x0 = np.array([orbit.turn_a[0], orbit.turn_a[1], 0.0, 0.0])
    y = _kernels._flow_var(a1, a2, b, g1, g2, x0, h, n)
    monodromy = y[4:].reshape(4, 4)
    eig = np.linalg.eigvals(monodromy)
    mags = np.sort(np.abs(eig))[::-1]
    return MultiplierRecord(energy=orbit.energy, magnitudes=mags, eigenvalues=eig)


def multiplier_grid(
    params: PendulumParams,
    family: ModeFamily,
    n: int = 64,
    top_cap: float = 12.92,
) -> list[MultiplierRecord]:
    """Multipliers on a subset of family orbits spanning the energy range
    (capped below the ceiling where the monodromy is float-noise
    dominated)."""
    e = family.energies
    targets = np.linspace(e[0], min(top_cap, e[-1]), n)
    idx = np.unique(np.searchsorted(e, targets).clip(0, len(e) - 1))
    return [characteristic_multipliers(params, family.orbits[i]) for i in idx]


def instability_onset(
    params: PendulumParams,
    family: ModeFamily,
    records: list[MultiplierRecord] | None = None,
    threshold: float = 1.02,
    refine_width: float = 0.05,
) -> float:
    """Smallest energy at which the largest multiplier magnitude exceeds
    the threshold, refined by bisection to the requested bracket width."""
    if records is None:
        records = multiplier_grid(params, family)
    if len(records) < 50:
        raise ValueError("need multipliers on a grid of at least 50 energies")
    unstable = [r.magnitudes[0] > threshold for r in records]
    if not any(unstable):
        raise NeverUnstable(f"mode {family.mode_index}: no multiplier exceeds {threshold}")
    j = unstable.index(True)
    if j == 0:
        return records[0].energy
    e_lo, e_hi = records[j - 1].energy, records[j].energy
    while e_hi - e_lo > refine_width:
        e_mid = 0.5 * (e_lo + e_hi)
        orbit = find_brake_orbit(
            params,
            family.generator_plus(e_mid),
            0.5 * family.period_at(e_mid),
            e_mid,
        )
        rec = characteristic_multipliers(params, orbit)
        if rec.magnitudes[0] > threshold:
            e_hi = e_mid
        else:
            e_lo = e_mid
    return 0.5 * (e_lo + e_hi)


def critical_angle(params: PendulumParams, tau_max: float) -> float:
    """First-joint angle beyond which saturated motors can counteract
    gravity on the way to upright.

    The binding case is the stretched pendulum (q2 = 0), whose shoulder
    gravity torque is (g1 + g2) sin(pi - q1); torque limits above that
    peak leave only the 90-degree requirement."""
    if not tau_max > 0.0:
        raise ValueError("tau_max must be positive")
    _, _, _, g1, g2 = params.coeffs()
    return np.pi - np.arcsin(min(1.0, tau_max / (g1 + g2)))


def critical_energy(
    params: PendulumParams, family: ModeFamily, tau_max: float
) -> tuple[float, np.ndarray]:
    """Smallest orbit energy whose turning point passes the holdability
    angle, found by bisection on the piecewise-linear generator curve.

    Returns (E_crit, q_crit) with q_crit the turning point on the
    generator.  Because the generator approaches upright with a bent
    elbow, the gravity norm at q_crit sits ~10% below tau_max, so the
    written condition ||g(q_crit)||_inf <= tau_max holds with margin.
    """
    q1_min = critical_angle(params, tau_max)

    def satisfied(e: float) -> bool:
        return family.generator_plus(e)[0] >= q1_min

    flags = [satisfied(e) for e in family.energies]
    if not any(flags):
        raise Unreachable(
            f"torque limit {tau_max} N*m unsatisfiable up to E = {family.energies[-1]:.6f} J"
        )
    j = flags.index(True)
    if j == 0:
        return float(family.energies[0]), family.generator_plus(family.energies[0])
    e_lo, e_hi = family.energies[j - 1], family.energies[j]
    for _ in range(200):
        e_mid = 0.5 * (e_lo + e_hi)
        if satisfied(e_mid):
            e_hi = e_mid
        else:
            e_lo = e_mid
        if e_hi - e_lo < 1e-12:
            break
    return float(e_hi), family.generator_plus(e_hi)


def holdable_energy(
    params: PendulumParams,
    family: ModeFamily,
    tau_max: float,
    margin: float = 0.9,
) -> tuple[float, np.ndarray]:
    """Smallest orbit energy whose turning point has its gravity norm
    within margin * tau_max (and first angle beyond 90 deg), bisected on
    the generator curve.

    This is the energy target handed to the swing-up controller: orbits
    above it have turning points where the saturated motors can hold and
    lift the pendulum with a torque reserve.  It sits slightly above the
    reported critical energy because the true turning points carry a bent
    elbow that raises the shoulder gravity torque.
    """
    if not tau_max > 0.0:
        raise ValueError("tau_max must be positive")
    bound = margin * tau_max

    def satisfied(e: float) -> bool:
        q = family.generator_plus(e)
        return q[0] >= 0.5 * np.pi and np.max(np.abs(gravity(params, q))) <= bound

    flags = [satisfied(e) for e in family.energies]
    if not any(flags):
        raise Unreachable(
            f"no holdable orbit for {tau_max} N*m up to E = {family.energies[-1]:.6f} J"
        )
    j = flags.index(True)
    if j == 0:
        return float(family.energies[0]), family.generator_plus(family.energies[0])
    e_lo, e_hi = family.energies[j - 1], family.energies[j]
    for _ in range(200):
        e_mid = 0.5 * (e_lo + e_hi)
        if satisfied(e_mid):
            e_hi = e_mid
        else:
            e_lo = e_mid
        if e_hi - e_lo < 1e-12:
            break
    return float(e_hi), family.generator_plus(e_hi)
