"""Interpolable chart of a brake-orbit family: (energy, phase) -> state.

Orbit samples are placed in the plane spanned by the total energy E and
the modal phase phi = atan2(qd1, q1), Delaunay-triangulated there, and
queried by barycentric interpolation of the vertex states.  Points near
the phase seam are duplicated at phi +- 2*pi so queries wrap cleanly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .delaunay import OutOfHull, Triangulation
from .dynamics import PendulumParams, State, energy
from .modal import ModeFamily

CHART_SCHEMA_VERSION = 1
_PAD_PHI = 0.5  # seam padding band [rad]


class DegeneratePhase(Exception):
    """Phase undefined: the projection of the state onto the (q1, qd1)
    plane sits at the origin."""


class OutOfRange(Exception):
    """Query energy outside the chart range by more than the slack."""


class ChartBuildError(Exception):
    pass


def phase(state: State) -> float:
    """Modal phase atan2(qd1, q1) in (-pi, pi]."""
    q1, qd1 = state.q[0], state.qd[0]
    if abs(q1) < 1e-9 and abs(qd1) < 1e-9:
        raise DegeneratePhase("state projects onto the origin of the q1-qd1 plane")
    phi = float(np.arctan2(qd1, q1))
    return np.pi if phi == -np.pi else phi


@dataclass(frozen=True)
class ManifoldPoint:
    energy: float
    phi: float
    state: State


@dataclass
class ProjectionFlags:
    clamped: bool = False
    degenerate: bool = False


class ManifoldChart:
    """Triangulated (E, phi) chart over one mode family."""

    def __init__(
        self,
        mode_index: int,
        params: PendulumParams,
        energies: np.ndarray,
        phis: np.ndarray,
        states: np.ndarray,
    ):
        self.mode_index = mode_index
        self.params = params
        self.energies = energies
        self.phis = phis
        self.states = states
        self.energy_range = (float(energies.min()), float(energies.max()))
        self._scale_e = self.energy_range[1] - self.energy_range[0]
        self._triangulate()

    def _scaled(self, e, phi):
        return (e - self.energy_range[0]) / self._scale_e, phi / np.pi

    def _triangulate(self):
        e, phi = self.energies, self.phis
        hi = phi > np.pi - _PAD_PHI
        lo = phi < -np.pi + _PAD_PHI
        self.index_map = np.concatenate(
            [np.arange(len(e)), np.nonzero(hi)[0], np.nonzero(lo)[0]]
        )
        pad_e = np.concatenate([e, e[hi], e[lo]])
        pad_phi = np.concatenate([phi, phi[hi] - 2.0 * np.pi, phi[lo] + 2.0 * np.pi])
        sx, sy = self._scaled(pad_e, pad_phi)
        self.tri = Triangulation(np.column_stack([sx, sy]))

    def point(self, i: int) -> ManifoldPoint:
        return ManifoldPoint(
            energy=float(self.energies[i]),
            phi=float(self.phis[i]),
            state=State.from_vector(self.states[i]),
        )

    def __len__(self) -> int:
        return len(self.energies)

    def project(self, e: float, phi: float):
        """Interpolated (q, qd) at energy e and phase phi.

        Energies less than 2% of the chart span outside the range are
        clamped; beyond that OutOfRange is raised.
        """
        q, qd, _ = self.project_ex(e, phi, clamp_hard=False)
        return q, qd

    def project_ex(self, e: float, phi: float, clamp_hard: bool):
        """As project, returning flags; clamp_hard clamps any energy into
        range instead of raising OutOfRange."""
        flags = ProjectionFlags()
        e_lo, e_hi = self.energy_range
        slack = 0.02 * self._scale_e
        if e < e_lo or e > e_hi:
            if not clamp_hard and (e < e_lo - slack or e > e_hi + slack):
                raise OutOfRange(
                    f"energy {e:.6f} J outside chart range [{e_lo:.6f}, {e_hi:.6f}]"
                )
            e = min(max(e, e_lo), e_hi)
            flags.clamped = True
        phi = np.pi - (np.pi - phi) % (2.0 * np.pi)  # wrap to (-pi, pi]
        sx, sy = self._scaled(e, phi)
        try:
            t = self.tri.locate(sx, sy)
        except OutOfHull as exc:
            raise OutOfRange(str(exc)) from exc
        w = self.tri.barycentric(t, sx, sy)
        verts = self.index_map[self.tri.triangles[t]]
        combo = w @ self.states[verts]
        return combo[:2].copy(), combo[2:].copy(), flags

    def nearest(self, state: State):
        """Chart point matching the state's own energy and phase (the
        chained projection used by the controller).

        Degenerate phase returns the state itself, out-of-range energies
        are clamped; both are flagged.
        """
        try:
            phi = phase(state)
        except DegeneratePhase:
            return state.q.copy(), state.qd.copy(), ProjectionFlags(degenerate=True)
        e = energy(self.params, state)
        q, qd, flags = self.project_ex(e, phi, clamp_hard=True)
        return q, qd, flags

    def save(self, path) -> None:
        np.savez_compressed(
            path,
            schema_version=CHART_SCHEMA_VERSION,
            mode_index=self.mode_index,
            params=np.array(
                [getattr(self.params, k) for k in ("l1", "l2", "m1", "m2", "grav", "i1", "i2")]
            ),
            energies=self.energies,
            phis=self.phis,
            states=self.states,
        )

    @classmethod
    def load(cls, path) -> "ManifoldChart":
        with np.load(path) as data:
            if int(data["schema_version"]) != CHART_SCHEMA_VERSION:
                raise ValueError(f"unsupported chart schema {data['schema_version']}")
            keys = ("l1", "l2", "m1", "m2", "grav", "i1", "i2")
            params = PendulumParams(**dict(zip(keys, (float(v) for v in data["params"]))))
            return cls(
                mode_index=int(data["mode_index"]),
                params=params,
                energies=data["energies"].copy(),
                phis=data["phis"].copy(),
                states=data["states"].copy(),
            )


def project(chart: ManifoldChart, e: float, phi: float):
    return chart.project(e, phi)


def nearest_on_manifold(chart: ManifoldChart, state: State):
    return chart.nearest(state)


def _orbit_chart_states(orbit, samples_per_orbit: int) -> np.ndarray:
    """samples_per_orbit states uniformly in time over [0, T)."""
    stored = len(orbit.samples) - 1  # intervals in the stored record
    if stored % samples_per_orbit == 0:
        stride = stored // samples_per_orbit
        return orbit.samples.states[:-1:stride]
    # fall back to linear interpolation on the dense record
    tq = np.linspace(0.0, stored, samples_per_orbit, endpoint=False)
    base = np.floor(tq).astype(int)
    frac = (tq - base)[:, None]
    s = orbit.samples.states
    return (1.0 - frac) * s[base] + frac * s[base + 1]


def build_chart(
    family: ModeFamily,
    samples_per_orbit: int = 400,
    orbit_stride: int = 1,
) -> ManifoldChart:
    """Chart from a mode family: each selected orbit contributes
    samples_per_orbit points uniformly spaced in time.

    Build fails if any orbit breaks the premise that the phase is
    strictly monotone and covers the full circle once per period, or if a
    sampled state's energy drifts off its orbit's level.
    """
    if len(family.orbits) < 10:
        raise ChartBuildError("need at least 10 orbits to build a chart")
    params = family.params
    all_e, all_phi, all_states = [], [], []
    for orbit in family.orbits[::orbit_stride]:
        states = _orbit_chart_states(orbit, samples_per_orbit)
        phis = np.arctan2(states[:, 2], states[:, 0])
        phis[phis == -np.pi] = np.pi
        # strict monotonicity of the winding (one full turn per period)
        dphi = np.diff(phis)
        dphi = (dphi + np.pi) % (2.0 * np.pi) - np.pi
        if not (np.all(dphi > 0.0) or np.all(dphi < 0.0)):
            raise ChartBuildError(
                f"phase not strictly monotone on the orbit at E = {orbit.energy:.6f} J"
            )
        if abs(abs(dphi.sum() + (phis[0] - phis[-1])) - 0.0) > 2 * np.pi + 1e-6:
            raise ChartBuildError(
                f"phase winding != 1 on the orbit at E = {orbit.energy:.6f} J"
            )
        for k in (0, len(states) // 2):
            e_k = energy(params, State.from_vector(states[k]))
            if abs(e_k - orbit.energy) > 1e-6:
                raise ChartBuildError(
                    f"sample energy off by {abs(e_k - orbit.energy):.2e} J at "
                    f"E = {orbit.energy:.6f} J"
                )
        all_e.append(np.full(len(states), orbit.energy))
        all_phi.append(phis)
        all_states.append(states)
    return ManifoldChart(
        mode_index=family.mode_index,
        params=params,
        energies=np.concatenate(all_e),
        phis=np.concatenate(all_phi),
        states=np.vstack(all_states),
    )
