"""Potentials, equations of motion, flow integration, action, angular momentum.

All dynamics run in the center-of-mass frame internally (mass-weighted
Jacobi coordinates); Cartesian states with center-of-mass drift are
separated exactly and recomposed on output.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .trajectory import (FRAME_CARTESIAN, FRAME_JACOBI, LoopTrajectory, SQMU1,
                         SQMU2, as_frame, build_loop)

LENNARD_JONES = "lennard-jones"
HOMOGENEOUS = "homogeneous"

#: default local tolerance of the adaptive integrator
INTEGRATOR_TOL = 1e-12


class DomainError(ValueError):
    """Invalid physical input: nonpositive separation, coincident bodies."""


class IntegrationFailure(RuntimeError):
    """Adaptive step collapsed (near-collision); carries the failure time."""

    def __init__(self, message: str, t_fail: float):
        super().__init__(message)
        self.t_fail = t_fail


@dataclass(frozen=True)
class PotentialSpec:
    """Interaction potential: Lennard-Jones or homogeneous -1/(a r^a).

    The homogeneous family is normalized so the pair force is r^(-a-1)
    (Newtonian at a = 1), which keeps it attractive for a < 0 and matches
    the tabulated bifurcation data; see the ledgered convention note.
    """

    kind: str
    a: float | None = None

    def __post_init__(self):
        if self.kind == LENNARD_JONES:
            if self.a is not None:
                raise DomainError("lennard-jones takes no parameter")
        elif self.kind == HOMOGENEOUS:
            if self.a is None or self.a == 0.0:
                raise DomainError("homogeneous potential requires a != 0")
            if not -2.0 < self.a < 2.0:
                raise DomainError("homogeneous power must lie in (-2, 2)")
        else:
            raise DomainError(f"unknown potential kind {self.kind!r}")

    @property
    def code(self) -> int:
        return kernels.POT_LJ if self.kind == LENNARD_JONES else kernels.POT_HOM

    @property
    def a_value(self) -> float:
        return 0.0 if self.a is None else float(self.a)

    def with_a(self, a: float) -> "PotentialSpec":
        return replace(self, a=float(a))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a": self.a}

    @staticmethod
    def from_dict(d: dict) -> "PotentialSpec":
        return PotentialSpec(kind=d["kind"], a=d.get("a"))


def lennard_jones() -> PotentialSpec:
    return PotentialSpec(LENNARD_JONES)


def homogeneous(a: float) -> PotentialSpec:
    return PotentialSpec(HOMOGENEOUS, float(a))


@dataclass(frozen=True)
class PhaseState:
    """Cartesian positions/velocities (3, dim) of the three unit masses."""

    positions: np.ndarray
    velocities: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=float)
        v = np.asarray(self.velocities, dtype=float)
        if p.shape != v.shape or p.ndim != 2 or p.shape[0] != 3 or p.shape[1] not in (2, 3):
            raise DomainError("positions/velocities must both be (3, 2) or (3, 3)")
        p = p.copy(); p.setflags(write=False)
        v = v.copy(); v.setflags(write=False)
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "velocities", v)

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def vector(self) -> np.ndarray:
        return np.concatenate([self.positions.ravel(), self.velocities.ravel()])

    def centered(self) -> "PhaseState":
        return PhaseState(self.positions - self.positions.mean(axis=0),
                          self.velocities - self.velocities.mean(axis=0), self.time)


def potential_eval(spec: PotentialSpec, r: float) -> tuple[float, float, float]:
    """(u, u', u'') at separation r > 0."""
    if r <= 0:
        raise DomainError("separation must be positive")
    return kernels.pot_eval(spec.code, spec.a_value, float(r))


def pair_potential_array(spec: PotentialSpec, r: np.ndarray) -> np.ndarray:
    """Vectorized u(r) for quadrature grids."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 1e-8) or not np.all(np.isfinite(r)):
        raise DomainError("collision on evaluation grid")
    if spec.kind == LENNARD_JONES:
        ir6 = r ** -6.0
        return -ir6 + ir6 * ir6
    a = spec.a_value
    return -(r ** -a) / a


def force_field(spec: PotentialSpec, config: np.ndarray, frame: str
                ) -> tuple[float, np.ndarray, np.ndarray]:
    """(U, gradient of U, Hessian of U) at one configuration.

    ``config`` is flat: body-major Cartesian (len 3*dim) or mass-weighted
    Jacobi (len 2*dim) according to ``frame``.
    """
    config = np.asarray(config, dtype=float)
    if frame == FRAME_CARTESIAN:
        d = config.size // 3
        pos = config.reshape(3, d)
        for i in range(3):
            for j in range(i + 1, 3):
                if np.linalg.norm(pos[j] - pos[i]) <= 1e-12:
                    raise DomainError(f"bodies {i+1} and {j+1} coincide")
        return kernels.cart_grad_hess(spec.code, spec.a_value, config)
    if frame == FRAME_JACOBI:
        d = config.size // 2
        for p in range(3):
            v = kernels.PAIR_COEFF[p, 0] * config[:d] + kernels.PAIR_COEFF[p, 1] * config[d:]
            if np.linalg.norm(v) <= 1e-12:
                raise DomainError("coincident bodies in jacobi configuration")
        return kernels.jac_hess(spec.code, spec.a_value, config)
    raise DomainError(f"unknown frame {frame!r}")


def state_to_jacobi(state: PhaseState) -> np.ndarray:
    """Mass-weighted Jacobi phase vector [Q1, Q2, Q1d, Q2d] (COM removed)."""
    p, v = state.positions, state.velocities
    q = np.concatenate([SQMU1 * (p[1] - p[0]), SQMU2 * (p[2] - 0.5 * (p[0] + p[1]))])
    qd = np.concatenate([SQMU1 * (v[1] - v[0]), SQMU2 * (v[2] - 0.5 * (v[0] + v[1]))])
    return np.concatenate([q, qd])


def jacobi_to_state(y: np.ndarray, dim: int, time: float = 0.0,
                    com_pos=None, com_vel=None) -> PhaseState:
    """Cartesian state from a Jacobi phase vector, optionally re-adding COM."""
    n = 2 * dim
    q, qd = y[:n], y[n:]

    def bodies(vec):
        R1, R2 = vec[:dim] / SQMU1, vec[dim:] / SQMU2
        return np.stack([-0.5 * R1 - R2 / 3.0, 0.5 * R1 - R2 / 3.0, 2.0 * R2 / 3.0])

    pos, vel = bodies(q), bodies(qd)
    if com_pos is not None:
        pos = pos + com_pos
    if com_vel is not None:
        vel = vel + com_vel
    return PhaseState(pos, vel, time)


def integrate_flow(spec: PotentialSpec, state: PhaseState, duration: float,
                   dense: bool = False, n_samples: int = 256,
                   rtol: float = INTEGRATOR_TOL, atol: float = INTEGRATOR_TOL):
    """Flow the state for ``duration``; optionally return uniform samples.

    Returns the final PhaseState, or ``(final, times, states)`` with
    ``dense=True`` where ``states[k]`` is the Cartesian phase vector
    (positions then velocities, body-major) at ``times[k]``.
    """
    if not np.isfinite(duration):
        raise DomainError("duration must be finite")
    com_p = state.positions.mean(axis=0)
    com_v = state.velocities.mean(axis=0)
    y0 = state_to_jacobi(state)
    code, a = spec.code, spec.a_value
    if dense:
        ts = np.linspace(0.0, duration, n_samples + 1)[1:]
        ys, status, t_fail = kernels.integrate_collect(code, a, y0, 0.0, ts, rtol, atol, 0)
        if status != 0:
            raise IntegrationFailure(
                f"step collapse at t={state.time + t_fail:.6g}", state.time + t_fail)
        times = np.concatenate([[0.0], ts]) + state.time
        out = np.empty((n_samples + 1, 6 * state.dim))
        for k, y in enumerate(np.vstack([y0, ys])):
            st = jacobi_to_state(y, state.dim, com_pos=com_p + com_v * (times[k] - state.time),
                                 com_vel=com_v)
            out[k] = st.vector()
        final = jacobi_to_state(ys[-1], state.dim, state.time + duration,
                                com_pos=com_p + com_v * duration, com_vel=com_v)
        return final, times, out
    y, status, t_reach, _, _ = kernels.integrate_to(code, a, y0, 0.0, duration,
                                                    rtol, atol, -1.0, 0)
    if status != 0:
        raise IntegrationFailure(
            f"step collapse at t={state.time + t_reach:.6g}", state.time + t_reach)
    return jacobi_to_state(y, state.dim, state.time + duration,
                           com_pos=com_p + com_v * duration, com_vel=com_v)


def total_energy(spec: PotentialSpec, state: PhaseState) -> float:
    kin = 0.5 * float(np.sum(state.velocities ** 2))
    pos = state.positions
    u = 0.0
    for i in range(3):
        for j in range(i + 1, 3):
            u += potential_eval(spec, float(np.linalg.norm(pos[j] - pos[i])))[0]
    return kin + u


def angular_momentum_state(state: PhaseState) -> np.ndarray:
    p = state.positions
    v = state.velocities
    if state.dim == 2:
        jz = float(np.sum(p[:, 0] * v[:, 1] - p[:, 1] * v[:, 0]))
        return np.array([0.0, 0.0, jz])
    return np.sum(np.cross(p, v), axis=0)


def angular_momentum(loop: LoopTrajectory, t) -> np.ndarray:
    """J = sum_j r_j x v_j at time(s) t, in the Cartesian frame."""
    cart = as_frame(loop, FRAME_CARTESIAN)
    scalar = np.isscalar(t) or np.asarray(t).ndim == 0
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    pos = cart.evaluate(ts, 0)
    vel = cart.evaluate(ts, 1)
    d = cart.dim
    out = np.zeros((len(ts), 3))
    for j in range(3):
        p = pos[:, j * d:(j + 1) * d]
        v = vel[:, j * d:(j + 1) * d]
        if d == 2:
            out[:, 2] += p[:, 0] * v[:, 1] - p[:, 1] * v[:, 0]
        else:
            out += np.cross(p, v)
    return out[0] if scalar else out


def _pair_separations(loop_j: LoopTrajectory, n: int) -> np.ndarray:
    """Pair distances (n, 3) on the uniform grid, from a Jacobi loop."""
    q = loop_j.sample(n)
    d = loop_j.dim
    seps = np.empty((n, 3))
    for p in range(3):
        v = kernels.PAIR_COEFF[p, 0] * q[:, :d] + kernels.PAIR_COEFF[p, 1] * q[:, d:]
        seps[:, p] = np.linalg.norm(v, axis=1)
    return seps


def action_of_loop(spec: PotentialSpec, loop: LoopTrajectory,
                   n_quad: int | None = None) -> float:
    """Action integral of the loop by uniform (spectral) quadrature.

    The grid has at least 4K points; for smooth collision-free loops the
    trapezoidal rule on a periodic integrand converges spectrally.
    """
    jac = as_frame(loop, FRAME_JACOBI)
    n = max(4 * jac.K, 64) if n_quad is None else int(n_quad)
    vel = jac.sample(n, order=1)
    kin = 0.5 * np.sum(vel ** 2, axis=1)
    seps = _pair_separations(jac, n)
    pot = np.sum(pair_potential_array(spec, seps), axis=1)
    return float(loop.period * np.mean(kin - pot))


def loop_from_state(spec: PotentialSpec, state: PhaseState, period: float,
                    K: int, frame: str = FRAME_JACOBI, oversample: int = 8,
                    rtol: float = INTEGRATOR_TOL, atol: float = INTEGRATOR_TOL,
                    **meta) -> LoopTrajectory:
    """Integrate one period and fit a loop to the dense output."""
    n = max(oversample * K, 2 * K + 2)
    y0 = state_to_jacobi(state)
    ts = np.arange(1, n) * (period / n)
    ys, status, t_fail = kernels.integrate_collect(spec.code, spec.a_value, y0,
                                                   0.0, ts, rtol, atol, 0)
    if status != 0:
        raise IntegrationFailure(f"step collapse at t={t_fail:.6g}", t_fail)
    d = state.dim
    samples = np.vstack([y0[None, :2 * d], ys[:, :2 * d]])
    loop = build_loop(samples, period, FRAME_JACOBI, d, K=K, **meta)
    return loop if frame == FRAME_JACOBI else as_frame(loop, frame)
