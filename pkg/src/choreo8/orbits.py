"""Periodic-orbit solving by shooting Newton iteration and branch continuation.

Unconstrained problems use the five-parameter planar (seven in 3D) matching
system: unknowns ``r2(0), |v1(0)|, v2(0)`` with ``r1(0)`` and the direction
of ``v1(0)`` held fixed, matching ``r1(T) = r1(0)``, ``|v1(T)| = |v1(0)|``,
``r2(T) = r2(0)``.  Symmetry-constrained problems shoot over the fundamental
time domain of the constraint group (T/6 for the full figure-eight group):
boundary conditions at t = 0 come from a time-reversing element and the
endpoint matches the state mapped by the minimal-shift element.  Jacobians
come from integrated variational equations, not finite differences; only
the derivative along the branch parameter is differenced.

Branches are traced by pseudo-arclength continuation with a secant
predictor, step halving on Newton failure, and fold detection via turning
points of the parameter.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from . import kernels
from .dynamics import (INTEGRATOR_TOL, IntegrationFailure, PhaseState,
                       PotentialSpec, jacobi_to_state, loop_from_state,
                       state_to_jacobi)
from .spectrum import DEFAULT_K
from .symmetry import (GroupElement, SubgroupRecord, apply_element,
                       channel_matrix, inverse)
from .trajectory import (FRAME_CARTESIAN, FRAME_JACOBI, LoopTrajectory,
                         as_frame, function_norm, loop_distance, shift_time)


class NoConvergenceError(RuntimeError):
    """Newton failed; carries the last residual norm."""

    def __init__(self, message: str, residual: float = np.inf):
        super().__init__(message)
        self.residual = residual


class BlockedBranchError(RuntimeError):
    """Continuation step collapsed; carries the last good parameter value."""

    def __init__(self, message: str, last_xi: float):
        super().__init__(message)
        self.last_xi = last_xi


@dataclass(frozen=True)
class ShootingProblem:
    """What to solve: potential, parameter, optional symmetry constraints."""

    potential: PotentialSpec
    dim: int = 2
    constraints: SubgroupRecord | None = None
    param_name: str = "T"          # continuation parameter: "T" or "a"
    K: int = DEFAULT_K
    newton_tol: float = 1e-12
    max_iter: int = 60
    rtol: float = INTEGRATOR_TOL
    atol: float = INTEGRATOR_TOL
    fixed_period: float | None = None   # period when param_name == "a"

    def potential_at(self, xi: float) -> PotentialSpec:
        return self.potential.with_a(xi) if self.param_name == "a" else self.potential

    def period_at(self, xi: float) -> float:
        if self.param_name == "T":
            return float(xi)
        if self.fixed_period is None:
            raise ValueError("fixed_period required for continuation in 'a'")
        return float(self.fixed_period)


def _integrate_var(spec: PotentialSpec, y0: np.ndarray, span: float,
                   rtol: float, atol: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = y0.size
    yv0 = np.concatenate([y0, np.eye(n).ravel()])
    yv, status, t_fail, _, _ = kernels.integrate_to(
        spec.code, spec.a_value, yv0, 0.0, span, rtol, atol, -1.0, n)
    if status != 0:
        raise IntegrationFailure(f"step collapse at t={t_fail:.6g}", t_fail)
    yT = yv[:n]
    fT = kernels.rhs_state(spec.code, spec.a_value, yT)
    return yT, yv[n:].reshape(n, n), fT


def _integrate(spec: PotentialSpec, y0: np.ndarray, span: float,
               rtol: float, atol: float) -> np.ndarray:
    y, status, t_fail, _, _ = kernels.integrate_to(
        spec.code, spec.a_value, y0, 0.0, span, rtol, atol, -1.0, 0)
    if status != 0:
        raise IntegrationFailure(f"step collapse at t={t_fail:.6g}", t_fail)
    return y


# ---------------------------------------------------------------------------
# correctors: residual systems with unknown vector x at parameter xi

class _FreeCorrector:
    """Paper-style 5/7-parameter shooting in the center-of-mass frame."""

    def __init__(self, problem: ShootingProblem, anchor: PhaseState):
        d = anchor.dim
        self.problem = problem
        self.d = d
        self.r1 = anchor.positions[0].copy()
        v1 = anchor.velocities[0]
        v1n = np.linalg.norm(v1)
        if v1n < 1e-12:
            raise NoConvergenceError("body-1 velocity vanishes at the anchor")
        self.v1dir = v1 / v1n
        self.n_par = 2 * d + 1
        # linear map x -> jacobi initial state
        self.L = np.empty((4 * d, self.n_par))
        x0 = self.pack(anchor)
        y_base = state_to_jacobi(self.state(x0))
        for j in range(self.n_par):
            xp = x0.copy()
            xp[j] += 1.0
            self.L[:, j] = state_to_jacobi(self.state(xp)) - y_base

    def state(self, x: np.ndarray) -> PhaseState:
        d = self.d
        r2 = x[0:d]
        v1 = x[d] * self.v1dir
        v2 = x[d + 1:]
        r3 = -(self.r1 + r2)
        v3 = -(v1 + v2)
        return PhaseState(np.stack([self.r1, r2, r3]), np.stack([v1, v2, v3]))

    def pack(self, st: PhaseState) -> np.ndarray:
        return np.concatenate([st.positions[1],
                               [float(np.linalg.norm(st.velocities[0]))],
                               st.velocities[1]])

    def initial_state(self, x: np.ndarray) -> np.ndarray:
        return state_to_jacobi(self.state(x))

    def residual(self, x: np.ndarray, xi: float, with_jac: bool):
        problem = self.problem
        d = self.d
        spec = problem.potential_at(xi)
        T = problem.period_at(xi)
        y0 = self.initial_state(x)
        if with_jac:
            yT, Phi, fT = _integrate_var(spec, y0, T, problem.rtol, problem.atol)
        else:
            yT = _integrate(spec, y0, T, problem.rtol, problem.atol)
        stT = jacobi_to_state(yT, d)
        st0 = self.state(x)
        F = np.concatenate([
            stT.positions[0] - st0.positions[0],
            [np.linalg.norm(stT.velocities[0]) - x[d]],
            stT.positions[1] - st0.positions[1],
        ])
        if not with_jac:
            return F, None, None
        # rows: d(readouts)/d(yT), exploiting linearity of jacobi->cartesian
        n = y0.size
        Rt = np.zeros((self.n_par, n))
        v1T = stT.velocities[0]
        v1Tn = max(np.linalg.norm(v1T), 1e-300)
        for k in range(n):
            yk = yT.copy()
            yk[k] += 1.0
            sk = jacobi_to_state(yk, d)
            Rt[0:d, k] = sk.positions[0] - stT.positions[0]
            Rt[d, k] = (v1T / v1Tn) @ (sk.velocities[0] - stT.velocities[0])
            Rt[d + 1:, k] = sk.positions[1] - stT.positions[1]
        J = Rt @ (Phi @ self.L)
        # direct dependence of the matching conditions on x
        for j in range(self.n_par):
            xp = x.copy()
            xp[j] += 1.0
            sp = self.state(xp)
            J[0:d, j] -= sp.positions[0] - st0.positions[0]
            J[d + 1:, j] -= sp.positions[1] - st0.positions[1]
            if j == d:
                J[d, j] -= 1.0
        dF_dxi = Rt @ fT * 1.0 if problem.param_name == "T" else None
        if dF_dxi is None:
            dF_dxi = self._dxi_fd(x, xi, F)
        return F, J, dF_dxi

    def _dxi_fd(self, x, xi, F0):
        h = 1e-6 * max(abs(xi), 1.0)
        Fp, _, _ = self.residual(x, xi + h, False)
        return (Fp - F0) / h

    def loop(self, x: np.ndarray, xi: float) -> LoopTrajectory:
        problem = self.problem
        spec = problem.potential_at(xi)
        T = problem.period_at(xi)
        return loop_from_state(spec, self.state(x), T, problem.K,
                               rtol=problem.rtol, atol=problem.atol,
                               param_name=problem.param_name, param_value=float(xi))


@dataclass
class _SymStructure:
    anchor_shift: Fraction         # fraction of T added to the guess's origin
    pos_basis: np.ndarray
    vel_basis: np.ndarray
    frac: float                    # fundamental domain fraction of T
    A0big: np.ndarray              # endpoint matching operator on phase space
    N: np.ndarray                  # injection matrix (2n, k)


def _eig_basis(Amat: np.ndarray, eigval: float) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (Amat + Amat.T))
    return vecs[:, np.abs(vals - eigval) < 1e-9]


def symmetry_structure(record: SubgroupRecord, dim: int) -> _SymStructure:
    """Fundamental-domain shooting data for a constraint subgroup.

    A time-reversing element pins mirror boundary conditions at t = 0
    (after an exact rational re-anchoring of the time origin when needed);
    the minimal-shift element supplies the endpoint matching map.
    """
    n = 2 * dim
    reversals = sorted((g for g in record.elements if g.reverse),
                       key=lambda g: (g.shift, g))
    anchor = Fraction(0)
    elements = sorted(record.elements)
    if reversals:
        h0 = next((g for g in reversals if g.shift == 0), reversals[0])
        anchor = h0.shift / 2
        if anchor:
            elements = [g if not g.reverse else
                        GroupElement((g.shift - 2 * anchor) % 1, g.reverse,
                                     g.perm, g.signs)
                        for g in elements]
            h0 = GroupElement(Fraction(0), h0.reverse, h0.perm, h0.signs)
        A = channel_matrix(h0, FRAME_JACOBI, dim)
        pos_basis = _eig_basis(A, 1.0)
        vel_basis = _eig_basis(A, -1.0)
    else:
        pos_basis = np.eye(n)
        vel_basis = np.eye(n)
    shifts = sorted({g.shift for g in elements if not g.reverse and g.shift > 0})
    if shifts:
        s0 = shifts[0]
        g0 = next(g for g in elements if not g.reverse and g.shift == s0)
        A0 = channel_matrix(g0, FRAME_JACOBI, dim)
        frac = float(s0)
    else:
        A0 = np.eye(n)
        frac = 1.0
    big = np.zeros((2 * n, 2 * n))
    big[:n, :n] = A0
    big[n:, n:] = A0
    k1, k2 = pos_basis.shape[1], vel_basis.shape[1]
    N = np.zeros((2 * n, k1 + k2))
    N[:n, :k1] = pos_basis
    N[n:, k1:] = vel_basis
    return _SymStructure(anchor, pos_basis, vel_basis, frac, big, N)


class _SymCorrector:
    """Shooting over the fundamental domain in reduced initial coordinates.

    When ``anchor`` is set to ``(x_ref, W)``, rows ``W^T (x - x_ref)`` are
    appended to the residual: phase conditions that pin the time-shift and
    rotation gauges to a reference point, so Newton cannot slide along the
    solution's symmetry orbit (essential for branch switching, where a
    gauge-moved parent masquerades as a child).
    """

    def __init__(self, problem: ShootingProblem):
        self.problem = problem
        self.s = symmetry_structure(problem.constraints, problem.dim)
        self.anchor: tuple[np.ndarray, np.ndarray] | None = None

    def pack_loop(self, loop: LoopTrajectory) -> np.ndarray:
        anchored = shift_time(loop, float(self.s.anchor_shift) * loop.period) \
            if self.s.anchor_shift else loop
        jac = as_frame(anchored, FRAME_JACOBI)
        y0 = np.concatenate([jac.evaluate(0.0, 0), jac.evaluate(0.0, 1)])
        return self.s.N.T @ y0

    def initial_state(self, x: np.ndarray) -> np.ndarray:
        return self.s.N @ x

    def set_gauge_anchor(self, x_ref: np.ndarray, xi: float) -> None:
        """Pin gauge freedoms at x_ref (time shift and rigid rotations)."""
        spec = self.problem.potential_at(xi)
        d = self.problem.dim
        y = self.s.N @ x_ref
        n = 2 * d
        q, v = y[:n], y[n:]
        tangents = []
        acc = -kernels.jac_grad(spec.code, spec.a_value, q)
        tangents.append(np.concatenate([v, acc]))
        axes = [2] if d == 2 else [0, 1, 2]
        for ax in axes:
            rot_q = np.empty(n)
            rot_v = np.empty(n)
            for vec in range(2):
                sl = slice(vec * d, (vec + 1) * d)
                if d == 2:
                    rot_q[sl] = [-q[sl][1], q[sl][0]]
                    rot_v[sl] = [-v[sl][1], v[sl][0]]
                else:
                    e = np.zeros(3)
                    e[ax] = 1.0
                    rot_q[sl] = np.cross(e, q[sl])
                    rot_v[sl] = np.cross(e, v[sl])
            tangents.append(np.concatenate([rot_q, rot_v]))
        W = []
        for t in tangents:
            w = self.s.N.T @ t
            for prev in W:
                w = w - (w @ prev) * prev
            nw = np.linalg.norm(w)
            if nw > 1e-8 * max(np.linalg.norm(t), 1.0):
                W.append(w / nw)
        self.anchor = (x_ref.copy(), np.stack(W, axis=1)) if W else None

    def residual(self, x: np.ndarray, xi: float, with_jac: bool):
        problem = self.problem
        spec = problem.potential_at(xi)
        span = self.s.frac * problem.period_at(xi)
        y0 = self.s.N @ x
        if with_jac:
            yT, Phi, fT = _integrate_var(spec, y0, span, problem.rtol, problem.atol)
        else:
            yT = _integrate(spec, y0, span, problem.rtol, problem.atol)
        F = yT - self.s.A0big @ y0
        anchor = getattr(self, "anchor", None)
        if anchor is not None:
            x_ref, W = anchor
            F = np.concatenate([F, W.T @ (x - x_ref)])
        if not with_jac:
            return F, None, None
        J = (Phi - self.s.A0big) @ self.s.N
        if anchor is not None:
            J = np.vstack([J, W.T])
        if problem.param_name == "T":
            dF_dxi = fT * self.s.frac
            if anchor is not None:
                dF_dxi = np.concatenate([dF_dxi, np.zeros(W.shape[1])])
        else:
            h = 1e-6 * max(abs(xi), 1.0)
            Fp, _, _ = self.residual(x, xi + h, False)
            Fm, _, _ = self.residual(x, xi - h, False)
            dF_dxi = (Fp - Fm) / (2 * h)
        return F, J, dF_dxi

    def loop(self, x: np.ndarray, xi: float) -> LoopTrajectory:
        """Build the full loop by unfolding the fundamental-domain solution.

        Integrating only over the fundamental domain and mapping segments
        by the matching operator keeps every sample at local integration
        accuracy; a full-period pass would amplify error through the
        orbit's instability.
        """
        from .trajectory import build_loop
        problem = self.problem
        spec = problem.potential_at(xi)
        T = problem.period_at(xi)
        d = problem.dim
        y0 = self.s.N @ x
        nseg = int(round(1.0 / self.s.frac))
        per = max(int(np.ceil(8 * problem.K / nseg)), 2)
        span = self.s.frac * T
        ts = np.arange(1, per) * (span / per)
        ys, status, t_fail = kernels.integrate_collect(
            spec.code, spec.a_value, y0, 0.0, ts, problem.rtol, problem.atol, 0)
        if status != 0:
            raise IntegrationFailure(f"step collapse at t={t_fail:.6g}", t_fail)
        seg = np.vstack([y0, ys])            # (per, 4d) states on [0, span)
        samples = np.empty((nseg * per, 2 * d))
        cur = seg
        for k in range(nseg):
            samples[k * per:(k + 1) * per] = cur[:, :2 * d]
            cur = cur @ self.s.A0big.T
        lp = build_loop(samples, T, FRAME_JACOBI, d, K=problem.K,
                        param_name=problem.param_name, param_value=float(xi))
        if self.s.anchor_shift:
            lp = shift_time(lp, -float(self.s.anchor_shift) * T)
        return lp


def make_corrector(problem: ShootingProblem, guess) -> object:
    if problem.constraints is not None:
        return _SymCorrector(problem)
    if isinstance(guess, LoopTrajectory):
        cart = as_frame(guess, FRAME_CARTESIAN)
        d = cart.dim
        anchor = PhaseState(cart.evaluate(0.0, 0).reshape(3, d),
                            cart.evaluate(0.0, 1).reshape(3, d)).centered()
    else:
        anchor = guess.centered()
    return _FreeCorrector(problem, anchor)


def _newton_fixed(corr, x0: np.ndarray, xi: float, tol: float, max_iter: int
                  ) -> tuple[np.ndarray, float]:
    x = x0.copy()
    F, J, _ = corr.residual(x, xi, True)
    nrm = np.linalg.norm(F)
    for _ in range(max_iter):
        if nrm < tol:
            return x, nrm
        if J.shape[0] == J.shape[1]:
            try:
                step = np.linalg.solve(J, -F)
            except np.linalg.LinAlgError:
                step, *_ = np.linalg.lstsq(J, -F, rcond=1e-12)
        else:
            step, *_ = np.linalg.lstsq(J, -F, rcond=1e-12)
        lam = 1.0
        while True:
            xt = x + lam * step
            Ft, Jt, _ = corr.residual(xt, xi, True)
            nt = np.linalg.norm(Ft)
            if nt < (1.0 - 0.25 * lam) * nrm or nt < tol:
                x, F, J, nrm = xt, Ft, Jt, nt
                break
            lam *= 0.5
            if lam < 1e-4:
                if nrm < 50.0 * tol:
                    return x, nrm  # stalled on the integration noise floor
                raise NoConvergenceError(
                    f"Newton stalled at residual {nrm:.3e}", nrm)
    if nrm < tol:
        return x, nrm
    raise NoConvergenceError(f"Newton did not converge ({nrm:.3e})", nrm)


def _newton_arclength(corr, pred_x: np.ndarray, pred_xi: float,
                      tangent: np.ndarray, tol: float, max_iter: int
                      ) -> tuple[np.ndarray, float]:
    """Solve [F(x, xi); <(x,xi) - pred, tangent>] = 0 by damped Gauss-Newton."""
    x, xi = pred_x.copy(), float(pred_xi)

    def full_residual(x, xi, with_jac):
        F, J, dxi = corr.residual(x, xi, with_jac)
        arc = tangent[:-1] @ (x - pred_x) + tangent[-1] * (xi - pred_xi)
        Fa = np.concatenate([F, [arc]])
        if not with_jac:
            return Fa, None
        Ja = np.zeros((F.size + 1, x.size + 1))
        Ja[:F.size, :x.size] = J
        Ja[:F.size, -1] = dxi
        Ja[-1, :x.size] = tangent[:-1]
        Ja[-1, -1] = tangent[-1]
        return Fa, Ja

    F, J = full_residual(x, xi, True)
    nrm = np.linalg.norm(F)
    for _ in range(max_iter):
        if nrm < tol:
            return x, xi, nrm
        step, *_ = np.linalg.lstsq(J, -F, rcond=1e-12)
        lam = 1.0
        while True:
            xt = x + lam * step[:-1]
            xit = xi + lam * step[-1]
            Ft, Jt = full_residual(xt, xit, True)
            nt = np.linalg.norm(Ft)
            if nt < (1.0 - 0.25 * lam) * nrm or nt < tol:
                x, xi, F, J, nrm = xt, xit, Ft, Jt, nt
                break
            lam *= 0.5
            if lam < 1e-4:
                if nrm < 50.0 * tol:
                    return x, xi, nrm
                raise NoConvergenceError(
                    f"arclength Newton stalled at {nrm:.3e}", nrm)
    if nrm < tol:
        return x, xi, nrm
    raise NoConvergenceError(f"arclength Newton did not converge ({nrm:.3e})", nrm)


# ---------------------------------------------------------------------------
# public refinement

def refine_periodic(problem: ShootingProblem, guess, xi: float | None = None,
                    anchor_gauge: bool = False) -> LoopTrajectory:
    """Polish a guess (PhaseState or LoopTrajectory) into a periodic loop.

    ``xi`` defaults to the guess loop's parameter value (or its period for
    T-parameterized problems).  The returned loop carries ``param_value``
    and satisfies the closure and symmetry postconditions.  With
    ``anchor_gauge`` a constrained solve pins time-shift/rotation phases
    at the guess, which keeps Newton off the guess's gauge orbit (used
    when switching branches at a bifurcation).
    """
    if xi is None:
        if isinstance(guess, LoopTrajectory):
            xi = guess.param_value if guess.param_value is not None else (
                guess.period if problem.param_name == "T" else None)
        if xi is None:
            raise ValueError("xi required")
    xi = float(xi)
    corr = make_corrector(problem, guess)
    if isinstance(corr, _SymCorrector):
        if isinstance(guess, PhaseState):
            guess = loop_from_state(problem.potential_at(xi), guess,
                                    problem.period_at(xi), problem.K,
                                    rtol=problem.rtol, atol=problem.atol)
        x0 = corr.pack_loop(guess)
        if anchor_gauge:
            corr.set_gauge_anchor(x0, xi)
    else:
        x0 = corr.pack(_anchor_state(guess))
    x, nrm = _newton_fixed(corr, x0, xi, problem.newton_tol, problem.max_iter)
    loop = replace(corr.loop(x, xi), residual=float(nrm))
    return _postconditions(loop, problem, xi)


def _anchor_state(guess) -> PhaseState:
    if isinstance(guess, PhaseState):
        return guess.centered()
    cart = as_frame(guess, FRAME_CARTESIAN)
    d = cart.dim
    return PhaseState(cart.evaluate(0.0, 0).reshape(3, d),
                      cart.evaluate(0.0, 1).reshape(3, d)).centered()


def _postconditions(loop: LoopTrajectory, problem: ShootingProblem,
                    xi: float) -> LoopTrajectory:
    spec = problem.potential_at(xi)
    # dynamics consistency over a short span: long spans would amplify
    # local integration error through the orbit's instability
    span = loop.period / 8.0
    res = closure_residual(spec, loop, span=span,
                           rtol=problem.rtol, atol=problem.atol)
    # the loop cannot be more consistent than its own Fourier truncation
    trunc = function_norm(loop) * np.sqrt(max(loop.tail_energy_fraction(), 0.0))
    tol = max(1e3 * problem.newton_tol, 1e-9, 100.0 * trunc)
    if res > tol:
        raise NoConvergenceError(
            f"refined loop is inconsistent with the flow ({res:.2e})", res)
    if problem.constraints is not None:
        scale = function_norm(loop)
        worst = max(loop_distance(apply_element(g, loop), loop) / scale
                    for g in problem.constraints.elements)
        if worst > 1e-8:
            raise NoConvergenceError(
                f"refined loop violates constraints ({worst:.2e})", worst)
    return loop


def closure_residual(spec: PotentialSpec, loop: LoopTrajectory,
                     span: float | None = None,
                     rtol: float = INTEGRATOR_TOL, atol: float = INTEGRATOR_TOL
                     ) -> float:
    """Phase-space mismatch between the flow and the loop after ``span``.

    With the default span of one period this is the classic closure norm
    |state(T) - state(0)|; shorter spans probe dynamical consistency
    without amplification through orbital instability.
    """
    jac = as_frame(loop, FRAME_JACOBI)
    if span is None:
        span = loop.period
    y0 = np.concatenate([jac.evaluate(0.0, 0), jac.evaluate(0.0, 1)])
    yT = _integrate(spec, y0, span, rtol, atol)
    yexp = np.concatenate([jac.evaluate(span, 0), jac.evaluate(span, 1)])
    return float(np.linalg.norm(yT - yexp))


# ---------------------------------------------------------------------------
# continuation

@dataclass(frozen=True)
class FoldMarker:
    index: int           # index of the branch point nearest the turn
    xi: float


@dataclass(frozen=True)
class BranchPoint:
    xi: float
    loop: LoopTrajectory
    x: np.ndarray        # converged reduced unknowns (restart data)


@dataclass
class Branch:
    """Ordered continuation points with fold markers."""

    problem: ShootingProblem
    points: list[BranchPoint] = field(default_factory=list)
    folds: list[FoldMarker] = field(default_factory=list)
    label: str = ""
    corrector: object | None = None

    @property
    def xis(self) -> np.ndarray:
        return np.array([p.xi for p in self.points])

    @property
    def loops(self) -> list[LoopTrajectory]:
        return [p.loop for p in self.points]

    def nearest(self, xi: float) -> BranchPoint:
        i = int(np.argmin(np.abs(self.xis - xi)))
        return self.points[i]

    def solve_at(self, xi: float, near: BranchPoint | None = None,
                 near_loop: LoopTrajectory | None = None
                 ) -> tuple[np.ndarray, LoopTrajectory]:
        """Fixed-parameter refinement seeded from a nearby branch point.

        ``near_loop`` seeds from an explicit loop instead (useful close to
        folds, where the nearest point by parameter may sit on the other
        arm).
        """
        if near_loop is not None and hasattr(self.corrector, "pack_loop"):
            x0 = self.corrector.pack_loop(near_loop)
        else:
            pt = near if near is not None else self.nearest(xi)
            x0 = pt.x
        x, nrm = _newton_fixed(self.corrector, x0, xi,
                               self.problem.newton_tol, self.problem.max_iter)
        return x, replace(self.corrector.loop(x, xi), residual=float(nrm))

    def arm_of(self, index: int) -> int:
        return sum(1 for f in self.folds if f.index <= index)


def continue_branch(problem: ShootingProblem, seed: LoopTrajectory,
                    xi_range: tuple[float, float],
                    initial_step: float | None = None,
                    max_step: float | None = None, max_points: int = 4000,
                    xi_weight: float | None = None,
                    callback=None, label: str = "") -> Branch:
    """Pseudo-arclength continuation of a converged seed across xi_range.

    Traces in both directions from the seed until the parameter exits the
    range (folds are rounded and marked).  Raises BlockedBranchError when
    the step collapses below 1e-8 of the range with nowhere to go.
    """
    lo, hi = float(min(xi_range)), float(max(xi_range))
    span = max(hi - lo, 1e-12)
    ds0 = 1e-2 * span if initial_step is None else float(initial_step)
    ds_max = 0.05 * span if max_step is None else float(max_step)

    xi0 = seed.param_value
    if xi0 is None:
        raise ValueError("seed must carry param_value")
    corr = make_corrector(problem, seed)
    if isinstance(corr, _SymCorrector):
        x_seed = corr.pack_loop(seed)
    else:
        x_seed = corr.pack(_anchor_state(seed))
    x_seed, nrm0 = _newton_fixed(corr, x_seed, xi0, problem.newton_tol, problem.max_iter)
    loop_seed = replace(corr.loop(x_seed, xi0), residual=float(nrm0))
    seed_pt = BranchPoint(float(xi0), loop_seed, x_seed)

    # weight balancing the xi direction against the state coordinates
    w_xi = (np.linalg.norm(x_seed) + 1.0) / span if xi_weight is None else xi_weight

    halves: list[list[BranchPoint]] = []
    for direction in (+1.0, -1.0):
        pts = [seed_pt]
        ds = ds0
        # first tangent: straight in xi
        tangent = np.zeros(x_seed.size + 1)
        tangent[-1] = direction * w_xi
        tangent /= np.linalg.norm(tangent)
        while len(pts) < max_points:
            cur = pts[-1]
            if len(pts) >= 2:
                prev = pts[-2]
                tangent = np.concatenate([cur.x - prev.x,
                                          [(cur.xi - prev.xi) * w_xi ** 2]])
                nrm = np.linalg.norm(tangent)
                if nrm < 1e-14:
                    break
                tangent /= nrm
            try:
                pred_x = cur.x + ds * tangent[:-1]
                pred_xi = cur.xi + ds * tangent[-1] / w_xi ** 2
                x, xi, nrm = _newton_arclength(corr, pred_x, pred_xi, tangent,
                                               problem.newton_tol, problem.max_iter)
                loop = replace(corr.loop(x, xi), residual=float(nrm))
                pt = BranchPoint(float(xi), loop, x)
                pts.append(pt)
                if callback is not None:
                    callback(pt)
                ds = min(ds * 1.4, ds_max)
            except (NoConvergenceError, IntegrationFailure, np.linalg.LinAlgError):
                ds *= 0.5
                if ds < 1e-8 * span:
                    if len(pts) > 1:
                        break
                    raise BlockedBranchError(
                        f"continuation blocked near xi={pts[-1].xi:.6g}", pts[-1].xi)
                continue
            if pt.xi < lo - 1e-9 or pt.xi > hi + 1e-9:
                break
        halves.append(pts)

    fwd, bwd = halves
    branch = Branch(problem, list(reversed(bwd[1:])) + fwd, label=label,
                    corrector=corr)
    xis = branch.xis
    for i in range(1, len(xis) - 1):
        if (xis[i] - xis[i - 1]) * (xis[i + 1] - xis[i]) < 0:
            branch.folds.append(FoldMarker(i, _fold_xi(xis, i)))
    return branch


def _fold_xi(xis: np.ndarray, i: int) -> float:
    window = xis[max(0, i - 1): i + 2]
    if len(window) < 3:
        return float(xis[i])
    s = np.arange(len(window), dtype=float)
    coef = np.polyfit(s, window, 2)
    if abs(coef[0]) < 1e-30:
        return float(xis[i])
    return float(np.polyval(coef, -coef[1] / (2 * coef[0])))


# ---------------------------------------------------------------------------
# variational solver (Fourier-space Newton on the action gradient)

def action_newton(spec: PotentialSpec, seed: LoopTrajectory,
                  group: SubgroupRecord | None = None, K: int = 24,
                  grad_tol: float = 1e-10, max_iter: int = 60
                  ) -> LoopTrajectory:
    """Solve grad S = 0 over (symmetric) truncated Fourier loops.

    Damped Newton with the assembled action Hessian finds critical points
    of any Morse index, so it reaches saddle-type orbits (the action is
    unbounded below for Lennard-Jones loops, where plain descent would
    collapse into the repulsive core).  Restricting to the fixed subspace
    of a constraint group shrinks the system to a handful of coefficients
    and mods out the time/rotation gauges.  The result is a coarse orbit
    meant to be polished by refine_periodic.
    """
    from .spectrum import GalerkinHessian, _basis_matrix, assemble_hessian, \
        element_matrix
    from .trajectory import pad_loop

    jac = pad_loop(as_frame(seed, FRAME_JACOBI), K)
    T = jac.period
    d = jac.dim
    nb = 2 * K + 1
    nch = 2 * d
    m = max(8 * K, 256)
    B = _basis_matrix(T, K, m)
    weight = T / m

    def to_vec(lp):
        vec = np.empty(nch * nb)
        for c in range(nch):
            seg = vec[c * nb:(c + 1) * nb]
            seg[0] = lp.coeffs[c, 0, 0] * np.sqrt(T)
            seg[1::2] = lp.coeffs[c, 1:, 0] * np.sqrt(T / 2.0)
            seg[2::2] = lp.coeffs[c, 1:, 1] * np.sqrt(T / 2.0)
        return vec

    def to_loop(vec):
        coeffs = np.zeros((nch, K + 1, 2))
        for c in range(nch):
            seg = vec[c * nb:(c + 1) * nb]
            coeffs[c, 0, 0] = seg[0] / np.sqrt(T)
            coeffs[c, 1:, 0] = seg[1::2] / np.sqrt(T / 2.0)
            coeffs[c, 1:, 1] = seg[2::2] / np.sqrt(T / 2.0)
        return replace(jac, coeffs=coeffs)

    w = 2.0 * np.pi / T
    kin = np.zeros(nb)
    for k in range(1, K + 1):
        kin[2 * k - 1] = kin[2 * k] = (w * k) ** 2
    kin_full = np.tile(kin, nch)

    if group is not None:
        meta = GalerkinHessian(np.zeros((0, 0)), T, d, K, tuple(range(nch)), nch)
        P = np.zeros((nch * nb, nch * nb))
        for g in group.elements:
            P += element_matrix(g, meta)
        P /= group.order
        vals, vecs = np.linalg.eigh(0.5 * (P + P.T))
        Q = vecs[:, vals > 0.5]
    else:
        Q = np.eye(nch * nb)

    def gradient(y):
        lp = to_loop(Q @ y)
        qs = lp.sample(m)
        grads = kernels.jac_grad_batch(spec.code, spec.a_value, qs)
        gvec = np.empty(nch * nb)
        for c in range(nch):
            gvec[c * nb:(c + 1) * nb] = B.T @ (weight * grads[:, c])
        return Q.T @ (kin_full * (Q @ y) - gvec)

    y = Q.T @ to_vec(jac)
    g = gradient(y)
    gn = np.linalg.norm(g)
    for _ in range(max_iter):
        if gn < grad_tol:
            return to_loop(Q @ y)
        H = assemble_hessian(spec, to_loop(Q @ y), K=K, n_quad=m,
                             check_convergence=False).matrix
        Hr = Q.T @ H @ Q
        try:
            step = np.linalg.solve(Hr, -g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(Hr, -g, rcond=1e-10)[0]
        t = 1.0
        while t > 1e-6:
            yt = y + t * step
            try:
                gt = gradient(yt)
            except Exception:
                t *= 0.5
                continue
            if np.linalg.norm(gt) < gn * (1.0 - 0.25 * t) or np.linalg.norm(gt) < grad_tol:
                y, g, gn = yt, gt, np.linalg.norm(gt)
                break
            t *= 0.5
        else:
            raise NoConvergenceError(
                f"action Newton stalled at |grad|={gn:.3e}", gn)
    raise NoConvergenceError(f"action Newton did not converge ({gn:.3e})", gn)


# ---------------------------------------------------------------------------
# seeds

def lemniscate_seed(period: float, width: float = 1.1, height: float = 0.35,
                    K: int = 8) -> LoopTrajectory:
    """Coarse figure-eight choreography with the full D6h symmetry.

    Bodies follow Gamma(t) = (A sin wt, B sin 2wt) with lags of T/3; body 3
    sits at the origin at t = 0 as the symmetry conventions assume.
    """
    T = period
    w = 2.0 * np.pi / T
    coeffs = np.zeros((6, K + 1, 2))
    for body in range(3):
        phase = (body + 1) * T / 3.0
        coeffs[2 * body + 0, 1, 0] = width * np.sin(w * phase)
        coeffs[2 * body + 0, 1, 1] = width * np.cos(w * phase)
        coeffs[2 * body + 1, 2, 0] = height * np.sin(2 * w * phase)
        coeffs[2 * body + 1, 2, 1] = height * np.cos(2 * w * phase)
    return LoopTrajectory(period=T, dim=2, frame=FRAME_CARTESIAN, coeffs=coeffs)
