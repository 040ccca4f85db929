"""Hot numeric kernels: pair potentials, Jacobi-frame dynamics, RK8 integration.

Everything here is written in loop form so the whole module compiles under
``numba.njit`` (see :mod:`choreo8._backend`); with ``CHOREO8_BACKEND=numpy``
the same source runs as plain Python over numpy arrays.

Conventions
-----------
* Potentials are identified by an integer code: ``POT_LJ = 0`` is
  ``u(r) = -1/r^6 + 1/r^12``; ``POT_HOM = 1`` is the homogeneous family
  ``u(r) = -1/(a r^a)`` (attractive for every nonzero ``a``, Newtonian at
  ``a = 1``, log-potential limit as ``a -> 0``).
* Dynamical states live in mass-weighted Jacobi coordinates
  ``q = (sqrt(1/2) * (r2 - r1), sqrt(2/3) * (r3 - (r1 + r2)/2))`` flattened
  axis-minor: ``q[0:d] = Q1``, ``q[d:2d] = Q2`` for spatial dimension ``d``.
  In these coordinates the kinetic energy is ``|qdot|^2 / 2`` and the
  equations of motion are ``qddot = -dU/dq``.
* A phase vector is ``y = [q, qdot]`` of length ``4d``; the variational
  drivers append the flattened ``4d x 4d`` fundamental matrix.
"""
import numpy as np

from ._backend import maybe_njit
from ._rk_tables import A as _RK_A, B as _RK_B, C as _RK_C, E3 as _RK_E3, E5 as _RK_E5

POT_LJ = 0
POT_HOM = 1

# Pair separation r_pair = C1*Q1 + C2*Q2 in mass-weighted Jacobi coordinates,
# for pairs (1,2), (1,3), (2,3).
_SQ2 = np.sqrt(2.0)
_SQ32 = np.sqrt(1.5)
PAIR_COEFF = np.array([
    [_SQ2, 0.0],
    [0.5 * _SQ2, _SQ32],
    [-0.5 * _SQ2, _SQ32],
])

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
_ERR_EXP = -1.0 / 8.0


@maybe_njit
def pot_eval(kind, a, r):
    """Pair potential and its first two radial derivatives at separation r."""
    if kind == POT_LJ:
        ir = 1.0 / r
        ir2 = ir * ir
        ir6 = ir2 * ir2 * ir2
        ir12 = ir6 * ir6
        u = -ir6 + ir12
        up = (6.0 * ir6 - 12.0 * ir12) * ir
        upp = (-42.0 * ir6 + 156.0 * ir12) * ir2
    else:
        ra = r ** (-a)
        u = -ra / a
        up = ra / r
        upp = -(a + 1.0) * ra / (r * r)
    return u, up, upp


@maybe_njit
def jac_potential(kind, a, q):
    """Total potential U at mass-weighted Jacobi configuration q (len 2d)."""
    d = q.shape[0] // 2
    u_tot = 0.0
    for p in range(3):
        c1 = PAIR_COEFF[p, 0]
        c2 = PAIR_COEFF[p, 1]
        rr = 0.0
        for i in range(d):
            v = c1 * q[i] + c2 * q[d + i]
            rr += v * v
        r = np.sqrt(rr)
        u, _, _ = pot_eval(kind, a, r)
        u_tot += u
    return u_tot


@maybe_njit
def jac_grad(kind, a, q):
    """Gradient dU/dq at a Jacobi configuration; collision -> inf entries."""
    d = q.shape[0] // 2
    g = np.zeros(2 * d)
    for p in range(3):
        c1 = PAIR_COEFF[p, 0]
        c2 = PAIR_COEFF[p, 1]
        v = np.empty(d)
        rr = 0.0
        for i in range(d):
            v[i] = c1 * q[i] + c2 * q[d + i]
            rr += v[i] * v[i]
        r = np.sqrt(rr)
        _, up, _ = pot_eval(kind, a, r)
        w = up / r
        for i in range(d):
            g[i] += c1 * w * v[i]
            g[d + i] += c2 * w * v[i]
    return g


@maybe_njit
def jac_hess(kind, a, q):
    """(U, dU/dq, d2U/dq2) at a mass-weighted Jacobi configuration."""
    d = q.shape[0] // 2
    n = 2 * d
    u_tot = 0.0
    g = np.zeros(n)
    h = np.zeros((n, n))
    for p in range(3):
        c1 = PAIR_COEFF[p, 0]
        c2 = PAIR_COEFF[p, 1]
        v = np.empty(d)
        rr = 0.0
        for i in range(d):
            v[i] = c1 * q[i] + c2 * q[d + i]
            rr += v[i] * v[i]
        r = np.sqrt(rr)
        u, up, upp = pot_eval(kind, a, r)
        u_tot += u
        w = up / r
        for i in range(d):
            g[i] += c1 * w * v[i]
            g[d + i] += c2 * w * v[i]
        # d x d pair block: upp * vhat vhat^T + (up/r) * (I - vhat vhat^T)
        for i in range(d):
            for j in range(d):
                b = (upp - w) * v[i] * v[j] / rr
                if i == j:
                    b += w
                h[i, j] += c1 * c1 * b
                h[i, d + j] += c1 * c2 * b
                h[d + i, j] += c2 * c1 * b
                h[d + i, d + j] += c2 * c2 * b
    return u_tot, g, h


@maybe_njit
def jac_grad_batch(kind, a, qs):
    """Potential gradient at each row of qs (m, 2d) -> (m, 2d)."""
    m = qs.shape[0]
    n = qs.shape[1]
    out = np.empty((m, n))
    for s in range(m):
        g = jac_grad(kind, a, qs[s])
        for i in range(n):
            out[s, i] = g[i]
    return out


@maybe_njit
def jac_hess_batch(kind, a, qs):
    """Potential Hessian at each row of qs (m, 2d) -> (m, 2d, 2d)."""
    m = qs.shape[0]
    n = qs.shape[1]
    out = np.empty((m, n, n))
    for s in range(m):
        _, _, h = jac_hess(kind, a, qs[s])
        for i in range(n):
            for j in range(n):
                out[s, i, j] = h[i, j]
    return out


@maybe_njit
def cart_grad_hess(kind, a, pos):
    """(U, grad, hess) in body-major Cartesian coordinates, pos of len 3d."""
    d = pos.shape[0] // 3
    n = 3 * d
    u_tot = 0.0
    g = np.zeros(n)
    h = np.zeros((n, n))
    for i in range(3):
        for j in range(i + 1, 3):
            v = np.empty(d)
            rr = 0.0
            for k in range(d):
                v[k] = pos[j * d + k] - pos[i * d + k]
                rr += v[k] * v[k]
            r = np.sqrt(rr)
            u, up, upp = pot_eval(kind, a, r)
            u_tot += u
            w = up / r
            for k in range(d):
                g[i * d + k] -= w * v[k]
                g[j * d + k] += w * v[k]
            for k in range(d):
                for l in range(d):
                    b = (upp - w) * v[k] * v[l] / rr
                    if k == l:
                        b += w
                    h[i * d + k, i * d + l] += b
                    h[j * d + k, j * d + l] += b
                    h[i * d + k, j * d + l] -= b
                    h[j * d + k, i * d + l] -= b
    return u_tot, g, h


@maybe_njit
def rhs_state(kind, a, y):
    """Phase-space derivative for y = [q, qdot]."""
    n = y.shape[0] // 2
    dy = np.empty(2 * n)
    g = jac_grad(kind, a, y[:n])
    for i in range(n):
        dy[i] = y[n + i]
        dy[n + i] = -g[i]
    return dy


@maybe_njit
def rhs_aug(kind, a, y, nvar):
    """Derivative of [q, qdot, Phi.ravel()]; Phi' = J(t) Phi.

    nvar is the phase-space dimension 4d; Phi is nvar x nvar.
    """
    n = nvar // 2
    dy = np.empty(y.shape[0])
    _, g, hq = jac_hess(kind, a, y[:n])
    for i in range(n):
        dy[i] = y[n + i]
        dy[n + i] = -g[i]
    # Phi stored row-major starting at offset nvar
    for col in range(nvar):
        for i in range(n):
            dy[nvar + i * nvar + col] = y[nvar + (n + i) * nvar + col]
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc -= hq[i, j] * y[nvar + j * nvar + col]
            dy[nvar + (n + i) * nvar + col] = acc
    return dy


@maybe_njit
def _eval_rhs(kind, a, y, nvar):
    if nvar > 0:
        return rhs_aug(kind, a, y, nvar)
    return rhs_state(kind, a, y)


@maybe_njit
def _error_norm(K, h, y_old, y_new, rtol, atol):
    m = y_old.shape[0]
    err_rms = 0.0
    for i in range(m):
        e5 = 0.0
        e3 = 0.0
        for s in range(13):
            e5 += K[s, i] * _RK_E5[s]
            e3 += K[s, i] * _RK_E3[s]
        denom = np.sqrt(e5 * e5 + 0.01 * e3 * e3)
        err = h * e5
        if denom > 0.0:
            err *= abs(e5) / denom
        sc = atol + rtol * max(abs(y_old[i]), abs(y_new[i]))
        err_rms += (err / sc) ** 2
    return np.sqrt(err_rms / m)


@maybe_njit
def _rk_step(kind, a, t, y, f0, h, nvar):
    """One DOP853 stage sweep: returns (y_new, f_new, K)."""
    m = y.shape[0]
    K = np.empty((13, m))
    for i in range(m):
        K[0, i] = f0[i]
    ytmp = np.empty(m)
    for s in range(1, 12):
        for i in range(m):
            acc = 0.0
            for r in range(s):
                acc += _RK_A[s, r] * K[r, i]
            ytmp[i] = y[i] + h * acc
        ks = _eval_rhs(kind, a, ytmp, nvar)
        for i in range(m):
            K[s, i] = ks[i]
    y_new = np.empty(m)
    for i in range(m):
        acc = 0.0
        for s in range(12):
            acc += _RK_B[s] * K[s, i]
        y_new[i] = y[i] + h * acc
    f_new = _eval_rhs(kind, a, y_new, nvar)
    for i in range(m):
        K[12, i] = f_new[i]
    return y_new, f_new, K


@maybe_njit
def _initial_step(kind, a, t0, y0, f0, direction, rtol, atol, nvar):
    m = y0.shape[0]
    d0 = 0.0
    d1 = 0.0
    for i in range(m):
        sc = atol + rtol * abs(y0[i])
        d0 += (y0[i] / sc) ** 2
        d1 += (f0[i] / sc) ** 2
    d0 = np.sqrt(d0 / m)
    d1 = np.sqrt(d1 / m)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    y1 = y0 + h0 * direction * f0
    f1 = _eval_rhs(kind, a, y1, nvar)
    d2 = 0.0
    for i in range(m):
        sc = atol + rtol * abs(y0[i])
        d2 += ((f1[i] - f0[i]) / sc) ** 2
    d2 = np.sqrt(d2 / m) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 8.0)
    return min(100.0 * h0, h1)


@maybe_njit
def integrate_to(kind, a, y0, t0, t1, rtol, atol, h0, nvar):
    """Integrate y' = f(y) from t0 to t1 (either direction).

    Returns (y, status, t_reach, h_last, nsteps); status 0 = ok,
    1 = step collapse (near-collision) at time t_reach.
    """
    span = abs(t1 - t0)
    if span == 0.0:
        return y0.copy(), 0, t0, h0, 0
    direction = 1.0 if t1 > t0 else -1.0
    hmin = 1e-14 * span
    y = y0.copy()
    t = t0
    f = _eval_rhs(kind, a, y, nvar)
    if h0 > 0.0:
        h = min(h0, span)
    else:
        h = min(_initial_step(kind, a, t0, y, f, direction, rtol, atol, nvar), span)
    nsteps = 0
    while direction * (t1 - t) > 0.0:
        if h < hmin:
            return y, 1, t, h, nsteps
        if direction * (t + direction * h - t1) > 0.0:
            h = abs(t1 - t)
        y_new, f_new, K = _rk_step(kind, a, t, y, f, direction * h, nvar)
        err = _error_norm(K, direction * h, y, y_new, rtol, atol)
        if err < 1.0:
            t = t + direction * h
            y = y_new
            f = f_new
            if err == 0.0:
                factor = _MAX_FACTOR
            else:
                factor = min(_MAX_FACTOR, _SAFETY * err ** _ERR_EXP)
            h = h * factor
            nsteps += 1
        else:
            h = h * max(_MIN_FACTOR, _SAFETY * err ** _ERR_EXP)
        if nsteps > 10_000_000:
            return y, 2, t, h, nsteps
    return y, 0, t1, h, nsteps


@maybe_njit
def integrate_collect(kind, a, y0, t0, ts, rtol, atol, nvar):
    """Integrate and record the state at each time in the sorted array ts."""
    nout = ts.shape[0]
    out = np.empty((nout, y0.shape[0]))
    y = y0.copy()
    t = t0
    h = -1.0
    for k in range(nout):
        y, status, t_reach, h, _ = integrate_to(kind, a, y, t, ts[k], rtol, atol, h, nvar)
        if status != 0:
            return out, status, t_reach
        t = ts[k]
        for i in range(y.shape[0]):
            out[k, i] = y[i]
    return out, 0, t
