"""Second-variation operator along an orbit: Galerkin assembly and spectrum.

The operator is ``-d^2/dt^2 - Hess U(q(t))`` acting on T-periodic variations
in mass-weighted Jacobi coordinates, discretized in the orthonormal real
Fourier basis ``1/sqrt(T), sqrt(2/T) cos(k w t), sqrt(2/T) sin(k w t)`` up to
harmonic K per channel.  A quadratic form ``u^T H u`` equals the second
derivative of the action along u, so kernel growth signals bifurcation.

Planar orbits embedded in 3D block-diagonalize into in-plane channels and
out-of-plane (z) channels; both blocks can be assembled separately.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .dynamics import PotentialSpec
from .symmetry import GroupElement, SubgroupRecord, channel_matrix, harmonic_blocks
from .trajectory import (FRAME_JACOBI, LoopTrajectory, as_frame, pad_loop,
                         promote_to_3d)

DEFAULT_K = 64


class NotConvergedError(ValueError):
    """Orbit's Fourier tail carries too much energy for spectral work."""


class AmbiguousDeflationError(RuntimeError):
    """A mode projects onto the trivial-zero span at an ambiguous level."""


class UnexpectedDegeneracyError(RuntimeError):
    """An eigenvalue cluster of dimension > 2 appeared."""


@dataclass(frozen=True)
class GalerkinHessian:
    """Assembled symmetric matrix plus the basis bookkeeping."""

    matrix: np.ndarray
    period: float
    dim: int
    K: int
    channels: tuple[int, ...]   # channel indices of the full jacobi frame
    full_channels: int          # 2*dim of the embedding frame

    @property
    def block_size(self) -> int:
        return 2 * self.K + 1

    @property
    def size(self) -> int:
        return len(self.channels) * self.block_size

    def vector_to_loop(self, vec: np.ndarray) -> LoopTrajectory:
        """Unit-norm basis vector -> loop with int |u|^2 dt = |vec|^2."""
        T = self.period
        K = self.K
        coeffs = np.zeros((self.full_channels, K + 1, 2))
        for row, c in enumerate(self.channels):
            seg = vec[row * self.block_size:(row + 1) * self.block_size]
            coeffs[c, 0, 0] = seg[0] / np.sqrt(T)
            coeffs[c, 1:, 0] = seg[1::2] * np.sqrt(2.0 / T)
            coeffs[c, 1:, 1] = seg[2::2] * np.sqrt(2.0 / T)
        dim = 3 if self.full_channels == 6 else 2
        return LoopTrajectory(period=T, dim=dim, frame=FRAME_JACOBI, coeffs=coeffs)

    def loop_to_vector(self, loop: LoopTrajectory) -> np.ndarray:
        T = self.period
        lp = pad_loop(as_frame(loop, FRAME_JACOBI), self.K)
        if lp.n_channels != self.full_channels:
            if lp.n_channels == 4 and self.full_channels == 6:
                lp = promote_to_3d(lp)
            else:
                raise ValueError("loop channel count incompatible with basis")
        vec = np.empty(self.size)
        for row, c in enumerate(self.channels):
            seg = vec[row * self.block_size:(row + 1) * self.block_size]
            seg[0] = lp.coeffs[c, 0, 0] * np.sqrt(T)
            seg[1::2] = lp.coeffs[c, 1:, 0] / np.sqrt(2.0 / T)
            seg[2::2] = lp.coeffs[c, 1:, 1] / np.sqrt(2.0 / T)
        return vec


@dataclass(frozen=True)
class EigenMode:
    """Eigenpair of the second variation, as a loop-shaped direction."""

    kappa: float
    mode: LoopTrajectory
    vector: np.ndarray
    cluster: int = -1
    irrep: str | None = None
    block: str = "planar"          # 'planar' or 'z' for embedded planar orbits

    def tagged(self, **kw) -> "EigenMode":
        return replace(self, **kw)


def _basis_matrix(period: float, K: int, m: int) -> np.ndarray:
    t = np.arange(m) * (period / m)
    w = 2.0 * np.pi / period
    B = np.empty((m, 2 * K + 1))
    B[:, 0] = 1.0 / np.sqrt(period)
    for k in range(1, K + 1):
        B[:, 2 * k - 1] = np.sqrt(2.0 / period) * np.cos(w * k * t)
        B[:, 2 * k] = np.sqrt(2.0 / period) * np.sin(w * k * t)
    return B


def assemble_hessian(spec: PotentialSpec, orbit: LoopTrajectory,
                     K: int | None = None, block: str = "all",
                     n_quad: int | None = None,
                     check_convergence: bool = True) -> GalerkinHessian:
    """Galerkin matrix of ``-d^2/dt^2 - Hess U`` along the orbit.

    ``block`` selects channels for planar orbits embedded in 3D: 'all'
    (native channels), 'planar' or 'z' (assembled from the 3D Hessian of a
    planar orbit, which splits exactly).
    """
    jac = as_frame(orbit, FRAME_JACOBI)
    if check_convergence and not jac.converged:
        raise NotConvergedError(
            f"orbit tail energy {jac.tail_energy_fraction():.2e} exceeds 1e-8")
    if K is None:
        K = jac.K
    dim = jac.dim
    if block in ("planar", "z") and dim == 2:
        jac = promote_to_3d(jac)
        dim = 3
    n_ch_full = 2 * dim
    if block == "all":
        channels = tuple(range(n_ch_full))
    elif block == "planar":
        channels = tuple(c for c in range(n_ch_full) if c % dim != 2)
    elif block == "z":
        if dim != 3:
            raise ValueError("z block requires a 3D embedding")
        channels = tuple(c for c in range(n_ch_full) if c % dim == 2)
    else:
        raise ValueError(f"unknown block {block!r}")

    m = max(8 * K, 256) if n_quad is None else int(n_quad)
    qs = jac.sample(m)
    hess = kernels.jac_hess_batch(spec.code, spec.a_value, qs)

    T = jac.period
    B = _basis_matrix(T, K, m)
    weight = T / m
    nb = 2 * K + 1
    nch = len(channels)
    H = np.zeros((nch * nb, nch * nb))
    for i, ci in enumerate(channels):
        for j, cj in enumerate(channels):
            if j < i:
                continue
            v = -hess[:, ci, cj] * weight
            blockmat = B.T @ (v[:, None] * B)
            H[i * nb:(i + 1) * nb, j * nb:(j + 1) * nb] = blockmat
            if j != i:
                H[j * nb:(j + 1) * nb, i * nb:(i + 1) * nb] = blockmat.T
    w = 2.0 * np.pi / T
    kin = np.empty(nb)
    kin[0] = 0.0
    for k in range(1, K + 1):
        kin[2 * k - 1] = kin[2 * k] = (w * k) ** 2
    for i in range(nch):
        idx = np.arange(i * nb, (i + 1) * nb)
        H[idx, idx] += kin
    asym = np.max(np.abs(H - H.T))
    if asym > 1e-12 * max(1.0, np.max(np.abs(H))):
        raise RuntimeError(f"assembled Hessian asymmetric by {asym:.2e}")
    H = 0.5 * (H + H.T)
    return GalerkinHessian(H, T, jac.dim, K, channels, n_ch_full)


def eigen_spectrum(gal: GalerkinHessian, count: int | None = None,
                   block_tag: str = "planar") -> list[EigenMode]:
    """Lowest eigenpairs, ascending, as orthonormal loop-shaped modes."""
    vals, vecs = np.linalg.eigh(gal.matrix)
    if count is not None:
        vals, vecs = vals[:count], vecs[:, :count]
    return [EigenMode(float(vals[i]), gal.vector_to_loop(vecs[:, i]), vecs[:, i].copy(),
                      block=block_tag)
            for i in range(len(vals))]


def eigen_spectrum_deflated(gal: GalerkinHessian, basis: list[LoopTrajectory],
                            count: int | None = None,
                            block_tag: str = "planar") -> list[EigenMode]:
    """Spectrum restricted to the orthogonal complement of the trivial span.

    Near a bifurcation a genuine kappa -> 0 mode becomes near-degenerate
    with the symmetry-forced zeros and a plain eigensolve mixes them;
    projecting the operator onto the complement separates the candidate
    cleanly (the restriction bias is O(eps^2 / gap) for trivial-mode
    residual eps).
    """
    if not basis:
        return eigen_spectrum(gal, count, block_tag)
    U = np.stack([gal.loop_to_vector(b) for b in basis], axis=1)
    U, _ = np.linalg.qr(U)
    Qfull, _ = np.linalg.qr(np.hstack([U, np.eye(gal.size)]))
    Qc = Qfull[:, U.shape[1]:gal.size]
    Hc = Qc.T @ gal.matrix @ Qc
    vals, vecs = np.linalg.eigh(0.5 * (Hc + Hc.T))
    if count is not None:
        vals, vecs = vals[:count], vecs[:, :count]
    full = Qc @ vecs
    return [EigenMode(float(vals[i]), gal.vector_to_loop(full[:, i]),
                      full[:, i].copy(), block=block_tag)
            for i in range(len(vals))]


def trivial_mode_basis(spec: PotentialSpec, orbit: LoopTrajectory,
                       include_z: bool = False) -> list[LoopTrajectory]:
    """Orthonormalized zero modes forced by time shift and rotations.

    In the Jacobi frame translations vanish identically, leaving qdot and
    the rotation generators: 2 modes for planar motion, 4 in 3D.  With
    ``include_z`` a planar orbit is embedded in 3D so the out-of-plane
    rotations (x and y axes) appear as z-channel modes.
    """
    jac = as_frame(orbit, FRAME_JACOBI)
    if include_z and jac.dim == 2:
        jac = promote_to_3d(jac)
    d = jac.dim
    cand = []
    # time shift: coefficient derivative
    w = 2.0 * np.pi / jac.period
    k = np.arange(jac.K + 1)
    a, b = jac.coeffs[:, :, 0], jac.coeffs[:, :, 1]
    dcoeffs = np.stack([w * k * b, -(w * k) * a], axis=2)
    cand.append(replace(jac, coeffs=dcoeffs))
    # rotations: Q_i -> e_axis x Q_i channelwise
    axes = [2] if d == 2 else [0, 1, 2]
    for ax in axes:
        rc = np.zeros_like(jac.coeffs)
        for v in range(2):
            sl = slice(v * d, (v + 1) * d)
            block = jac.coeffs[sl]
            if d == 2:
                rc[v * d + 0] = -block[1]
                rc[v * d + 1] = block[0]
            else:
                e = np.zeros(3)
                e[ax] = 1.0
                rc[v * d + 0] = e[1] * block[2] - e[2] * block[1]
                rc[v * d + 1] = e[2] * block[0] - e[0] * block[2]
                rc[v * d + 2] = e[0] * block[1] - e[1] * block[0]
        cand.append(replace(jac, coeffs=rc))
    # orthonormalize with rank detection (relative to the largest norm)
    from .trajectory import function_norm, inner_product, loop_axpy, scale_loop
    out: list[LoopTrajectory] = []
    scale = max(function_norm(c) for c in cand)
    for c in cand:
        for b_ in out:
            c = loop_axpy(c, [b_], [-inner_product(c, b_)])
        nrm = function_norm(c)
        if nrm > 1e-8 * scale:
            out.append(scale_loop(c, 1.0 / nrm))
    return out


def deflate(modes: list[EigenMode], basis: list[LoopTrajectory],
            tol_low: float = 0.3, tol_high: float = 0.7) -> list[EigenMode]:
    """Drop modes that are symmetry-forced zeros (projection > 0.5).

    Projections between tol_low and tol_high are ambiguous and raise,
    suggesting a finer truncation rather than guessing.
    """
    from .trajectory import inner_product
    if not basis:
        return list(modes)
    kept = []
    for m in modes:
        proj2 = sum(inner_product(m.mode, b) ** 2 for b in basis)
        p = np.sqrt(max(proj2, 0.0))
        if tol_low < p < tol_high:
            raise AmbiguousDeflationError(
                f"mode kappa={m.kappa:.3e} projects at {p:.3f} onto the "
                "trivial span; refine K")
        if p <= tol_low:
            kept.append(m)
    return kept


def degeneracy_cluster(modes: list[EigenMode], tol_cluster: float = 1e-6,
                       near_zero_frac: float = 0.1) -> list[EigenMode]:
    """Tag modes with degeneracy-cluster ids (within-block, ascending).

    Clusters of dimension > 2 are an error only near zero, where they
    would feed the bifurcation analysis (observed degeneracies there are
    at most double); far-from-zero accidental near-degeneracies, such as
    the shells of core-localized modes on tight Lennard-Jones orbits, are
    tolerated.
    """
    out = []
    next_id = 0
    by_block: dict[str, list[EigenMode]] = {}
    for m in modes:
        by_block.setdefault(m.block, []).append(m)

    def flush(cluster, scale, next_id, tol):
        if len(cluster) > 2:
            # accidental coincidences (inequivalent curves intersecting)
            # separate at a much tighter tolerance; symmetry-forced pairs
            # agree to eigensolver accuracy and stay together
            if tol > 1e-11:
                sub: list[EigenMode] = []
                for m in cluster:
                    if sub and abs(m.kappa - sub[-1].kappa) > tol * 1e-3 * scale:
                        next_id = flush(sub, scale, next_id, tol * 1e-3)
                        sub = []
                    sub.append(m)
                if sub:
                    next_id = flush(sub, scale, next_id, tol * 1e-3)
                return next_id
            if abs(cluster[0].kappa) < near_zero_frac * scale:
                raise UnexpectedDegeneracyError(
                    f"near-zero cluster of size {len(cluster)} at "
                    f"kappa~{cluster[0].kappa:.3e}")
        out.extend(c.tagged(cluster=next_id) for c in cluster)
        return next_id + 1

    for block_modes in by_block.values():
        block_modes.sort(key=lambda m: m.kappa)
        scale = max(max((abs(m.kappa) for m in block_modes), default=1.0), 1e-30)
        cluster: list[EigenMode] = []
        for m in block_modes:
            if cluster and abs(m.kappa - cluster[-1].kappa) > tol_cluster * scale:
                next_id = flush(cluster, scale, next_id, tol_cluster)
                cluster = []
            cluster.append(m)
        if cluster:
            next_id = flush(cluster, scale, next_id, tol_cluster)
    out.sort(key=lambda m: (m.kappa, m.cluster))
    return out


def element_matrix(g: GroupElement, gal: GalerkinHessian) -> np.ndarray:
    """Exact orthogonal matrix of the group action in the Galerkin basis."""
    dim = 3 if gal.full_channels == 6 else 2
    A_full = channel_matrix(g, FRAME_JACOBI, dim)
    A = A_full[np.ix_(gal.channels, gal.channels)]
    # requires the channel subset to be invariant (true for planar/z splits)
    leak = np.max(np.abs(A_full[np.ix_(gal.channels,
                                       [c for c in range(gal.full_channels)
                                        if c not in gal.channels])])) \
        if len(gal.channels) < gal.full_channels else 0.0
    if leak > 1e-14:
        raise ValueError("channel block is not invariant under the element")
    blocks = harmonic_blocks(g, gal.K)
    nb = gal.block_size
    Hg = np.zeros((nb, nb))
    Hg[0, 0] = 1.0
    for k in range(1, gal.K + 1):
        Hg[2 * k - 1: 2 * k + 1, 2 * k - 1: 2 * k + 1] = blocks[k]
    return np.kron(A, Hg)


def commutation_residual(gal: GalerkinHessian, g: GroupElement) -> float:
    Mg = element_matrix(g, gal)
    H = gal.matrix
    num = np.linalg.norm(Mg @ H - H @ Mg)
    return float(num / max(np.linalg.norm(H), 1e-300))
