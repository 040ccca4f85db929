"""Detection, classification, and following of equivariant bifurcations.

The workflow along a solution branch:

1. assemble the second-variation spectrum at each continuation point,
   deflate the symmetry-forced zeros, and cluster degeneracies;
2. track eigenvalue clusters across the parameter by eigenvector overlap
   and bracket every zero crossing;
3. refine each crossing with a secant iteration on kappa(xi), classify the
   critical cluster's irreducible representation, and map it to one of the
   four bifurcation types (trivial, two-fold, three-fold, six-fold);
4. sample the reduced action S(q + phi r) - S(q) over the critical modes,
   fit the type's normal form, predict child directions and sides;
5. seed children at q + phi r just off the crossing, polish them with
   unconstrained shooting, verify predicted symmetry and congruence.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import PotentialSpec, action_of_loop
from .orbits import Branch, NoConvergenceError, refine_periodic
from .spectrum import (EigenMode, assemble_hessian, degeneracy_cluster,
                       eigen_spectrum_deflated, trivial_mode_basis)
from .symmetry import (D6H, ChildPrediction, IrrepLabel, SubgroupRecord,
                       apply_element, classify_irrep, detect_symmetry,
                       element_name, irrep_fold, predicted_children,
                       representation_matrices)
from .trajectory import (LoopTrajectory, function_norm, loop_axpy,
                         loop_distance)


class ModeMatchingError(RuntimeError):
    """Eigenvector overlap across a step fell below threshold."""


class MissedBranchError(RuntimeError):
    """A predicted child refinement fell back onto the parent orbit."""


class PoorFitError(RuntimeError):
    """Normal-form fit residual exceeded its bound."""


@dataclass
class Cluster:
    kappa: float
    modes: list[EigenMode]
    block: str

    @property
    def d(self) -> int:
        return len(self.modes)

    @property
    def vectors(self) -> np.ndarray:
        return np.stack([m.vector for m in self.modes], axis=1)


@dataclass
class SpectrumPoint:
    xi: float
    loop: LoopTrajectory
    clusters: list[Cluster]


@dataclass
class EigencurvePoint:
    xi: float
    kappa: float


@dataclass
class Eigencurve:
    """One tracked cluster followed along the branch."""

    block: str
    d: int
    samples: list[EigencurvePoint] = field(default_factory=list)
    cluster_refs: list[tuple[int, int]] = field(default_factory=list)  # (pt, cluster)


@dataclass
class Crossing:
    xi: float
    slope: float                     # d kappa / d xi at the crossing
    parent_loop: LoopTrajectory
    cluster: Cluster                 # refined modes at the crossing
    irrep: IrrepLabel
    gauge: np.ndarray
    record: SubgroupRecord           # parent symmetry group
    block: str
    flag: str = ""                   # 'X' for parent-attachment crossings

    @property
    def d(self) -> int:
        return self.cluster.d


@dataclass
class ChildResult:
    theta: float | None              # catalog-gauge angle (2D) or signed r (1D)
    side: str                        # 'L' or 'R'
    loop: LoopTrajectory
    detected: SubgroupRecord
    action: float
    matched_prediction: bool


@dataclass
class BifurcationEvent:
    xi: float
    irrep_name: str
    d: int
    bif_type: int
    side: str                        # predicted side: 'L', 'R', 'B'
    side_confirmed: str | None
    coefficients: dict
    fit_residual: float
    predictions: list[ChildPrediction]
    crossing: Crossing
    children: list[ChildResult] = field(default_factory=list)
    congruence: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    surface: list = field(default_factory=list)

    @property
    def flag(self) -> str:
        return self.crossing.flag


# ---------------------------------------------------------------------------
# spectra along a branch

def spectrum_at(spec: PotentialSpec, loop: LoopTrajectory, K: int,
                count: int = 18, blocks: tuple[str, ...] = ("planar",),
                tol_cluster: float = 1e-6) -> list[Cluster]:
    """Deflated, clustered low modes of the second variation at one orbit.

    Blocks: 'planar' (in-plane channels of a planar orbit), 'z' (its
    out-of-plane channels, which decouple exactly), or 'all' (native
    channels of a 3D orbit).
    """
    all_modes: list[EigenMode] = []
    for block in blocks:
        if block == "planar" and loop.dim == 2:
            gal = assemble_hessian(spec, loop, K=K, block="all")
            basis = trivial_mode_basis(spec, loop)
        elif block == "z":
            gal = assemble_hessian(spec, loop, K=K, block="z")
            basis = [b for b in trivial_mode_basis(spec, loop, include_z=True)
                     if _z_fraction(b) > 0.5]
        elif block == "all":
            gal = assemble_hessian(spec, loop, K=K, block="all")
            basis = trivial_mode_basis(spec, loop)
        else:
            raise ValueError(f"unsupported block {block!r} for dim={loop.dim}")
        modes = eigen_spectrum_deflated(gal, basis, count=count + 4,
                                        block_tag=block)
        all_modes.extend(modes[:count])
    tagged = degeneracy_cluster(all_modes, tol_cluster=tol_cluster)
    clusters: dict[tuple[str, int], list[EigenMode]] = {}
    for m in tagged:
        clusters.setdefault((m.block, m.cluster), []).append(m)
    out = [Cluster(float(np.mean([m.kappa for m in ms])), ms, blk)
           for (blk, _), ms in clusters.items()]
    out.sort(key=lambda c: c.kappa)
    return out


def _z_fraction(loop: LoopTrajectory) -> float:
    if loop.dim != 3:
        return 0.0
    total = float(np.sum(loop.coeffs ** 2))
    z = float(np.sum(loop.coeffs[2::3] ** 2))
    return z / max(total, 1e-300)


def scan_branch_spectra(spec_of, branch: Branch, K: int, count: int = 18,
                        blocks: tuple[str, ...] = ("planar",)
                        ) -> list[SpectrumPoint]:
    """Spectra at every branch point; ``spec_of(xi)`` supplies the potential."""
    out = []
    for pt in branch.points:
        clusters = spectrum_at(spec_of(pt.xi), pt.loop, K, count, blocks)
        out.append(SpectrumPoint(pt.xi, pt.loop, clusters))
    return out


def _subspace_overlap(V: np.ndarray, W: np.ndarray) -> float:
    """Smallest principal-angle cosine between equal-dim column spaces.

    Vectors live in the channel-major Galerkin basis; matching across
    different truncations K truncates each channel block to the shorter
    one before comparing.
    """
    if V.shape[1] != W.shape[1]:
        return 0.0
    if V.shape[0] != W.shape[0]:
        V, W = _align_blocks(V, W)
    s = np.linalg.svd(V.T @ W, compute_uv=False)
    return float(s.min()) if s.size else 0.0


def _align_blocks(V: np.ndarray, W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if V.shape[0] > W.shape[0]:
        W, V = _align_blocks(W, V)
        return V, W
    # infer channel counts from a common divisor of block sizes
    for nch in (4, 6, 2):
        if V.shape[0] % nch == 0 and W.shape[0] % nch == 0:
            nb_v = V.shape[0] // nch
            nb_w = W.shape[0] // nch
            if nb_v % 2 == 1 and nb_w % 2 == 1:
                break
    else:
        n = min(V.shape[0], W.shape[0])
        return V[:n], W[:n]
    keep = min(nb_v, nb_w)
    Vb = V.reshape(nch, nb_v, -1)[:, :keep].reshape(nch * keep, -1)
    Wb = W.reshape(nch, nb_w, -1)[:, :keep].reshape(nch * keep, -1)
    return Vb, Wb


def track_curves(points: list[SpectrumPoint], overlap_tol: float = 0.9,
                 kappa_window: float | None = None) -> list[Eigencurve]:
    """Link clusters across consecutive points by eigenvector overlap."""
    curves: list[Eigencurve] = []
    active: dict[int, Eigencurve] = {}
    for ipt, sp in enumerate(points):
        used: set[int] = set()
        new_active: dict[int, Eigencurve] = {}
        if ipt > 0:
            prev = points[ipt - 1]
            for jc, curve in active.items():
                V = prev.clusters[jc].vectors
                best, best_ov = None, 0.0
                for kc, cl in enumerate(sp.clusters):
                    if kc in used or cl.block != curve.block or cl.d != curve.d:
                        continue
                    ov = _subspace_overlap(V, cl.vectors)
                    if ov > best_ov:
                        best, best_ov = kc, ov
                if best is not None and best_ov >= overlap_tol:
                    used.add(best)
                    curve.samples.append(EigencurvePoint(sp.xi, sp.clusters[best].kappa))
                    curve.cluster_refs.append((ipt, best))
                    new_active[best] = curve
        for kc, cl in enumerate(sp.clusters):
            if kc in used:
                continue
            if kappa_window is not None and abs(cl.kappa) > kappa_window:
                continue
            curve = Eigencurve(cl.block, cl.d,
                               [EigencurvePoint(sp.xi, cl.kappa)], [(ipt, kc)])
            curves.append(curve)
            new_active[kc] = curve
        active = new_active
    return curves


# ---------------------------------------------------------------------------
# crossing location and classification

def locate_zero_crossings(branch: Branch, points: list[SpectrumPoint],
                          curves: list[Eigencurve], spec_of, K: int,
                          record: SubgroupRecord,
                          blocks: tuple[str, ...] = ("planar",),
                          kappa_tol: float = 1e-10,
                          birth_xi: float | None = None,
                          count: int = 18) -> list[Crossing]:
    """Bracket sign changes on each tracked curve and refine by secant."""
    crossings = []
    for curve in curves:
        for i in range(len(curve.samples) - 1):
            s0, s1 = curve.samples[i], curve.samples[i + 1]
            if s0.kappa == 0.0 or s0.kappa * s1.kappa >= 0.0:
                continue
            ref_pt, ref_cl = curve.cluster_refs[i]
            ref_vec = points[ref_pt].clusters[ref_cl].vectors
            cr = _refine_crossing(branch, spec_of, K, record, blocks,
                                  (s0.xi, s0.kappa), (s1.xi, s1.kappa),
                                  ref_vec, curve.block, curve.d, kappa_tol,
                                  count, seed_index=ref_pt)
            if cr is not None:
                crossings.append(cr)
    crossings.sort(key=lambda c: c.xi)
    # X flag: parent-attachment points (simultaneous 1D crossings at the
    # branch's birth parameter are where this branch attaches to its parent)
    for c in crossings:
        if birth_xi is not None and abs(c.xi - birth_xi) < 5e-3 * max(1.0, abs(birth_xi)):
            c.flag = "X"
    return crossings


def _kappa_of_matched(spec: PotentialSpec, loop: LoopTrajectory, K: int,
                      ref_vec: np.ndarray, block: str, d: int,
                      blocks: tuple[str, ...], count: int
                      ) -> tuple[float, Cluster]:
    clusters = spectrum_at(spec, loop, K, count=count, blocks=blocks)
    best, best_ov = None, 0.0
    for cl in clusters:
        if cl.block != block or cl.d != d:
            continue
        ov = _subspace_overlap(ref_vec, cl.vectors)
        if ov > best_ov:
            best, best_ov = cl, ov
    if best is None or best_ov < 0.8:
        raise ModeMatchingError(f"no matching cluster (best overlap {best_ov:.2f})")
    return best.kappa, best


def _refine_crossing(branch, spec_of, K, record, blocks, lo, hi, ref_vec,
                     block, d, kappa_tol, count,
                     seed_index: int | None = None) -> Crossing | None:
    (xi0, k0), (xi1, k1) = lo, hi
    near = branch.points[seed_index] if seed_index is not None else None
    ref_loop = near.loop if near is not None else None
    loop = None
    cluster = None
    xi = xi0
    for _ in range(40):
        xi_new = xi1 - k1 * (xi0 - xi1) / (k0 - k1)
        if not (min(xi0, xi1) <= xi_new <= max(xi0, xi1)):
            xi_new = 0.5 * (xi0 + xi1)
        if near is None:
            _, loop = branch.solve_at(xi_new, near_loop=ref_loop)
        else:
            _, loop = branch.solve_at(xi_new, near=near)
        k_new, cluster = _kappa_of_matched(spec_of(xi_new), loop, K, ref_vec,
                                           block, d, blocks, count)
        if abs(k_new) < kappa_tol or abs(xi1 - xi0) < 1e-12 * max(1.0, abs(xi_new)):
            xi = xi_new
            break
        if k_new * k0 < 0:
            xi1, k1 = xi_new, k_new
        else:
            xi0, k0 = xi_new, k_new
        xi = xi_new
    slope = (k1 - k0) / (xi1 - xi0) if xi1 != xi0 else 0.0
    D = representation_matrices(
        [m.mode for m in cluster.modes], record.generators)
    label, gauge = classify_irrep(D, record)
    return Crossing(float(xi), float(slope), loop, cluster, label, gauge,
                    record, block)


def classify_bifurcation(irrep: IrrepLabel, d: int,
                         record: SubgroupRecord) -> int:
    """Map an irrep to its bifurcation type (1..4) via the rotation order."""
    fold = irrep_fold(irrep, record)
    if d == 1:
        return 1 if fold == 1 else 2
    if fold == 3:
        return 3
    if fold == 6:
        return 4
    raise ValueError(f"unsupported irrep fold {fold} for d={d}")


# ---------------------------------------------------------------------------
# reduced-action surface and normal forms

@dataclass
class SurfaceSample:
    r: np.ndarray          # (d,) displacement coefficients (catalog gauge)
    dS: float
    valid: bool


def aligned_modes(crossing: Crossing) -> list[LoopTrajectory]:
    """Critical modes rotated to the catalog basis of the crossing irrep."""
    modes = [m.mode for m in crossing.cluster.modes]
    if crossing.d == 1:
        return modes
    Om = crossing.gauge
    # modes transform as g phi = phi D(g); catalog basis phi' = phi Om^T
    out = []
    for col in range(2):
        out.append(loop_axpy(modes[0], [modes[0], modes[1]],
                             [Om.T[0, col] - 1.0, Om.T[1, col]]))
    return out


def sample_reduced_action(spec: PotentialSpec, orbit: LoopTrajectory,
                          phi: list[LoopTrajectory], grid: list[np.ndarray],
                          n_quad: int | None = None) -> list[SurfaceSample]:
    """S(q + phi r) - S(q) on the given displacement grid."""
    S0 = action_of_loop(spec, orbit, n_quad=n_quad)
    out = []
    for r in grid:
        r = np.atleast_1d(np.asarray(r, dtype=float))
        try:
            disp = loop_axpy(orbit, phi, list(r))
            dS = action_of_loop(spec, disp, n_quad=n_quad) - S0
            out.append(SurfaceSample(r, float(dS), True))
        except Exception:
            out.append(SurfaceSample(r, np.nan, False))
    return out


def validity_radius(spec: PotentialSpec, orbit: LoopTrajectory,
                    phi0: LoopTrajectory, target: float = 3e-4) -> float:
    """1D probe: radius where |S(q + phi r) - S(q)| reaches ``target``.

    The normal forms hold asymptotically; anchoring the probe on the size
    of the action increment keeps fits above quadrature noise while small
    enough for the truncated expansions to dominate.
    """
    S0 = abs(action_of_loop(spec, orbit)) + 1.0
    r = 1e-3
    for _ in range(40):
        try:
            dS = abs(action_of_loop(spec, loop_axpy(orbit, [phi0], [r]))
                     - action_of_loop(spec, orbit))
        except Exception:
            return r / 2.0
        if dS > target * S0:
            return r
        r *= 1.5
        if r > 2.0:
            return 2.0
    return r


def polar_grid(rmax: float, n_r: int = 6, n_theta: int = 24) -> list[np.ndarray]:
    grid = []
    for ir in range(1, n_r + 1):
        rr = rmax * ir / n_r
        for it in range(n_theta):
            th = 2.0 * np.pi * it / n_theta
            grid.append(np.array([rr * np.cos(th), rr * np.sin(th)]))
    return grid


def line_grid(rmax: float, n: int = 13) -> list[np.ndarray]:
    rs = np.linspace(-rmax, rmax, n)
    return [np.array([r]) for r in rs if abs(r) > 1e-12]


def fit_normal_form(samples: list[SurfaceSample], bif_type: int,
                    constrain_phase: bool, max_residual: float = 0.05) -> dict:
    """Least-squares fit of the type's truncated reduced-action model.

    Returns the coefficient dict including 'fit_residual' (relative to the
    rms of the fitted surface values); raises PoorFitError above the bound.
    """
    pts = [s for s in samples if s.valid]
    if not pts:
        raise PoorFitError("no valid surface samples")
    dS = np.array([s.dS for s in pts])
    if bif_type in (1, 2):
        r = np.array([s.r[0] for s in pts])
        if bif_type == 1:
            cols = [r ** 2 / 2.0, r ** 3 / 6.0, r ** 4 / 24.0]
            names = ["kappa", "A3", "A4"]
        else:
            cols = [r ** 2 / 2.0, r ** 4 / 24.0, r ** 6 / 720.0]
            names = ["kappa", "A4", "A6"]
        A = np.stack(cols, axis=1)
        coef, *_ = np.linalg.lstsq(A, dS, rcond=None)
        resid = dS - A @ coef
        out = dict(zip(names, coef))
    else:
        r = np.array([np.hypot(s.r[0], s.r[1]) for s in pts])
        th = np.array([np.arctan2(s.r[1], s.r[0]) for s in pts])
        if bif_type == 3:
            cols = [r ** 2 / 2.0, r ** 3 * np.sin(3 * th) / 6.0,
                    r ** 4 / 24.0]
            names = ["kappa", "A3p_s", "A40"]
            if not constrain_phase:
                cols.insert(2, r ** 3 * np.cos(3 * th) / 6.0)
                names.insert(2, "A3p_c")
            A = np.stack(cols, axis=1)
            coef, *_ = np.linalg.lstsq(A, dS, rcond=None)
            resid = dS - A @ coef
            out = dict(zip(names, coef))
            cs = out.pop("A3p_s")
            cc = out.pop("A3p_c", None)
            if cc is None:
                out["A3p"] = float(cs)       # signed; phase pinned to 0
                out["phi3p"] = 0.0
            else:
                out["A3p"] = float(np.hypot(cs, cc))
                out["phi3p"] = float(np.arctan2(cc, cs) / 3.0)
        else:
            cols = [r ** 2 / 2.0, r ** 4 / 24.0,
                    r ** 6 * np.cos(6 * th) / 720.0, r ** 6 / 720.0]
            names = ["kappa", "A40", "A6p_c", "A6pp"]
            if not constrain_phase:
                cols.insert(3, r ** 6 * np.sin(6 * th) / 720.0)
                names.insert(3, "A6p_s")
            A = np.stack(cols, axis=1)
            coef, *_ = np.linalg.lstsq(A, dS, rcond=None)
            resid = dS - A @ coef
            out = dict(zip(names, coef))
            cc = out.pop("A6p_c")
            cs = out.pop("A6p_s", None)
            if cs is None:
                out["A6p"] = float(cc)       # signed; phase pinned to 0
                out["phi6p"] = 0.0
            else:
                out["A6p"] = float(np.hypot(cc, cs))
                out["phi6p"] = float(np.arctan2(-cs, cc) / 6.0)
    scale = float(np.sqrt(np.mean(dS ** 2))) or 1.0
    rel = float(np.sqrt(np.mean(resid ** 2)) / scale)
    out["fit_residual"] = rel
    if rel > max_residual:
        raise PoorFitError(f"normal-form fit residual {rel:.3f} exceeds "
                           f"{max_residual}")
    return {k: float(v) for k, v in out.items()}


def angular_spectrum(samples: list[SurfaceSample], radius: float,
                     n_theta: int = 24) -> np.ndarray:
    """|FFT| over theta of the surface at the sampled radius."""
    ring = [s for s in samples if s.valid and
            abs(np.hypot(s.r[0], s.r[1]) - radius) < 1e-9]
    ring.sort(key=lambda s: np.arctan2(s.r[1], s.r[0]) % (2 * np.pi))
    vals = np.array([s.dS for s in ring])
    return np.abs(np.fft.rfft(vals)) / len(vals)


# ---------------------------------------------------------------------------
# event assembly

def build_event(spec: PotentialSpec, crossing: Crossing,
                n_theta: int = 24, n_r: int = 6) -> BifurcationEvent:
    """Sample the reduced action at the crossing and fit its normal form."""
    bif_type = classify_bifurcation(crossing.irrep, crossing.d, crossing.record)
    phi = aligned_modes(crossing)
    orbit = crossing.parent_loop
    rmax = validity_radius(spec, orbit, phi[0])
    constrain = crossing.irrep.name.startswith("D")
    coeffs: dict = {}
    fit_res = np.nan
    samples: list[SurfaceSample] = []
    for attempt in range(4):
        grid = line_grid(rmax) if crossing.d == 1 else \
            polar_grid(rmax, n_r=n_r, n_theta=n_theta)
        samples = sample_reduced_action(spec, orbit, phi, grid)
        try:
            coeffs = fit_normal_form(samples, bif_type, constrain)
            fit_res = coeffs.pop("fit_residual")
            break
        except PoorFitError:
            rmax /= 1.6
            if attempt == 3:
                raise
    preds = predicted_children(crossing.record, crossing.irrep)
    side = predicted_side(bif_type, crossing.slope, coeffs)
    ev = BifurcationEvent(
        xi=crossing.xi, irrep_name=crossing.irrep.name, d=crossing.d,
        bif_type=bif_type, side=side, side_confirmed=None,
        coefficients=coeffs, fit_residual=fit_res, predictions=preds,
        crossing=crossing)
    ev.notes.append(f"surface sampled at rmax={rmax:.4g}")
    ev.surface = samples
    return ev


def predicted_side(bif_type: int, slope: float, coeffs: dict) -> str:
    """'B' for types 1 and 3; the kappa/A4 < 0 side for types 2 and 4."""
    if bif_type in (1, 3):
        return "B"
    A4 = coeffs.get("A4", coeffs.get("A40", 0.0))
    if A4 == 0.0 or slope == 0.0:
        return "?"
    return "R" if A4 * slope < 0 else "L"


# ---------------------------------------------------------------------------
# child prediction and refinement

def _child_amplitude(bif_type: int, kappa: float, coeffs: dict,
                     fallback: bool) -> float | None:
    """Leading-order child amplitude; with ``fallback`` the magnitude is
    used even when the main-term quartic sign forbids it.

    The sampled surface is the main term only, so its quartic coefficient
    can differ (even in sign) from the reduced action's through couplings
    into the eliminated directions; child existence is decided by actual
    refinement, not by the fitted sign.
    """
    if bif_type == 1:
        A3 = coeffs["A3"]
        return -2.0 * kappa / A3 if A3 != 0 else None
    if bif_type == 2:
        val = -6.0 * kappa / coeffs["A4"]
        if val <= 0 and fallback:
            val = abs(val)
        return np.sqrt(val) if val > 0 else None
    if bif_type == 3:
        return abs(2.0 * kappa / coeffs["A3p"])
    val = -6.0 * kappa / coeffs["A40"]
    if val <= 0 and fallback:
        val = abs(val)
    return np.sqrt(val) if val > 0 else None


def child_directions(bif_type: int, kappa: float, coeffs: dict,
                     fallback: bool = False) -> list[tuple[float, ...]]:
    """Normal-form critical directions (r1[, r2]) at the given kappa."""
    amp = _child_amplitude(bif_type, kappa, coeffs, fallback)
    if amp is None:
        return []
    if bif_type == 1:
        return [(amp,)]
    if bif_type == 2:
        return [(amp,), (-amp,)]
    if bif_type == 3:
        # angular critical points with positive radius: sin(3t + 3phi) = s,
        # s = -sign(kappa A3'), giving three rays per side of the crossing
        phi3 = coeffs.get("phi3p", 0.0)
        s = -np.sign(kappa * coeffs["A3p"]) or 1.0
        base = s * np.pi / 6.0 - phi3
        thetas = [base + 2.0 * np.pi * n / 3.0 for n in range(3)]
        amp = abs(amp)
        return [(amp * np.cos(t), amp * np.sin(t)) for t in thetas]
    phi6 = coeffs.get("phi6p", 0.0)
    thetas = [np.pi * n / 6.0 - phi6 for n in range(12)]
    return [(amp * np.cos(t), amp * np.sin(t)) for t in thetas]


def predict_and_refine_branches(event: BifurcationEvent, branch: Branch,
                                spec_of, K: int, dxi: float,
                                directions: list[int] | None = None,
                                sides: tuple[int, ...] = (+1, -1),
                                max_doublings: int = 3,
                                detect_tol: float = 1e-5
                                ) -> list[ChildResult]:
    """Seed q + phi r children near the crossing and polish by shooting.

    ``directions`` selects a subset of the type's critical directions
    (indices into child_directions); default all.  Children are refined
    without symmetry constraints and their detected group is compared to
    the isotropy prediction.
    """
    crossing = event.crossing
    problem = branch.problem
    results: list[ChildResult] = []
    if event.bif_type == 1:
        # trivial type: the children are the parent branch itself on both
        # kappa sides (a fold when xi turns); nothing to refine separately
        event.side_confirmed = "B"
        return results
    for side_sign in sides:
        step = dxi
        for _attempt in range(max_doublings + 1):
            xi_c = crossing.xi + side_sign * step
            try:
                _, parent_here = branch.solve_at(xi_c, near_loop=crossing.parent_loop)
            except NoConvergenceError:
                break
            try:
                kappa_here, cl = _kappa_of_matched(
                    spec_of(xi_c), parent_here, K, crossing.cluster.vectors,
                    crossing.block, crossing.d, (crossing.block,), 18)
            except ModeMatchingError:
                break
            phi = [m.mode for m in cl.modes]
            if crossing.d == 2:
                D = representation_matrices(phi, crossing.record.generators)
                try:
                    _, gauge = classify_irrep(D, crossing.record)
                except Exception:
                    gauge = crossing.gauge
                phi = _apply_gauge(phi, gauge)
            if crossing.block == "z" and parent_here.dim == 2:
                from .trajectory import promote_to_3d
                parent_here = promote_to_3d(parent_here)
            dirs = child_directions(event.bif_type, kappa_here,
                                    event.coefficients, fallback=True)
            if not dirs:
                break
            take = list(range(len(dirs))) if directions is None else directions
            ok_here = []
            for di in take:
                if di >= len(dirs):
                    continue
                rvec = np.atleast_1d(np.asarray(dirs[di], dtype=float))
                theta = float(np.arctan2(rvec[1], rvec[0])) if len(rvec) == 2 \
                    else float(rvec[0])
                predicted = _prediction_for_direction(event.predictions, rvec)
                child = None
                detected = None
                for mult in (1.0, 1.6, 0.6, 2.5):
                    seed = loop_axpy(parent_here, phi, list(mult * rvec))
                    cand = _refine_child(problem, seed, xi_c, predicted)
                    if cand is None:
                        continue
                    dist = loop_distance(cand, parent_here)
                    if dist < 0.2 * mult * np.linalg.norm(rvec):
                        continue  # fell back to the parent
                    if dist > 0.5 * function_norm(parent_here):
                        continue  # escaped the local neighborhood entirely
                    det, _ = detect_symmetry(cand, D6H, tol=detect_tol)
                    if det.elements >= crossing.record.elements:
                        continue  # landed on a parent-symmetric orbit (other arm)
                    if _is_parent_copy(spec_of(xi_c), cand, crossing, kappa_here):
                        continue  # gauge-moved copy of the parent
                    child, detected = cand, det
                    break
                if child is None:
                    continue
                matched = _matches_prediction(event.predictions, detected)
                results.append(ChildResult(
                    theta=theta, side="R" if side_sign > 0 else "L",
                    loop=child, detected=detected,
                    action=action_of_loop(spec_of(xi_c), child),
                    matched_prediction=matched))
                ok_here.append(di)
            if ok_here:
                break
            step *= 2.0
    event.children.extend(results)
    if results:
        sides_seen = {c.side for c in results}
        event.side_confirmed = "B" if sides_seen == {"L", "R"} else sides_seen.pop()
        if event.side not in ("B", event.side_confirmed):
            event.notes.append(
                f"fitted side {event.side} disagrees with confirmed side "
                f"{event.side_confirmed}: main-term quartic sign is not the "
                "reduced action's")
    return results


def _apply_gauge(phi: list[LoopTrajectory], gauge: np.ndarray
                 ) -> list[LoopTrajectory]:
    out = []
    for col in range(2):
        out.append(loop_axpy(phi[0], [phi[0], phi[1]],
                             [gauge.T[0, col] - 1.0, gauge.T[1, col]]))
    return out


def _is_parent_copy(spec: PotentialSpec, cand: LoopTrajectory,
                    crossing: Crossing, kappa_parent: float) -> bool:
    """Spectral test for gauge-moved parent copies.

    A time-shifted or rotated copy of the parent passes distance and
    symmetry filters (its detected group is the gauge-invariant part of
    the parent's), but its spectrum is identical: the mode matched to the
    crossing cluster keeps kappa_parent.  A genuine child flips the sign
    (leading order -2 kappa for the one-dimensional types).
    """
    try:
        clusters = spectrum_at(spec, cand, max(cand.K, 64),
                               blocks=(crossing.block,))
    except Exception:
        return False
    for cl in clusters:
        if cl.block != crossing.block or cl.d != crossing.d:
            continue
        ov = _subspace_overlap(crossing.cluster.vectors, cl.vectors)
        if ov > 0.9 and abs(cl.kappa - kappa_parent) < 0.25 * abs(kappa_parent):
            return True
    return False


def _prediction_for_direction(preds: list[ChildPrediction],
                              rvec: np.ndarray) -> SubgroupRecord | None:
    """The isotropy subgroup expected for a concrete critical direction."""
    if len(rvec) == 1:
        for p in preds:
            if p.theta_family == "sign":
                return p.subgroup
        return None
    by_tag = {p.theta_family: p for p in preds}
    if "any" in by_tag:
        return by_tag["any"].subgroup
    theta = np.arctan2(rvec[1], rvec[0])
    m = int(round(theta / (np.pi / 6.0)))
    on_axis = abs(theta - m * np.pi / 6.0) < 1e-9
    m %= 12
    if not on_axis:
        p = by_tag.get("otherwise")
        return p.subgroup if p else None
    axis = m % 6
    if axis % 2 == 0:
        p = by_tag.get("even") or by_tag.get("otherwise")
        return p.subgroups[axis // 2] if p and p.theta_family == "even" \
            else (p.subgroup if p else None)
    p = by_tag.get("odd") or by_tag.get("otherwise")
    return p.subgroups[(axis - 1) // 2] if p and p.theta_family == "odd" \
        else (p.subgroup if p else None)


def _refine_child(problem, seed: LoopTrajectory, xi_c: float,
                  predicted: SubgroupRecord | None) -> LoopTrajectory | None:
    """Constrained refinement toward the predicted symmetry, then a free
    polish so symmetry detection on the result is a real check.

    Near a bifurcation every orbit Newton system is poorly conditioned
    (the critical multiplier sits at one); constraining to the child's
    symmetry class first keeps the iteration from drifting back to the
    better-conditioned parent.  Children inherit the broader Fourier tails
    of the critical eigenmode, so they are represented with half again as
    many harmonics as the parent.
    """
    dim = seed.dim
    K_child = max(problem.K, (3 * problem.K) // 2)
    chain = []
    if predicted is not None and predicted.order > 1:
        chain.append(replace(problem, constraints=predicted, dim=dim, K=K_child))
    chain.append(replace(problem, constraints=None, dim=dim, K=K_child))
    current = seed
    result = None
    for prob in chain:
        try:
            result = refine_periodic(prob, current, xi=xi_c,
                                     anchor_gauge=prob.constraints is not None)
            current = result
        except Exception:
            if result is None and prob.constraints is not None:
                continue
            return result
    return result


def _matches_prediction(preds: list[ChildPrediction],
                        detected: SubgroupRecord) -> bool:
    for p in preds:
        for sub in p.subgroups:
            if sub.elements == detected.elements:
                return True
    return False


def verify_congruence(children: list[ChildResult], record: SubgroupRecord,
                      irrep: IrrepLabel, tol: float = 1e-6) -> list[dict]:
    """Witness elements g_c mapping each child onto its congruent partners.

    For one-dimensional irreps the witness class is g(-1; q); for
    two-dimensional ones it is the elements represented by a nontrivial
    rotation (powers of g(C(3); q) or g(C(6); q)).
    """
    if len(children) < 2:
        return []
    imgs = irrep.image_map(record)
    if irrep.dim == 1:
        witness_class = {g for g, im in imgs.items() if im == -1}
    else:
        witness_class = {g for g, im in imgs.items()
                         if not im.refl and im.k % 12 != 0}
    out = []
    for i, ci in enumerate(children):
        for j, cj in enumerate(children):
            if j <= i:
                continue
            best = None
            for g in sorted(record.elements):
                dist = loop_distance(apply_element(g, ci.loop), cj.loop) \
                    / function_norm(ci.loop)
                if dist < tol:
                    best = (g, dist)
                    break
            if best is not None:
                out.append({"pair": (i, j), "witness": element_name(best[0]),
                            "residual": best[1],
                            "in_witness_class": best[0] in witness_class})
    return out
