"""Space-time symmetry group of three-body loops and its representation theory.

A group element acts on a T-periodic configuration path f by

    (g f)(t) = signs * permute( f(eps * (t - shift * T)) )

with a rational time shift, optional time reversal (eps = -1), a body
permutation, and per-axis sign flips.  The figure-eight's symmetry group is
generated by

* ``C``  : cyclic body shift with delay T/3 (choreography),
* ``S``  : spatial inversion combined with time reversal and a body swap,
* ``M``  : x-inversion with delay T/2,
* ``MU`` : z-inversion,

and is isomorphic to the crystallographic point group D6h (order 24).
Everything in this module is exact: shifts are rationals, signs and
permutations integers; only the action on numeric loops is approximate.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .trajectory import (FRAME_CARTESIAN, FRAME_JACOBI, LoopTrajectory, SQMU1,
                         SQMU2, function_norm, loop_distance, pad_loop)


class NonFiniteGroupError(RuntimeError):
    """Closure of the given generators exceeded the size guard."""


class UnknownRepresentationError(RuntimeError):
    """Measured generator images match no catalog irrep."""


class InvarianceError(RuntimeError):
    """An eigenspace handed to representation_matrices is not group-invariant."""


@dataclass(frozen=True, order=True)
class GroupElement:
    """Composite space-time isometry; exact fields, totally ordered."""

    shift: Fraction
    reverse: bool
    perm: tuple[int, int, int]
    signs: tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "shift", Fraction(self.shift) % 1)

    @property
    def eps(self) -> int:
        return -1 if self.reverse else 1


IDENTITY = GroupElement(Fraction(0), False, (0, 1, 2), (1, 1, 1))
C = GroupElement(Fraction(1, 3), False, (1, 2, 0), (1, 1, 1))
S = GroupElement(Fraction(0), True, (1, 0, 2), (-1, -1, -1))
M = GroupElement(Fraction(1, 2), False, (0, 1, 2), (-1, 1, 1))
MU = GroupElement(Fraction(0), False, (0, 1, 2), (1, 1, -1))


def compose(g: GroupElement, h: GroupElement) -> GroupElement:
    """Element of the composed action g(h(f))."""
    shift = (g.shift + (h.shift if not g.reverse else -h.shift)) % 1
    perm = tuple(h.perm[g.perm[i]] for i in range(3))
    signs = tuple(g.signs[i] * h.signs[i] for i in range(3))
    return GroupElement(shift, g.reverse ^ h.reverse, perm, signs)


def inverse(g: GroupElement) -> GroupElement:
    inv_perm = [0, 0, 0]
    for i, p in enumerate(g.perm):
        inv_perm[p] = i
    shift = (-g.shift if not g.reverse else g.shift) % 1
    return GroupElement(shift, g.reverse, tuple(inv_perm), g.signs)


def element_power(g: GroupElement, n: int) -> GroupElement:
    out = IDENTITY
    if n < 0:
        g, n = inverse(g), -n
    for _ in range(n):
        out = compose(out, g)
    return out


def element_order(g: GroupElement) -> int:
    h, n = g, 1
    while h != IDENTITY:
        h = compose(h, g)
        n += 1
        if n > 48:
            raise NonFiniteGroupError("element order exceeds group bound")
    return n


def group_closure(generators: Iterable[GroupElement],
                  max_order: int = 10_000) -> tuple[GroupElement, ...]:
    """Closure under composition, in canonical sorted order."""
    todo = list(generators)
    seen = {IDENTITY}
    frontier = [IDENTITY]
    for g in todo:
        if g not in seen:
            seen.add(g)
            frontier.append(g)
    while frontier:
        nxt = []
        for g in frontier:
            for h in list(seen):
                for prod in (compose(g, h), compose(h, g)):
                    if prod not in seen:
                        seen.add(prod)
                        nxt.append(prod)
                        if len(seen) > max_order:
                            raise NonFiniteGroupError(
                                f"closure exceeded {max_order} elements")
        frontier = nxt
    return tuple(sorted(seen))


D6H = group_closure([C, S, M, MU])

_NAME_TABLE: dict[GroupElement, str] = {}
_WORD_TABLE: dict[GroupElement, tuple[int, int, int, int]] = {}
for _a, _b, _c, _d in itertools.product(range(2), range(2), range(2), range(3)):
    _el = IDENTITY
    for _gen, _pow in ((MU, _a), (M, _b), (S, _c), (C, _d)):
        _el = compose(_el, element_power(_gen, _pow))
    _WORD_TABLE.setdefault(_el, (_a, _b, _c, _d))
    _name = ("mu" if _a else "") + ("M" if _b else "") + ("S" if _c else "") + \
        ("" if _d == 0 else ("C" if _d == 1 else "C2"))
    _NAME_TABLE.setdefault(_el, _name or "1")


def element_name(g: GroupElement) -> str:
    """Normal-form word mu^a M^b S^c C^d, e.g. 'muC2', 'SC', '1'."""
    try:
        return _NAME_TABLE[g]
    except KeyError:
        return f"GroupElement(shift={g.shift}, reverse={g.reverse}, " \
               f"perm={g.perm}, signs={g.signs})"


def parse_element(word: str) -> GroupElement:
    """Inverse of element_name plus literal products like 'C2SM' read left
    to right with tokens mu, M, S, C, C2."""
    rest = word.strip()
    if rest in ("1", "e", "E"):
        return IDENTITY
    out = IDENTITY
    while rest:
        for token, gen in (("mu", MU), ("C2", element_power(C, 2)),
                           ("C", C), ("M", M), ("S", S)):
            if rest.startswith(token):
                out = compose(out, gen)
                rest = rest[len(token):]
                break
        else:
            raise ValueError(f"cannot parse group word {word!r}")
    return out


# ---------------------------------------------------------------------------
# action on loops

_PERM_JACOBI: dict[tuple[int, int, int], np.ndarray] = {}


def _perm_jacobi_rep(perm: tuple[int, int, int]) -> np.ndarray:
    """Exact-orthogonal 2x2 action of a body permutation on (Q1, Q2)."""
    try:
        return _PERM_JACOBI[perm]
    except KeyError:
        T = np.array([[-SQMU1, SQMU1, 0.0],
                      [-0.5 * SQMU2, -0.5 * SQMU2, SQMU2]])
        R = np.array([[-0.5 / SQMU1, -1.0 / (3.0 * SQMU2)],
                      [0.5 / SQMU1, -1.0 / (3.0 * SQMU2)],
                      [0.0, 2.0 / (3.0 * SQMU2)]])
        P = np.zeros((3, 3))
        for i in range(3):
            P[i, perm[i]] = 1.0
        _PERM_JACOBI[perm] = T @ P @ R
        return _PERM_JACOBI[perm]


def channel_matrix(g: GroupElement, frame: str, dim: int) -> np.ndarray:
    """Spatial/permutation part of g as a matrix on loop channels."""
    if frame == FRAME_CARTESIAN:
        n = 3 * dim
        out = np.zeros((n, n))
        for i in range(3):
            for ax in range(dim):
                out[i * dim + ax, g.perm[i] * dim + ax] = g.signs[ax]
        return out
    if frame == FRAME_JACOBI:
        J = _perm_jacobi_rep(g.perm)
        n = 2 * dim
        out = np.zeros((n, n))
        for v in range(2):
            for w in range(2):
                for ax in range(dim):
                    out[v * dim + ax, w * dim + ax] = J[v, w] * g.signs[ax]
        return out
    raise ValueError(f"unknown frame {frame!r}")


def harmonic_blocks(g: GroupElement, K: int) -> np.ndarray:
    """Per-harmonic 2x2 blocks of the time action on (cos_k, sin_k)."""
    k = np.arange(K + 1)
    psi = 2.0 * np.pi * k * float(g.shift)
    c, s = np.cos(psi), np.sin(psi)
    eps = g.eps
    blocks = np.empty((K + 1, 2, 2))
    blocks[:, 0, 0] = c
    blocks[:, 0, 1] = -eps * s
    blocks[:, 1, 0] = s
    blocks[:, 1, 1] = eps * c
    return blocks


def apply_element(g: GroupElement, loop: LoopTrajectory) -> LoopTrajectory:
    """Exact Fourier-space action of g on a loop (either frame)."""
    A = channel_matrix(g, loop.frame, loop.dim)
    blocks = harmonic_blocks(g, loop.K)
    mixed = np.einsum("cd,dke->cke", A, loop.coeffs)
    out = np.einsum("kef,ckf->cke", blocks, mixed)
    from dataclasses import replace
    return replace(loop, coeffs=out)


def symmetry_residuals(loop: LoopTrajectory, candidates: Sequence[GroupElement]
                       ) -> dict[GroupElement, float]:
    scale = function_norm(loop)
    return {g: loop_distance(apply_element(g, loop), loop) / scale
            for g in candidates}


# ---------------------------------------------------------------------------
# subgroups, names, spatial labels

def _is_abelian(elements: Sequence[GroupElement]) -> bool:
    return all(compose(g, h) == compose(h, g)
               for g, h in itertools.combinations(elements, 2))


def schoenflies_base(elements: Sequence[GroupElement]) -> str:
    """Schoenflies-style name keyed on (order, commutativity).

    Within this D6h action the pair determines the type: orders 1/2/3 are
    cyclic, order 4 is the Klein group D2, order 6 splits C6/D3, order 8 is
    D2h, order 12 splits C6h/D6, order 24 is D6h.
    """
    n = len(elements)
    if n == 1:
        return "C1"
    if n in (2, 3):
        return f"C{n}"
    if n == 4:
        return "D2"
    if n == 6:
        return "C6" if _is_abelian(elements) else "D3"
    if n == 8:
        return "D2h"
    if n == 12:
        return "C6h" if _is_abelian(elements) else "D6"
    if n == 24:
        return "D6h"
    raise ValueError(f"unexpected subgroup order {n}")


def is_choreographic(elements: Iterable[GroupElement]) -> bool:
    """True when a pure cyclic shift (perm of order 3, delay T/3) is present."""
    third = (Fraction(1, 3), Fraction(2, 3))
    return any(not g.reverse and g.shift in third and g.perm in ((1, 2, 0), (2, 0, 1))
               for g in elements)


def spatial_label(elements: Sequence[GroupElement]) -> str:
    """Spatial symmetry tag of the orbit's shape.

    Letter C for choreographic else D; prefix 'b' when the motion is
    non-planar (no MU); subscripts name symmetric planes ('x' = x-z plane,
    'y' = y-z plane, 'i' = point inversion) or, prefixed 'r', half-turn
    axes of non-planar shapes; 'I' marks the impossible combination of a
    time-reversing pure inversion without MU (it forces J = 0, hence
    planarity, hence MU).
    """
    els = list(elements)
    planar = MU in els
    has_sc = any(g.reverse and g.signs == (-1, -1, -1) for g in els)
    if has_sc and not planar:
        return "I"
    letter = "C" if is_choreographic(els) else "D"
    if planar:
        inplane = {(g.signs[0], g.signs[1]) for g in els}
        x = (1, -1) in inplane
        y = (-1, 1) in inplane
        inv = (-1, -1) in inplane
        sub = "xy" if (x and y) else "x" if x else "y" if y else "i" if inv else ""
        return letter + ("_" + sub if sub else "")
    ops = {g.signs for g in els}
    plane_x = (1, -1, 1) in ops     # reflection across the x-z plane
    plane_y = (-1, 1, 1) in ops     # reflection across the y-z plane
    if plane_x or plane_y:
        sub = "xy" if (plane_x and plane_y) else "x" if plane_x else "y"
    else:
        ax = {(1, -1, -1): "x", (-1, 1, -1): "y", (-1, -1, 1): "z"}
        axes = {ax[s] for s in ops if s in ax}
        if {"x", "y"} <= axes:
            sub = "rxy"
        elif axes:
            sub = "r" + sorted(axes)[0] if len(axes) == 1 else "r" + "".join(sorted(axes))
        else:
            sub = ""
    return "b" + letter + ("_" + sub if sub else "")


def canonical_generators(elements: Sequence[GroupElement]) -> tuple[GroupElement, ...]:
    """Deterministic generating set: one maximal-order element, then involutions.

    The resulting order signature -- (n), (n, 2), (n, 2, 2) -- is what
    irrep_catalog expects for every subgroup type arising in this action.
    """
    els = sorted(elements)
    if len(els) == 1:
        return ()
    orders = {g: element_order(g) for g in els}
    nmax = max(orders.values())
    rho = next(g for g in els if orders[g] == nmax)
    gens = [rho]
    span = set(group_closure(gens))
    while len(span) < len(els):
        ext = next(g for g in els if orders[g] == 2 and g not in span)
        gens.append(ext)
        span = set(group_closure(gens))
    return tuple(gens)


@dataclass(frozen=True)
class SubgroupRecord:
    """A subgroup of the loop symmetry group with display metadata."""

    elements: frozenset[GroupElement]
    generators: tuple[GroupElement, ...]
    name: str
    label: str

    @property
    def order(self) -> int:
        return len(self.elements)

    def describe(self) -> str:
        gens = ",".join(element_name(g) for g in self.generators)
        return f"{self.name}{{{gens}}}{self.label}"

    def __contains__(self, g: GroupElement) -> bool:
        return g in self.elements


def subgroup_from_elements(elements: Iterable[GroupElement],
                           generators: Sequence[GroupElement] | None = None
                           ) -> SubgroupRecord:
    els = frozenset(elements)
    if generators is None:
        generators = canonical_generators(sorted(els))
    else:
        generators = tuple(generators)
        if frozenset(group_closure(generators)) != els:
            raise ValueError("generators do not generate the element set")
    return SubgroupRecord(els, generators, schoenflies_base(sorted(els)),
                          spatial_label(sorted(els)))


def subgroup_from_generators(generators: Sequence[GroupElement]) -> SubgroupRecord:
    return subgroup_from_elements(group_closure(generators), generators)


FULL_GROUP = subgroup_from_elements(D6H, (compose(C, M), S, MU))


def detect_symmetry(loop: LoopTrajectory, candidates: Sequence[GroupElement] = D6H,
                    tol: float = 1e-6) -> tuple[SubgroupRecord, dict[GroupElement, float]]:
    """Largest subgroup of candidates fixing the loop within tol (relative)."""
    residuals = symmetry_residuals(loop, candidates)
    passing = {g for g, r in residuals.items() if r < tol}
    # trim to an actual subgroup, dropping the worst offender on failure
    while True:
        closed = all(compose(g, h) in passing for g in passing for h in passing)
        if closed and all(inverse(g) in passing for g in passing):
            break
        worst = max(passing - {IDENTITY}, key=lambda g: residuals[g])
        passing.discard(worst)
    return subgroup_from_elements(passing), residuals


# ---------------------------------------------------------------------------
# exact 2x2 orthogonal images: F^refl . R(pi k / 6)

@dataclass(frozen=True)
class SymImage:
    """Orthogonal 2x2 matrix F^refl R(pi k/6) with integer k mod 12."""

    refl: bool
    k: int

    def __post_init__(self):
        object.__setattr__(self, "k", self.k % 12)

    def matmul(self, other: "SymImage") -> "SymImage":
        if other.refl:
            return SymImage(not self.refl, other.k - self.k)
        return SymImage(self.refl, self.k + other.k)

    def matrix(self) -> np.ndarray:
        th = np.pi * self.k / 6.0
        r = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        if self.refl:
            return np.diag([-1.0, 1.0]) @ r
        return r

    def fixes_axis(self, m: int) -> bool:
        """Whether this image fixes the axis at angle pi m / 6 pointwise."""
        if self.refl:
            return (self.k - (6 - 2 * m)) % 12 == 0
        return self.k % 12 == 0

    def render(self) -> str:
        if not self.refl:
            if self.k == 0:
                return "+E"
            if self.k == 6:
                return "-E"
            if self.k in (4, 8):
                return "C(3)"
            if self.k in (2, 10):
                return "C(6)"
            return f"R({self.k})"
        if self.k == 0:
            return "F"
        return f"FR({self.k})"


E2 = SymImage(False, 0)
NEG_E2 = SymImage(False, 6)
C3_IMG = SymImage(False, 4)
C6_IMG = SymImage(False, 2)
F_IMG = SymImage(True, 0)


@dataclass(frozen=True)
class IrrepLabel:
    """Catalog irrep: generator images (ints for 1D, SymImage for 2D)."""

    name: str
    dim: int
    images: tuple

    def image_map(self, record: SubgroupRecord) -> dict[GroupElement, object]:
        """Extend generator images to the whole subgroup by word expansion.

        Raises ValueError when the images violate the subgroup's relations
        (the would-be homomorphism is inconsistent).
        """
        gens = record.generators
        assign: dict[GroupElement, object] = {IDENTITY: 1 if self.dim == 1 else E2}
        frontier = [IDENTITY]
        while frontier:
            nxt = []
            for h in frontier:
                for gen, img in zip(gens, self.images):
                    prod = compose(gen, h)
                    value = img * assign[h] if self.dim == 1 else img.matmul(assign[h])
                    if prod not in assign:
                        assign[prod] = value
                        nxt.append(prod)
                    elif assign[prod] != value:
                        raise ValueError("generator images violate group relations")
            frontier = nxt
        if len(assign) != record.order:
            raise ValueError("generators do not span the subgroup")
        return assign


def _irrep_name(record: SubgroupRecord, images: tuple, dim: int) -> str:
    rendered = []
    for img in images:
        rendered.append(("+1" if img == 1 else "-1") if dim == 1 else img.render())
    body = ",".join(rendered)
    if dim == 1:
        base = "C1" if all(i == 1 for i in images) else "C2"
        return f"{base}{{{body}}}"
    # generate the image group exactly to read off its rotation order
    gens = list(images)
    seen = {(False, 0)}
    frontier = [SymImage(False, 0)]
    while frontier:
        nxt = []
        for h in frontier:
            for g in gens:
                prod = g.matmul(h)
                key = (prod.refl, prod.k)
                if key not in seen:
                    seen.add(key)
                    nxt.append(prod)
        frontier = nxt
    rots = {k for refl, k in seen if not refl}
    has_refl = any(refl for refl, _ in seen)
    n = len(rots)
    base = ("D" if has_refl else "C") + str(n)
    # 'h' suffix: a central generator maps to -E already generated by the rest
    if dim == 2 and len(images) >= 2:
        last = images[-1]
        if last == NEG_E2:
            gens_wo = list(images[:-1])
            seen2 = {(False, 0)}
            frontier = [SymImage(False, 0)]
            while frontier:
                nxt = []
                for h in frontier:
                    for g in gens_wo:
                        prod = g.matmul(h)
                        key = (prod.refl, prod.k)
                        if key not in seen2:
                            seen2.add(key)
                            nxt.append(prod)
                frontier = nxt
            if (False, 6) in seen2:
                base += "h"
    return f"{base}{{{body}}}"


def irrep_catalog(record: SubgroupRecord) -> list[IrrepLabel]:
    """Real orthogonal irreps as generator-image rows, paper-table style."""
    gens = record.generators
    orders = [element_order(g) for g in gens]
    rows: list[tuple] = []
    name = record.name
    if name == "C1":
        return [IrrepLabel("C1{+1}", 1, ())]
    if name in ("C2", "D2", "D2h"):
        for signs in itertools.product((1, -1), repeat=len(gens)):
            rows.append(signs)
        two_d: list[tuple] = []
    elif name == "C3":
        rows = [(1,)]
        two_d = [(C3_IMG,)]
    elif name == "C6":
        rows = [(1,), (-1,)]
        two_d = [(C3_IMG,), (C6_IMG,)]
    elif name == "D3":
        if orders != [3, 2]:
            raise ValueError("D3 catalog expects generators (order 3, involution)")
        rows = [(1, 1), (1, -1)]
        two_d = [(C3_IMG, F_IMG)]
    elif name == "C6h":
        if orders != [6, 2]:
            raise ValueError("C6h catalog expects generators (order 6, involution)")
        rows = [(1, 1), (-1, 1), (1, -1), (-1, -1)]
        two_d = [(C3_IMG, E2), (C3_IMG, NEG_E2), (C6_IMG, E2), (C6_IMG, NEG_E2)]
    elif name == "D6":
        if orders != [6, 2]:
            raise ValueError("D6 catalog expects generators (order 6, involution)")
        rows = [(1, 1), (1, -1), (-1, 1), (-1, -1)]
        two_d = [(C3_IMG, F_IMG), (C6_IMG, F_IMG)]
    elif name == "D6h":
        if orders != [6, 2, 2]:
            raise ValueError("D6h catalog expects generators (order 6, 2, 2)")
        rows = [(1, 1, 1), (1, -1, 1), (-1, 1, 1), (-1, -1, 1),
                (1, 1, -1), (1, -1, -1), (-1, 1, -1), (-1, -1, -1)]
        two_d = [(C3_IMG, F_IMG, E2), (C3_IMG, F_IMG, NEG_E2),
                 (C6_IMG, F_IMG, E2), (C6_IMG, F_IMG, NEG_E2)]
    else:
        raise ValueError(f"no irrep catalog for {name}")
    out = []
    for images in rows:
        label = IrrepLabel(_irrep_name(record, images, 1), 1, tuple(images))
        if _consistent(label, record):
            out.append(label)
    for images in two_d:
        label = IrrepLabel(_irrep_name(record, images, 2), 2, tuple(images))
        if _consistent(label, record):
            out.append(label)
    return out


def _consistent(label: IrrepLabel, record: SubgroupRecord) -> bool:
    """Generator images must satisfy the subgroup's relations."""
    try:
        label.image_map(record)
        return True
    except ValueError:
        return False


def irrep_fold(label: IrrepLabel, record: SubgroupRecord) -> int:
    """Rotation order of the image group: 1 (trivial), 2, 3 or 6."""
    if label.dim == 1:
        return 1 if all(i == 1 for i in label.images) else 2
    imgs = label.image_map(record)
    rots = {im.k for im in imgs.values() if not im.refl}
    return len(rots)


def elements_with_image(record: SubgroupRecord, label: IrrepLabel,
                        image) -> list[GroupElement]:
    """g(D; q): the subgroup elements whose irrep image equals ``image``."""
    imgs = label.image_map(record)
    return sorted(g for g, im in imgs.items() if im == image)


def isotropy_subgroup(record: SubgroupRecord, label: IrrepLabel,
                      direction) -> SubgroupRecord:
    """Stabilizer {g : D(g) r = r} of a reduced-space direction.

    ``direction`` is ignored for 1D irreps; for 2D it is either the string
    'generic' or an integer m naming the axis family theta = pi m / 6.
    """
    imgs = label.image_map(record)
    if label.dim == 1:
        els = [g for g, im in imgs.items() if im == 1]
        return subgroup_from_elements(els)
    if direction == "generic":
        els = [g for g, im in imgs.items() if not im.refl and im.k % 12 == 0]
    else:
        m = int(direction)
        els = [g for g, im in imgs.items() if im.fixes_axis(m)]
    return subgroup_from_elements(els)


@dataclass(frozen=True)
class ChildPrediction:
    """One isotropy family of a bifurcation: where children can appear."""

    theta_family: str                 # 'sign', 'even', 'odd', 'otherwise', 'any'
    subgroups: tuple[SubgroupRecord, ...]   # one per n for axis families
    label: str                        # shared spatial label ('I' if impossible)

    @property
    def subgroup(self) -> SubgroupRecord:
        return self.subgroups[0]


def predicted_children(record: SubgroupRecord, label: IrrepLabel
                       ) -> list[ChildPrediction]:
    """Isotropy subgroups at the critical directions, computed not stored.

    For six-fold representations both axis families are critical at once,
    so if either family is impossible (label 'I') the whole row is: the
    children that would carry the forced-planar symmetry cannot exist.
    """
    if label.dim == 1:
        sub = isotropy_subgroup(record, label, None)
        return [ChildPrediction("sign", (sub,), sub.label)]
    generic = isotropy_subgroup(record, label, "generic")
    even = tuple(isotropy_subgroup(record, label, 2 * n) for n in range(3))
    odd = tuple(isotropy_subgroup(record, label, 2 * n + 1) for n in range(3))
    out = []
    if even[0].order > generic.order:
        out.append(ChildPrediction("even", even, even[0].label))
    if odd[0].order > generic.order:
        out.append(ChildPrediction("odd", odd, odd[0].label))
    if out:
        out.append(ChildPrediction("otherwise", (generic,), generic.label))
    else:
        out.append(ChildPrediction("any", (generic,), generic.label))
    if irrep_fold(label, record) == 6 and any(p.label == "I" for p in out):
        out = [ChildPrediction(p.theta_family, p.subgroups, "I") for p in out]
    return out


# ---------------------------------------------------------------------------
# numeric representation extraction

def loop_inner_matrix(modes: Sequence[LoopTrajectory]) -> np.ndarray:
    from .trajectory import inner_product
    n = len(modes)
    G = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            G[i, j] = G[j, i] = inner_product(modes[i], modes[j])
    return G


def representation_matrices(modes: Sequence[LoopTrajectory],
                            elements: Sequence[GroupElement],
                            ortho_tol: float = 1e-6,
                            invariance_tol: float = 1e-4
                            ) -> dict[GroupElement, np.ndarray]:
    """D(g)_ij = <mode_i, g mode_j> over an orthonormal invariant eigenspace."""
    from .trajectory import inner_product
    G = loop_inner_matrix(modes)
    if np.max(np.abs(G - np.eye(len(modes)))) > ortho_tol:
        raise InvarianceError("modes are not orthonormal")
    out = {}
    for g in elements:
        D = np.empty((len(modes), len(modes)))
        for j, mj in enumerate(modes):
            gm = apply_element(g, mj)
            for i, mi in enumerate(modes):
                D[i, j] = inner_product(mi, gm)
            # residual outside the span
            norm2 = inner_product(gm, gm)
            res2 = norm2 - float(np.sum(D[:, j] ** 2))
            if res2 > invariance_tol * max(norm2, 1e-30):
                raise InvarianceError(
                    f"eigenspace is not invariant under {element_name(g)} "
                    f"(leakage {np.sqrt(max(res2, 0.0)):.2e})")
        # polar re-orthonormalization
        u, sv, vt = np.linalg.svd(D)
        if np.max(np.abs(sv - 1.0)) > ortho_tol:
            raise InvarianceError(
                f"representation of {element_name(g)} is off-orthogonal by "
                f"{np.max(np.abs(sv - 1.0)):.2e}")
        out[g] = u @ vt
    return out


def classify_irrep(measured: Mapping[GroupElement, np.ndarray],
                   record: SubgroupRecord,
                   tol: float = 1e-6) -> tuple[IrrepLabel, np.ndarray]:
    """Match measured generator images to the catalog.

    Returns the catalog label and the orthogonal gauge Omega with
    Omega D_measured(g) Omega^T = D_catalog(g); for 1D irreps Omega is [[1]].
    """
    gens = record.generators
    mats = [np.atleast_2d(np.asarray(measured[g], dtype=float)) for g in gens]
    dim = mats[0].shape[0]
    if dim == 1:
        signs = []
        for m in mats:
            v = float(m[0, 0])
            if abs(abs(v) - 1.0) > tol:
                raise UnknownRepresentationError(f"non-unimodular 1D image {v}")
            signs.append(1 if v > 0 else -1)
        for label in irrep_catalog(record):
            if label.dim == 1 and tuple(signs) == label.images:
                return label, np.eye(1)
        raise UnknownRepresentationError(f"no 1D catalog match for {signs}")
    F = np.diag([-1.0, 1.0])
    for label in irrep_catalog(record):
        if label.dim != 2:
            continue
        targets = [img.matrix() for img in label.images]
        for flip in (False, True):
            eff = [F @ m @ F if flip else m for m in mats]
            rows = []
            for m, tgt in zip(eff, targets):
                rows.append(np.kron(m.T, np.eye(2)) - np.kron(np.eye(2), tgt))
            A = np.vstack(rows)
            _, sv, vt = np.linalg.svd(A)
            if sv[-1] > tol * 10:
                continue
            om = vt[-1].reshape(2, 2)
            u, _, w = np.linalg.svd(om)
            om = u @ w
            ok = all(np.max(np.abs(om @ m @ om.T - tgt)) < 50 * tol
                     for m, tgt in zip(eff, targets))
            if ok:
                gauge = om @ F if flip else om
                return label, gauge
    raise UnknownRepresentationError("no 2D catalog match")
