"""Regeneration of the child-symmetry tables of the bifurcation cascade.

Every parent group arising in the cascade from the figure-eight is paired
with its real-irrep catalog and, per irrep, the isotropy subgroups at the
critical directions.  The output is structured data meant to be diffed
against a static fixture encoding of the published tables; nothing here is
read back from fixtures at runtime.

Group words use the tokens ``mu``, ``M``, ``S``, ``C``/``C2`` concatenated
left-to-right, with optional integer powers like ``C^{n-1}`` where ``n`` is
the axis-family index (0, 1, 2).
"""
from __future__ import annotations

import re

from .symmetry import (GroupElement, SubgroupRecord, element_name,
                       group_closure, irrep_catalog, irrep_fold,
                       parse_element, predicted_children,
                       subgroup_from_generators)

_POWER = re.compile(r"C\^\{([^}]*)\}")


def expand_word(template: str, n: int = 0) -> GroupElement:
    """Parse a group word, substituting the axis-family index into C powers."""
    def sub(match: re.Match) -> str:
        expr = match.group(1).replace("n", str(n))
        power = eval(expr, {"__builtins__": {}})  # arithmetic on small ints
        power %= 3
        return ("", "C", "C2")[power]
    return parse_element(_POWER.sub(sub, template))


def parent_record(words: tuple[str, ...], n: int = 0) -> SubgroupRecord:
    gens = tuple(expand_word(w, n) for w in words)
    return subgroup_from_generators(gens)


#: cascade parents: name -> list of generator-word tuples (variants)
CASCADE_PARENTS: dict[str, list[tuple[str, ...]]] = {
    "D6h": [("CM", "S", "mu")],
    "D6": [("muC", "S"), ("muC", "SM"), ("MC", "muS"), ("muMC", "muS")],
    "C6h": [("CM", "mu")],
    "D2h": [("C^{n-1}S", "M", "mu")],
    "D2": [("C^{n}S", "mu"), ("C^{n}SM", "mu"), ("M", "mu"),
           ("muC^{n}S", "M"), ("muC^{n}S", "muM")],
    "D3": [("C", "muS"), ("C", "SM"), ("C", "muSM")],
    "C6": [("muC",), ("MC",), ("muMC",)],
    "C3": [("C",)],
    "C2": [("mu",), ("M",), ("muM",), ("muSM",), ("muS",), ("SM",)],
}


def regenerate_table(parent_words: tuple[str, ...], n_parent: int = 0) -> dict:
    """Catalog rows and predicted children for one cascade parent."""
    record = parent_record(parent_words, n_parent)
    rows = []
    for label in irrep_catalog(record):
        families = []
        for pred in predicted_children(record, label):
            families.append({
                "theta": pred.theta_family,
                "label": pred.label,
                "children": [
                    {"name": sub.name,
                     "order": sub.order,
                     "generators": [element_name(g) for g in sub.generators],
                     "elements": sorted(element_name(g) for g in sub.elements)}
                    for sub in pred.subgroups
                ],
            })
        rows.append({
            "irrep": label.name,
            "d": label.dim,
            "fold": irrep_fold(label, record),
            "families": families,
        })
    return {
        "parent": {
            "words": list(parent_words),
            "name": record.name,
            "label": record.label,
            "order": record.order,
        },
        "rows": rows,
    }


def regenerate_tables() -> dict:
    """All cascade tables, keyed by parent type and variant index."""
    out = {}
    for name, variants in CASCADE_PARENTS.items():
        out[name] = [regenerate_table(words) for words in variants]
    return out


def _element_set(words: list[str], n: int) -> frozenset[GroupElement]:
    gens = tuple(expand_word(w, n) for w in words)
    return frozenset(group_closure(gens))


def compare_with_fixture(fixture: dict) -> list[str]:
    """Diff regenerated tables against a fixture encoding; [] means match.

    Fixture child entries are generator words; ``C^{...}`` powers carry
    either the parent's instance index (parents defined with an n, which
    only have 1D irreps) or the axis-family index of a 2D irrep, in which
    case the three expansions are compared to the three regenerated
    subgroups as unordered sets of element sets.
    """
    problems: list[str] = []
    for name, variants in fixture.items():
        for vi, fix in enumerate(variants):
            where = f"{name}[{vi}]"
            parent_words = tuple(fix["parent"]["words"])
            parent_ns = range(3) if any("{" in w for w in parent_words) else [0]
            for pn in parent_ns:
                problems.extend(_compare_one(fix, parent_words, pn,
                                             f"{where}(n={pn})"))
    return problems


def _compare_one(fix: dict, parent_words: tuple[str, ...], pn: int,
                 where: str) -> list[str]:
    problems: list[str] = []
    regen = regenerate_table(parent_words, pn)
    if regen["parent"]["name"] != fix["parent"]["name"]:
        problems.append(f"{where}: parent name {regen['parent']['name']} != "
                        f"{fix['parent']['name']}")
    if regen["parent"]["label"] != fix["parent"]["label"]:
        problems.append(f"{where}: parent label {regen['parent']['label']} != "
                        f"{fix['parent']['label']}")
    fix_rows = {r["irrep"]: r for r in fix["rows"]}
    got_rows = {r["irrep"]: r for r in regen["rows"]}
    if set(fix_rows) != set(got_rows):
        problems.append(f"{where}: irrep set mismatch "
                        f"{sorted(set(fix_rows) ^ set(got_rows))}")
        return problems
    for irrep, frow in fix_rows.items():
        grow = got_rows[irrep]
        ffams = {f["theta"]: f for f in frow["families"]}
        gfams = {f["theta"]: f for f in grow["families"]}
        if set(ffams) != set(gfams):
            problems.append(f"{where}/{irrep}: family tags {sorted(ffams)} "
                            f"!= {sorted(gfams)}")
            continue
        for tag, ff in ffams.items():
            gf = gfams[tag]
            if ff["label"] != gf["label"]:
                problems.append(f"{where}/{irrep}/{tag}: label "
                                f"{gf['label']} != {ff['label']}")
            if ff.get("child_name") and ff["child_name"] != gf["children"][0]["name"]:
                problems.append(f"{where}/{irrep}/{tag}: child name "
                                f"{gf['children'][0]['name']} != {ff['child_name']}")
            words = ff["child_words"]
            axis_indexed = tag in ("even", "odd") and any("{" in w for w in words)
            if axis_indexed:
                want = {_element_set(words, n) for n in range(3)}
            else:
                want = {_element_set(words, pn)}
            got = {frozenset(parse_element(w) for w in child["elements"])
                   for child in gf["children"]}
            if want != got:
                problems.append(f"{where}/{irrep}/{tag}: child element sets "
                                "differ from fixture expansion")
    return problems
