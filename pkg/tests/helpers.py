"""Shared test fixtures: reference oracles and randomized snapshot builders.

The star-join oracle here is deliberately naive (literal nested loops and
re-stated filter semantics) so it stays independent of the engine it checks.
"""

from __future__ import annotations

import random
from math import fsum

from agridw.catalog import AttributeDef, Catalog, TableDef
from agridw.store import EqFilter, QuerySpec, RangeFilter, Snapshot

# Mean crop yield (ton/ha) and percent vs group 3 for the 12 crops, groups 1-5.
GROUP_TABLE_ROWS = {
    "Barley S.": [(8.93, 36.9), (7.32, 12.2), (6.52, 0.0), (5.81, -10.9), (4.26, -34.8)],
    "Barley W.": [(13.04, 78.7), (8.29, 13.7), (7.30, 0.0), (6.40, -12.2), (5.16, -29.3)],
    "Beans S.": [(5.21, 37.3), (4.32, 13.9), (3.79, 0.0), (1.92, -49.3), (1.08, -71.4)],
    "Beans W.": [(6.15, 23.6), (5.51, 10.8), (4.97, 0.0), (4.52, -9.2), (3.40, -31.7)],
    "Grass": [(23.80, 67.7), (21.73, 53.1), (14.19, 0.0), (9.01, -36.5), (7.62, -46.3)],
    "Linseed S.": [(2.28, 75.5), (1.57, 20.9), (1.30, 0.0), (0.84, -35.7), (0.43, -67.1)],
    "Maize F.": [(47.00, 16.7), (44.67, 10.9), (40.27, 0.0), (32.63, -19.0), (21.62, -46.3)],
    "Oats W.": [(8.06, 15.1), (7.50, 7.1), (7.00, 0.0), (6.93, -1.0), (5.64, -19.4)],
    "Rape W.": [(4.59, 27.7), (4.00, 11.4), (3.59, 0.0), (3.15, -12.5), (2.36, -34.3)],
    "Rye W.": [(39.90, 41.4), (32.39, 14.7), (28.23, 0.0), (23.19, -17.8), (17.77, -37.0)],
    "Wheat S.": [(7.20, 27.9), (6.52, 15.8), (5.63, 0.0), (4.73, -16.0), (1.94, -65.6)],
    "Wheat W.": [(11.74, 25.9), (10.22, 9.6), (9.32, 0.0), (8.55, -8.3), (6.83, -26.7)],
}


# --- independent star-join oracle -------------------------------------------

def _oracle_filter_ok(filters, row) -> bool:
    for flt in filters:
        value = row.get(flt.attribute)
        if isinstance(flt, EqFilter):
            if value != flt.value:
                return False
        elif isinstance(flt, RangeFilter):
            if value is None:
                return False
            if flt.lo is not None and value < flt.lo:
                return False
            if flt.hi is not None and value > flt.hi:
                return False
    return True


def nested_loop_star_query(snapshot: Snapshot, q: QuerySpec):
    """Reference semantics via literal nested loops; returns (columns, rows)."""
    fact_def = snapshot.catalog.table(q.fact)
    joined_rows = []
    for fact_row in snapshot.rows(q.fact):
        dims = {}
        keep = True
        for join in q.joins:
            fk_attr = fact_def.foreign_key_for(join.dimension)
            fk = fact_row.get(fk_attr.name)
            match = None
            if fk is not None:
                for dim_row in snapshot.rows(join.dimension):  # nested scan on purpose
                    if dim_row.get("sk") == fk and _oracle_filter_ok(join.filters, dim_row):
                        match = dim_row
                        break
            if match is None:
                keep = False
                break
            dims[join.dimension] = match
        if keep:
            joined_rows.append((fact_row, dims))

    def cell(name, fact_row, dims):
        if "." in name:
            dim_name, attr = name.split(".", 1)
            return dims[dim_name].get(attr)
        return fact_row.get(name)

    if not q.aggregates:
        columns = tuple(q.project)
        return columns, [tuple(cell(n, f, d) for n in q.project) for f, d in joined_rows]

    groups = {}
    for f, d in joined_rows:
        key = tuple(cell(n, f, d) for n in q.group_by)
        groups.setdefault(key, []).append(f)
    columns = tuple(q.group_by) + tuple(f"{a.op}({a.attribute})" for a in q.aggregates)
    out = []
    for key, members in groups.items():
        row = list(key)
        for agg in q.aggregates:
            values = [m.get(agg.attribute) for m in members if m.get(agg.attribute) is not None]
            if agg.op == "count":
                row.append(len(values))
            elif not values:
                row.append(None)
            elif agg.op == "sum":
                row.append(fsum(values))
            elif agg.op == "mean":
                row.append(fsum(values) / len(values))
            elif agg.op == "min":
                row.append(min(values))
            else:
                row.append(max(values))
        out.append(tuple(row))
    return columns, out


def sort_rows(rows):
    return sorted(rows, key=lambda row: tuple((v is None, 0 if v is None else v) for v in row))


def rows_equal(a, b, tol=1e-9) -> bool:
    if len(a) != len(b):
        return False
    for ra, rb in zip(a, b):
        if len(ra) != len(rb):
            return False
        for va, vb in zip(ra, rb):
            if isinstance(va, float) and isinstance(vb, float):
                if abs(va - vb) > tol * max(1.0, abs(va), abs(vb)):
                    return False
            elif va != vb:
                return False
    return True


# --- randomized snapshots -----------------------------------------------------

_VOCAB = ("alpha", "beta", "gamma", "delta", "epsilon")


def random_mini_catalog(rng: random.Random, n_dims: int) -> Catalog:
    tables = {}
    dim_names = [f"D{i}" for i in range(1, n_dims + 1)]
    for name in dim_names:
        tables[name] = TableDef(
            name=name,
            role="dimension",
            attributes=(
                AttributeDef(name="ID", kind="natural-key-part", nullable=False),
                AttributeDef(name="Cat", kind="text"),
                AttributeDef(name="Val", kind="number"),
            ),
            natural_key=("ID",),
        )
    tables["Fact"] = TableDef(
        name="Fact",
        role="fact",
        attributes=tuple(
            AttributeDef(name=f"{d}Key", kind="foreign-key", references=d) for d in dim_names
        )
        + (
            AttributeDef(name="M1", kind="number"),
            AttributeDef(name="M2", kind="number"),
        ),
        measures=("M1", "M2"),
        dimension_refs=tuple(dim_names),
    )
    return Catalog(version="test", tables=tables)


def random_snapshot(rng: random.Random, max_facts: int = 1000, max_dims: int = 5):
    n_dims = rng.randint(1, max_dims)
    catalog = random_mini_catalog(rng, n_dims)
    dim_names = [f"D{i}" for i in range(1, n_dims + 1)]
    tables = {}
    sizes = {}
    for name in dim_names:
        n = rng.randint(1, 50)
        sizes[name] = n
        tables[name] = [
            {
                "sk": j + 1,
                "ID": f"{name.lower()}-{j + 1}",
                "Cat": rng.choice(_VOCAB),
                "Val": round(rng.uniform(-50, 50), 3) if rng.random() < 0.85 else None,
            }
            for j in range(n)
        ]
        for row in tables[name]:
            if row["Val"] is None:
                del row["Val"]
    n_facts = rng.randint(0, max_facts)
    facts = []
    for _ in range(n_facts):
        row = {}
        for name in dim_names:
            if rng.random() < 0.85:
                row[f"{name}Key"] = rng.randint(1, sizes[name])
        for measure in ("M1", "M2"):
            if rng.random() < 0.8:
                row[measure] = round(rng.uniform(-100, 100), 3)
        facts.append(row)
    tables["Fact"] = facts
    return Snapshot.from_tables(catalog, tables)


def random_query(rng: random.Random, snapshot: Snapshot) -> QuerySpec:
    from agridw.store import Aggregate, DimensionJoin

    fact = snapshot.catalog.table("Fact")
    dim_names = list(fact.dimension_refs)
    joined = rng.sample(dim_names, k=rng.randint(0, len(dim_names)))
    joins = []
    for name in joined:
        filters = []
        for _ in range(rng.randint(0, 2)):
            if rng.random() < 0.5:
                value = rng.choice(_VOCAB + ("nothing-matches",))
                filters.append(EqFilter(attribute="Cat", value=value))
            else:
                lo, hi = sorted((round(rng.uniform(-50, 50), 3), round(rng.uniform(-50, 50), 3)))
                filters.append(
                    RangeFilter(
                        attribute="Val",
                        lo=lo if rng.random() < 0.8 else None,
                        hi=hi if rng.random() < 0.8 else None,
                    )
                )
        joins.append(DimensionJoin(dimension=name, filters=tuple(filters)))

    if rng.random() < 0.5 and joined:
        group_by = tuple(f"{name}.Cat" for name in rng.sample(joined, k=rng.randint(1, len(joined))))
        aggregates = tuple(
            Aggregate(op=rng.choice(("count", "sum", "mean", "min", "max")), attribute=rng.choice(("M1", "M2")))
            for _ in range(rng.randint(1, 3))
        )
        return QuerySpec(fact="Fact", joins=tuple(joins), project=group_by, group_by=group_by, aggregates=aggregates)
    if rng.random() < 0.3:
        # global aggregate, no grouping
        aggregates = tuple(
            Aggregate(op=op, attribute=rng.choice(("M1", "M2")))
            for op in ("count", "sum", "mean")
        )
        return QuerySpec(fact="Fact", joins=tuple(joins), aggregates=aggregates)
    project = tuple(f"{name}.Cat" for name in joined) + ("M1", "M2")
    return QuerySpec(fact="Fact", joins=tuple(joins), project=project)
