"""Directory-backed warehouse store: surrogate keys, snapshots, star queries.

Layout: one subdirectory per populated table holding ``data.csv`` (header +
rows, LF endings, numbers as decimal text with ≤6 fractional digits), plus a
top-level ``manifest.json`` recording the catalog digest and per-table row
counts and digests. Digests are FNV-1a 64-bit over the exact ``data.csv``
bytes, maintained incrementally because tables are append-only.
"""

from __future__ import annotations

import csv
import io
import json
import os
from contextlib import contextmanager
from dataclasses import dataclass
from math import fsum, isfinite
from pathlib import Path
from typing import Iterator, Mapping, Sequence

from .catalog import Catalog, TableDef, catalog_digest
from .errors import (
    CatalogMismatchError,
    DanglingKeyError,
    QueryError,
    StoreError,
    StoreLockError,
    StoreTypeError,
    UnknownAttributeError,
)
from .util import FNV64_SEED, atomic_write_text, canonical_json, csv_line, fnv1a64, format_decimal

MANIFEST_NAME = "manifest.json"
LOCK_NAME = ".lock"
DATA_NAME = "data.csv"
SK_COLUMN = "sk"

AGGREGATE_OPS = ("count", "sum", "mean", "min", "max")


def _text_to_typed(attr_kind: str, text: str):
    if text == "":
        return None
    if attr_kind == "foreign-key":
        return int(text)
    if attr_kind == "number":
        return float(text)
    return text


class _TableState:
    """In-memory rows plus the streaming digest over the table's file bytes."""

    __slots__ = (
        "table", "rows", "digest_state", "pending", "by_natural", "by_leading",
        "columns", "_layout", "_is_dim",
    )

    def __init__(self, table: TableDef):
        self.table = table
        self.rows: list[dict] = []
        self._is_dim = table.role == "dimension"
        self.columns = ([SK_COLUMN] if self._is_dim else []) + [a.name for a in table.attributes]
        self._layout = [(a.name, a.kind) for a in table.attributes]
        header = csv_line(self.columns).encode("utf-8")
        self.digest_state = fnv1a64(header, FNV64_SEED)
        self.pending: list[bytes] = [header]
        self.by_natural: dict[tuple, int] = {}
        self.by_leading: dict[str, int] = {}

    def append(self, row: dict) -> None:
        get = row.get
        values = [str(row[SK_COLUMN])] if self._is_dim else []
        push = values.append
        for name, kind in self._layout:
            value = get(name)
            if value is None:
                push("")
            elif kind == "number":
                push(format_decimal(value))
            elif kind == "foreign-key":
                push(str(value))
            else:
                # minimal RFC 4180 quoting; numbers and keys never need it
                if '"' in value:
                    value = '"' + value.replace('"', '""') + '"'
                elif "," in value or "\n" in value or "\r" in value:
                    value = '"' + value + '"'
                push(value)
        line = (",".join(values) + "\n").encode("utf-8")
        self.digest_state = fnv1a64(line, self.digest_state)
        self.pending.append(line)
        self.rows.append(row)

    @property
    def digest(self) -> str:
        return format(self.digest_state, "016x")


def _check_typed(table: TableDef, row: Mapping, *, allow_sk: bool = False) -> None:
    attr_map = table.attribute_map
    for key, value in row.items():
        if key == SK_COLUMN and allow_sk:
            continue
        attr = attr_map.get(key)
        if attr is None:
            raise StoreTypeError(f"{table.name}: unknown attribute {key!r}")
        if value is None:
            continue
        if attr.kind == "foreign-key":
            if isinstance(value, bool) or not isinstance(value, int):
                raise StoreTypeError(f"{table.name}.{key}: foreign keys are integers")
        elif attr.kind == "number":
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not isfinite(value):
                raise StoreTypeError(f"{table.name}.{key}: expected a finite number")
        else:
            if not isinstance(value, str) or value == "":
                raise StoreTypeError(f"{table.name}.{key}: expected non-empty text")


class Store:
    """One warehouse directory bound to a catalog. Not thread-safe for writes."""

    def __init__(self, path: Path, catalog: Catalog):
        self.path = Path(path)
        self.catalog = catalog
        self.catalog_digest = catalog_digest(catalog)
        self._tables: dict[str, _TableState] = {}
        self._load_existing()

    # -- persistence ------------------------------------------------------

    def _manifest_path(self) -> Path:
        return self.path / MANIFEST_NAME

    def _data_path(self, table: str) -> Path:
        return self.path / table / DATA_NAME

    def _load_existing(self) -> None:
        manifest_path = self._manifest_path()
        if not manifest_path.exists():
            self.path.mkdir(parents=True, exist_ok=True)
            self._write_manifest()
            return
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise StoreError(f"unreadable manifest: {exc}") from exc
        recorded = manifest.get("catalog_digest")
        if recorded != self.catalog_digest:
            raise CatalogMismatchError(
                f"store was created for catalog {recorded}, supplied catalog is {self.catalog_digest}"
            )
        for name, entry in manifest.get("tables", {}).items():
            table = self.catalog.table(name)
            if table is None:
                raise StoreError(f"manifest lists unknown table {name!r}")
            state = _TableState(table)
            data_path = self._data_path(name)
            try:
                data = data_path.read_bytes()
            except OSError as exc:
                raise StoreError(f"missing data file for table {name!r}: {exc}") from exc
            digest = format(fnv1a64(data), "016x")
            if digest != entry.get("digest"):
                raise StoreError(f"table {name!r} digest mismatch: file {digest}, manifest {entry.get('digest')}")
            self._parse_rows(state, data.decode("utf-8"))
            if len(state.rows) != entry.get("rows"):
                raise StoreError(f"table {name!r} row count mismatch")
            state.digest_state = fnv1a64(data, FNV64_SEED)
            state.pending = []
            self._tables[name] = state

    def _parse_rows(self, state: _TableState, text: str) -> None:
        reader = csv.reader(io.StringIO(text))
        try:
            header = next(reader)
        except StopIteration:
            raise StoreError(f"table {state.table.name!r}: empty data file") from None
        if header != state.columns:
            raise StoreError(f"table {state.table.name!r}: unexpected columns {header!r}")
        is_dim = state.table.role == "dimension"
        attrs = state.table.attributes
        for record in reader:
            if not record:
                continue
            row: dict = {}
            offset = 0
            if is_dim:
                row[SK_COLUMN] = int(record[0])
                offset = 1
            for attr, text_value in zip(attrs, record[offset:]):
                value = _text_to_typed(attr.kind, text_value)
                if value is not None:
                    row[attr.name] = value
            state.rows.append(row)
            if is_dim:
                natural = tuple(str(row.get(part)) for part in state.table.natural_key)
                state.by_natural.setdefault(natural, row[SK_COLUMN])
                state.by_leading.setdefault(str(row.get(state.table.natural_key[0])), row[SK_COLUMN])

    def _write_manifest(self) -> None:
        manifest = {
            "catalog_digest": self.catalog_digest,
            "tables": {
                name: {"rows": len(state.rows), "digest": state.digest}
                for name, state in sorted(self._tables.items())
            },
            "version": 1,
        }
        atomic_write_text(self._manifest_path(), canonical_json(manifest))

    def flush(self) -> None:
        """Append pending rows to disk and rewrite the manifest."""
        for name, state in self._tables.items():
            if not state.pending:
                continue
            data_path = self._data_path(name)
            data_path.parent.mkdir(parents=True, exist_ok=True)
            with open(data_path, "ab") as handle:
                handle.write(b"".join(state.pending))
            state.pending = []
        self._write_manifest()

    @contextmanager
    def exclusive_lock(self) -> Iterator[None]:
        """Advisory single-writer lock; raises StoreLockError if already held."""
        lock_path = self.path / LOCK_NAME
        try:
            fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise StoreLockError(f"store {self.path} is locked by another writer") from None
        try:
            os.write(fd, str(os.getpid()).encode("ascii"))
            os.close(fd)
            yield
        finally:
            try:
                os.unlink(lock_path)
            except OSError:
                pass

    # -- writes -----------------------------------------------------------

    def _state(self, table_name: str) -> _TableState:
        state = self._tables.get(table_name)
        if state is None:
            table = self.catalog.table(table_name)
            if table is None:
                raise StoreError(f"unknown table {table_name!r}")
            state = _TableState(table)
            self._tables[table_name] = state
        return state

    def row_count(self, table_name: str) -> int:
        state = self._tables.get(table_name)
        return len(state.rows) if state else 0

    def upsert_dimension(self, table_name: str, row: Mapping) -> int:
        """Insert or find by natural key; first write wins, keys stay dense."""
        table = self.catalog.table(table_name)
        if table is None or table.role != "dimension":
            raise StoreError(f"{table_name!r} is not a dimension table")
        _check_typed(table, row)
        natural = []
        for part in table.natural_key:
            value = row.get(part)
            if value is None:
                raise StoreTypeError(f"{table_name}: natural key part {part!r} is missing")
            natural.append(str(value))
        state = self._state(table_name)
        key = tuple(natural)
        existing = state.by_natural.get(key)
        if existing is not None:
            return existing
        sk = len(state.rows) + 1
        stored = {SK_COLUMN: sk, **{k: v for k, v in row.items() if v is not None}}
        state.by_natural[key] = sk
        state.by_leading.setdefault(natural[0], sk)
        state.append(stored)
        return sk

    def resolve_dimension(self, table_name: str, leading_key: str) -> int | None:
        """Surrogate key whose leading natural-key part equals ``leading_key``."""
        state = self._tables.get(table_name)
        if state is None:
            return None
        return state.by_leading.get(leading_key)

    def insert_facts(self, table_name: str, rows: Sequence[Mapping]) -> int:
        """Append a batch atomically; any dangling key rejects the whole batch."""
        table = self.catalog.table(table_name)
        if table is None or table.role != "fact":
            raise StoreError(f"{table_name!r} is not a fact table")
        fk_limits = [
            (a.name, a.references, self.row_count(a.references))
            for a in table.attributes
            if a.kind == "foreign-key"
        ]
        for row in rows:
            _check_typed(table, row)
            for name, ref, limit in fk_limits:
                value = row.get(name)
                if value is None:
                    continue
                if not 1 <= value <= limit:
                    raise DanglingKeyError(
                        f"{table_name}.{name}={value} does not resolve in {ref!r}"
                    )
        state = self._state(table_name)
        for row in rows:
            state.append({k: v for k, v in row.items() if v is not None})
        return len(rows)

    # -- reads ------------------------------------------------------------

    def table_digest(self, table_name: str) -> str | None:
        state = self._tables.get(table_name)
        return state.digest if state else None

    def snapshot(self) -> "Snapshot":
        tables = {name: tuple(dict(r) for r in state.rows) for name, state in self._tables.items()}
        digests = {name: state.digest for name, state in self._tables.items()}
        return Snapshot(catalog=self.catalog, tables=tables, table_digests=digests)


def open_store(path: str | Path, catalog: Catalog) -> Store:
    """Open or create a store directory bound to ``catalog``."""
    try:
        return Store(Path(path), catalog)
    except OSError as exc:
        raise StoreError(f"cannot open store at {path}: {exc}") from exc


# --- snapshots --------------------------------------------------------------

def _combined_digest(table_digests: Mapping[str, str]) -> str:
    payload = "".join(f"{name}:{table_digests[name]}\n" for name in sorted(table_digests))
    return format(fnv1a64(payload.encode("utf-8")), "016x")


@dataclass(frozen=True)
class Snapshot:
    """Immutable view of the loaded warehouse at a load boundary."""

    catalog: Catalog
    tables: Mapping[str, tuple[Mapping, ...]]
    table_digests: Mapping[str, str]

    @property
    def digest(self) -> str:
        return _combined_digest(self.table_digests)

    def rows(self, table_name: str) -> tuple[Mapping, ...]:
        return self.tables.get(table_name, ())

    @classmethod
    def from_tables(cls, catalog: Catalog, tables: Mapping[str, Sequence[Mapping]]) -> "Snapshot":
        """Build an in-memory snapshot, computing digests as the store would."""
        frozen: dict[str, tuple[Mapping, ...]] = {}
        digests: dict[str, str] = {}
        for name, rows in tables.items():
            table = catalog.table(name)
            if table is None:
                raise StoreError(f"unknown table {name!r}")
            state = _TableState(table)
            for row in rows:
                _check_typed(table, row, allow_sk=True)
                state.append(dict(row))
            frozen[name] = tuple(dict(r) for r in state.rows)
            digests[name] = state.digest
        return cls(catalog=catalog, tables=frozen, table_digests=digests)


# --- star queries ------------------------------------------------------------

@dataclass(frozen=True)
class EqFilter:
    attribute: str
    value: object


@dataclass(frozen=True)
class RangeFilter:
    """Closed interval; either bound may be None for half-open ranges."""

    attribute: str
    lo: object = None
    hi: object = None


@dataclass(frozen=True)
class DimensionJoin:
    dimension: str
    filters: tuple = ()


@dataclass(frozen=True)
class Aggregate:
    op: str
    attribute: str

    @property
    def column(self) -> str:
        return f"{self.op}({self.attribute})"


@dataclass(frozen=True)
class QuerySpec:
    fact: str
    joins: tuple = ()
    project: tuple = ()
    group_by: tuple = ()
    aggregates: tuple = ()


@dataclass
class ResultTable:
    columns: tuple[str, ...]
    rows: list[tuple]

    def sorted_rows(self) -> list[tuple]:
        return sorted(self.rows, key=lambda row: tuple((v is None, 0 if v is None else v) for v in row))


def _filter_passes(filters, row: Mapping) -> bool:
    for flt in filters:
        value = row.get(flt.attribute)
        if isinstance(flt, EqFilter):
            if value != flt.value:
                return False
        else:
            if value is None:
                return False
            if flt.lo is not None and value < flt.lo:
                return False
            if flt.hi is not None and value > flt.hi:
                return False
    return True


def validate_query(catalog: Catalog, q: QuerySpec) -> TableDef:
    fact = catalog.table(q.fact)
    if fact is None or fact.role != "fact":
        raise QueryError(f"{q.fact!r} is not a fact table")
    joined: set[str] = set()
    for join in q.joins:
        dim = catalog.table(join.dimension)
        if dim is None or join.dimension not in fact.dimension_refs:
            raise QueryError(f"{join.dimension!r} is not a dimension of {fact.name!r}")
        if fact.foreign_key_for(join.dimension) is None:
            raise QueryError(f"{fact.name!r} has no foreign key for {join.dimension!r}")
        joined.add(join.dimension)
        for flt in join.filters:
            if dim.attribute(flt.attribute) is None:
                raise UnknownAttributeError(f"{join.dimension}.{flt.attribute} does not exist")
    for name in q.project:
        if "." in name:
            dim_name, attr = name.split(".", 1)
            if dim_name not in joined:
                raise QueryError(f"projection {name!r} requires joining {dim_name!r}")
            dim = catalog.table(dim_name)
            if dim is None or dim.attribute(attr) is None:
                raise UnknownAttributeError(f"{name!r} does not exist")
        elif fact.attribute(name) is None:
            raise UnknownAttributeError(f"{q.fact}.{name} does not exist")
    for name in q.group_by:
        if name not in q.project:
            raise QueryError(f"group_by {name!r} must be projected")
    for agg in q.aggregates:
        if agg.op not in AGGREGATE_OPS:
            raise QueryError(f"unknown aggregate op {agg.op!r}")
        if agg.attribute not in fact.measures:
            raise UnknownAttributeError(f"aggregate over non-measure {agg.attribute!r}")
    return fact


def star_query(snapshot: Snapshot, q: QuerySpec) -> ResultTable:
    """Filter joined dimensions, inner-join facts on surrogate keys, project,
    then group/aggregate. Facts lacking a key for a joined dimension drop out;
    the mean of an empty value set is absent and its count is 0.
    """
    fact = validate_query(snapshot.catalog, q)

    # sk -> dimension row for rows passing that join's filters
    join_maps: list[tuple[str, dict[int, Mapping]]] = []
    for join in q.joins:
        allowed: dict[int, Mapping] = {}
        for row in snapshot.rows(join.dimension):
            if _filter_passes(join.filters, row):
                allowed[row[SK_COLUMN]] = row
        fk_attr = fact.foreign_key_for(join.dimension)
        assert fk_attr is not None
        join_maps.append((fk_attr.name, allowed))

    matched: list[tuple[Mapping, dict[str, Mapping]]] = []
    dim_names = [join.dimension for join in q.joins]
    for fact_row in snapshot.rows(q.fact):
        dims: dict[str, Mapping] = {}
        ok = True
        for (fk_name, allowed), dim_name in zip(join_maps, dim_names):
            sk = fact_row.get(fk_name)
            if sk is None or sk not in allowed:
                ok = False
                break
            dims[dim_name] = allowed[sk]
        if ok:
            matched.append((fact_row, dims))

    def cell(name: str, fact_row: Mapping, dims: Mapping[str, Mapping]):
        if "." in name:
            dim_name, attr = name.split(".", 1)
            return dims[dim_name].get(attr)
        return fact_row.get(name)

    if not q.aggregates:
        columns = tuple(q.project)
        rows = [tuple(cell(name, f, d) for name in q.project) for f, d in matched]
        return ResultTable(columns=columns, rows=rows)

    groups: dict[tuple, list[tuple[Mapping, Mapping]]] = {}
    for f, d in matched:
        key = tuple(cell(name, f, d) for name in q.group_by)
        groups.setdefault(key, []).append((f, d))

    columns = tuple(q.group_by) + tuple(a.column for a in q.aggregates)
    rows = []
    for key, members in groups.items():
        out = list(key)
        for agg in q.aggregates:
            values = [f.get(agg.attribute) for f, _ in members]
            values = [v for v in values if v is not None]
            if agg.op == "count":
                out.append(len(values))
            elif not values:
                out.append(None)
            elif agg.op == "sum":
                out.append(fsum(values))
            elif agg.op == "mean":
                out.append(fsum(values) / len(values))
            elif agg.op == "min":
                out.append(min(values))
            else:
                out.append(max(values))
        rows.append(tuple(out))
    return ResultTable(columns=columns, rows=rows)
