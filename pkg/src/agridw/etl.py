"""Source extraction, declarative field mapping, and validated warehouse loading.

Raw rows come from RFC 4180 delimited files or line-oriented JSON records.
A MappingSpec turns each raw row into a typed row for one catalog table via
a per-binding transform chain; every failure becomes a RejectRecord with a
machine-readable reason, never a dropped row.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from datetime import datetime
from decimal import Decimal
from importlib import resources
from math import isfinite
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Iterator, Mapping, Sequence

from .catalog import Catalog, TableDef
from .errors import ConfigError, MappingError, UnitConversionError
from .util import atomic_write_text, csv_line

if TYPE_CHECKING:
    from .store import Store

REASON_TYPE = "type-error"
REASON_UNIT = "unit-error"
REASON_MISSING = "missing-required"
REASON_SYNONYM = "synonym-miss"
REASON_RANGE = "range-error"
REJECT_REASONS = (REASON_TYPE, REASON_UNIT, REASON_MISSING, REASON_SYNONYM, REASON_RANGE)

# Binding marker for rejects that concern the whole row, not one binding.
STRUCTURAL_BINDING = "<row>"

FORMAT_DELIMITED = "delimited-text"
FORMAT_RECORD_JSON = "record-json"

# Accepted range per unit token: (lo, hi, lo_exclusive).
RANGE_BOUNDS: dict[str, tuple[float, float, bool]] = {
    "pH": (3.0, 10.0, False),
    "mg/l": (0.0, 10000.0, False),
    "ton/ha": (0.0, 200.0, True),
}

# Unit token -> (dimension family, decimal exponent relative to the family base).
_UNIT_SCALE: dict[str, tuple[str, int]] = {
    "g/ha": ("mass-per-area", 0),
    "kg/ha": ("mass-per-area", 3),
    "t/ha": ("mass-per-area", 6),
    "ton/ha": ("mass-per-area", 6),
    "mg/l": ("concentration", 0),
    "pH": ("acidity", 0),
    "l/ha": ("volume-per-area", 0),
}

TRANSFORM_OPS = ("rename", "parse-number", "parse-date", "unit-convert", "synonym", "constant", "nullable-default")


@dataclass(frozen=True)
class SourceDescriptor:
    """One raw input file. Encoding is always UTF-8."""

    path: str
    format: str = FORMAT_DELIMITED
    delimiter: str = ","
    has_header: bool = True

    def __post_init__(self):
        if not self.path:
            raise ConfigError("source path must be non-empty")
        if self.format not in (FORMAT_DELIMITED, FORMAT_RECORD_JSON):
            raise ConfigError(f"unknown source format {self.format!r}")
        if len(self.delimiter) != 1:
            raise ConfigError("delimiter must be a single character")


@dataclass(frozen=True)
class RawRow:
    """A raw source row: text fields by name; empty fields are absent."""

    source: str
    number: int  # 1-based data row number, header excluded
    fields: Mapping[str, str]
    raw: str


@dataclass(frozen=True)
class RejectRecord:
    source: str
    row: int
    binding: str
    reason: str
    raw: str


@dataclass(frozen=True)
class Transform:
    op: str
    params: Mapping[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class Binding:
    source: str
    target: str
    transforms: tuple[Transform, ...] = ()


@dataclass(frozen=True)
class MappingSpec:
    target_table: str
    bindings: tuple[Binding, ...]


@dataclass
class TableLoadStats:
    table: str
    rows_read: int = 0
    rows_accepted: int = 0
    rows_rejected: int = 0
    upserts_new: int = 0
    upserts_deduped: int = 0
    elapsed_s: float = 0.0


@dataclass
class LoadReport:
    tables: dict[str, TableLoadStats] = field(default_factory=dict)
    rejects: list[RejectRecord] = field(default_factory=list)

    def stats_for(self, table: str) -> TableLoadStats:
        if table not in self.tables:
            self.tables[table] = TableLoadStats(table=table)
        return self.tables[table]

    @property
    def total_read(self) -> int:
        return sum(s.rows_read for s in self.tables.values())

    @property
    def total_accepted(self) -> int:
        return sum(s.rows_accepted for s in self.tables.values())

    @property
    def total_rejected(self) -> int:
        return sum(s.rows_rejected for s in self.tables.values())

    def format_summary(self) -> str:
        lines = ["table               read  accepted  rejected  new-dims  deduped   seconds"]
        for name in sorted(self.tables):
            s = self.tables[name]
            lines.append(
                f"{name:<18} {s.rows_read:>5} {s.rows_accepted:>9} {s.rows_rejected:>9}"
                f" {s.upserts_new:>9} {s.upserts_deduped:>8} {s.elapsed_s:>9.3f}"
            )
        lines.append(
            f"total: {self.total_read} read, {self.total_accepted} accepted, {self.total_rejected} rejected"
        )
        return "\n".join(lines)


# --- reading sources ------------------------------------------------------

class _LineTap:
    """Iterator wrapper that remembers the lines the csv reader consumed."""

    def __init__(self, lines: Iterator[str]):
        self._lines = lines
        self.consumed: list[str] = []

    def __iter__(self):
        return self

    def __next__(self) -> str:
        line = next(self._lines)
        self.consumed.append(line)
        return line

    def take_raw(self) -> str:
        raw = "".join(self.consumed).rstrip("\r\n")
        self.consumed.clear()
        return raw


def _read_delimited(src: SourceDescriptor) -> Iterator[RawRow | RejectRecord]:
    with open(src.path, "r", encoding="utf-8-sig", newline="") as handle:
        tap = _LineTap(iter(handle))
        reader = csv.reader(tap, delimiter=src.delimiter)
        header: list[str] | None = None
        if src.has_header:
            try:
                header = next(reader)
            except StopIteration:
                return
            tap.take_raw()
        number = 0
        for record in reader:
            raw = tap.take_raw()
            if not record:  # blank line
                continue
            number += 1
            if header is not None and len(record) != len(header):
                yield RejectRecord(
                    source=src.path,
                    row=number,
                    binding=STRUCTURAL_BINDING,
                    reason=REASON_TYPE,
                    raw=raw,
                )
                continue
            names = header if header is not None else [f"col{i + 1}" for i in range(len(record))]
            fields = {name: value for name, value in zip(names, record) if value != ""}
            yield RawRow(source=src.path, number=number, fields=fields, raw=raw)


def _json_scalar_text(value) -> str | None:
    if value is None:
        return None
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return value if value != "" else None
    if isinstance(value, (int, float)):
        return repr(value)
    return json.dumps(value, ensure_ascii=False)


def _read_record_json(src: SourceDescriptor) -> Iterator[RawRow | RejectRecord]:
    with open(src.path, "r", encoding="utf-8-sig") as handle:
        number = 0
        for line in handle:
            raw = line.rstrip("\r\n")
            if not raw.strip():
                continue
            number += 1
            try:
                record = json.loads(raw)
            except json.JSONDecodeError:
                record = None
            if not isinstance(record, dict):
                yield RejectRecord(
                    source=src.path,
                    row=number,
                    binding=STRUCTURAL_BINDING,
                    reason=REASON_TYPE,
                    raw=raw,
                )
                continue
            fields = {}
            for key, value in record.items():
                text = _json_scalar_text(value)
                if text is not None:
                    fields[str(key)] = text
            yield RawRow(source=src.path, number=number, fields=fields, raw=raw)


def read_source(src: SourceDescriptor) -> Iterator[RawRow | RejectRecord]:
    """Stream raw rows in file order; malformed rows yield structural rejects."""
    if src.format == FORMAT_RECORD_JSON:
        return _read_record_json(src)
    return _read_delimited(src)


# --- unit conversion and synonyms -----------------------------------------

def convert_unit(value: float, from_unit: str, to_unit: str) -> float:
    """Scale ``value`` between compatible units; identity pairs return the input.

    Scale factors are exact powers of ten applied as a decimal exponent
    shift, so round trips are exact for values the store can represent.
    """
    try:
        family_a, exp_a = _UNIT_SCALE[from_unit]
        family_b, exp_b = _UNIT_SCALE[to_unit]
    except KeyError as exc:
        raise UnitConversionError(f"unknown unit token {exc.args[0]!r}") from None
    if family_a != family_b:
        raise UnitConversionError(f"incompatible unit pair {from_unit!r} -> {to_unit!r}")
    shift = exp_a - exp_b
    if shift == 0:
        return value
    return float(Decimal(repr(value)).scaleb(shift))


SynonymTable = Mapping[str, str]


def load_synonym_table(path: str | Path) -> dict[str, str]:
    """Two-column delimited text (variant, canonical) -> lowercase lookup map.

    Every canonical form is also registered as its own variant.
    """
    text = Path(path).read_text(encoding="utf-8-sig")
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if rows and [c.lower() for c in rows[0][:2]] == ["variant", "canonical"]:
        rows = rows[1:]
    table: dict[str, str] = {}
    for row in rows:
        if len(row) < 2:
            continue
        variant, canonical = row[0].strip(), row[1].strip()
        table[variant.lower()] = canonical
        table.setdefault(canonical.lower(), canonical)
    return table


_BUILTIN_SYNONYMS: dict[str, str] | None = None


def builtin_crop_synonyms() -> dict[str, str]:
    """Crop-name harmonization table shipped with the package."""
    global _BUILTIN_SYNONYMS
    if _BUILTIN_SYNONYMS is None:
        with resources.as_file(resources.files("agridw").joinpath("data/crop_synonyms.csv")) as p:
            _BUILTIN_SYNONYMS = load_synonym_table(p)
    return _BUILTIN_SYNONYMS


def normalize_synonym(value: str, table: SynonymTable) -> str | None:
    """Canonical form for ``value`` (case-insensitive, trimmed), or None on a miss."""
    return table.get(value.strip().lower())


def default_synonym_tables() -> dict[str, SynonymTable]:
    return {"crop-names": builtin_crop_synonyms()}


# --- mapping spec ----------------------------------------------------------

def _parse_transform(obj, locus: str) -> Transform:
    if not isinstance(obj, dict) or "op" not in obj:
        raise MappingError(f"{locus}: transform must be an object with an 'op'")
    op = obj["op"]
    if op not in TRANSFORM_OPS:
        raise MappingError(f"{locus}: unknown transform op {op!r}")
    params = {k: v for k, v in obj.items() if k != "op"}
    return Transform(op=op, params=params)


def mapping_from_dict(doc: Mapping) -> MappingSpec:
    if not isinstance(doc, Mapping):
        raise MappingError("mapping spec must be an object")
    target = doc.get("target_table")
    if not isinstance(target, str) or not target:
        raise MappingError("mapping spec needs a target_table")
    raw_bindings = doc.get("bindings")
    if not isinstance(raw_bindings, list) or not raw_bindings:
        raise MappingError("mapping spec needs a non-empty bindings list")
    bindings = []
    for i, raw in enumerate(raw_bindings):
        locus = f"bindings[{i}]"
        if not isinstance(raw, dict):
            raise MappingError(f"{locus}: binding must be an object")
        source = raw.get("source", "")
        target_attr = raw.get("target")
        if not isinstance(target_attr, str) or not target_attr:
            raise MappingError(f"{locus}: binding needs a target attribute")
        transforms = tuple(
            _parse_transform(t, f"{locus}.transforms[{j}]")
            for j, t in enumerate(raw.get("transforms", []))
        )
        bindings.append(Binding(source=str(source), target=target_attr, transforms=transforms))
    return MappingSpec(target_table=target, bindings=tuple(bindings))


def load_mapping(path: str | Path) -> MappingSpec:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise MappingError(f"cannot read mapping file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise MappingError(f"{path}: invalid JSON: {exc.msg} (line {exc.lineno})") from exc
    return mapping_from_dict(doc)


def mapping_to_dict(spec: MappingSpec) -> dict:
    return {
        "target_table": spec.target_table,
        "bindings": [
            {
                "source": b.source,
                "target": b.target,
                "transforms": [{"op": t.op, **t.params} for t in b.transforms],
            }
            for b in spec.bindings
        ],
    }


def validate_mapping(
    spec: MappingSpec,
    catalog: Catalog,
    synonyms: Mapping[str, SynonymTable] | None = None,
) -> list[str]:
    """Problems that make the spec unusable against ``catalog`` (empty = valid)."""
    problems: list[str] = []
    table = catalog.table(spec.target_table)
    if table is None:
        return [f"target_table {spec.target_table!r} not in catalog"]
    synonyms = synonyms if synonyms is not None else default_synonym_tables()
    bound: set[str] = set()
    for binding in spec.bindings:
        attr = table.attribute(binding.target)
        if attr is None:
            problems.append(f"target attribute {binding.target!r} not in table {table.name!r}")
            continue
        bound.add(attr.name)
        converts = [t for t in binding.transforms if t.op == "unit-convert"]
        if len(converts) > 1:
            problems.append(f"binding {binding.target!r}: at most one unit-convert allowed")
        for t in binding.transforms:
            if t.op == "parse-date" and not isinstance(t.params.get("pattern"), str):
                problems.append(f"binding {binding.target!r}: parse-date needs a pattern")
            elif t.op == "unit-convert":
                if not isinstance(t.params.get("from"), str) or not isinstance(t.params.get("to"), str):
                    problems.append(f"binding {binding.target!r}: unit-convert needs 'from' and 'to'")
            elif t.op == "synonym":
                name = t.params.get("table")
                if name not in synonyms:
                    problems.append(f"binding {binding.target!r}: unknown synonym table {name!r}")
            elif t.op in ("constant", "nullable-default") and "value" not in t.params:
                problems.append(f"binding {binding.target!r}: {t.op} needs a value")
    for attr in table.attributes:
        if not attr.nullable and attr.name not in bound:
            problems.append(f"non-nullable attribute {attr.name!r} is neither bound nor constant")
    return problems


# --- applying mappings ------------------------------------------------------

class _BindingFailure(Exception):
    def __init__(self, reason: str):
        self.reason = reason


def _parse_number(text) -> float:
    if not isinstance(text, str):
        if isinstance(text, bool) or not isinstance(text, (int, float)):
            raise _BindingFailure(REASON_TYPE)
        value = float(text)
    else:
        try:
            value = float(text)
        except ValueError:
            raise _BindingFailure(REASON_TYPE) from None
    if not isfinite(value):
        raise _BindingFailure(REASON_TYPE)
    return value


def _compile_transform(t: Transform, synonyms: Mapping[str, SynonymTable]) -> Callable:
    if t.op == "rename":
        return lambda v: v
    if t.op == "parse-number":
        return lambda v: None if v is None else _parse_number(v)
    if t.op == "parse-date":
        pattern = str(t.params["pattern"])

        def parse_date(v):
            if v is None:
                return None
            try:
                return datetime.strptime(str(v), pattern).date().isoformat()
            except ValueError:
                raise _BindingFailure(REASON_TYPE) from None

        return parse_date
    if t.op == "unit-convert":
        from_unit = str(t.params["from"])
        to_unit = str(t.params["to"])

        def unit_convert(v):
            if v is None:
                return None
            if not isinstance(v, float):
                raise _BindingFailure(REASON_TYPE)
            try:
                return convert_unit(v, from_unit, to_unit)
            except UnitConversionError:
                raise _BindingFailure(REASON_UNIT) from None

        return unit_convert
    if t.op == "synonym":
        table = synonyms[t.params["table"]]

        def lookup(v):
            if v is None:
                return None
            hit = table.get(str(v).strip().lower())
            if hit is None:
                raise _BindingFailure(REASON_SYNONYM)
            return hit

        return lookup
    if t.op == "constant":
        value = t.params["value"]
        return lambda v: value
    if t.op == "nullable-default":
        default = t.params["value"]
        return lambda v: default if v is None else v
    raise MappingError(f"unknown transform op {t.op!r}")


class CompiledMapping:
    """A MappingSpec checked against a catalog and compiled to closures."""

    def __init__(self, spec: MappingSpec, catalog: Catalog, synonyms: Mapping[str, SynonymTable] | None = None):
        synonyms = synonyms if synonyms is not None else default_synonym_tables()
        problems = validate_mapping(spec, catalog, synonyms)
        if problems:
            raise MappingError(f"mapping for {spec.target_table!r}: " + "; ".join(problems))
        self.spec = spec
        self.table: TableDef = catalog.table(spec.target_table)  # type: ignore[assignment]
        self._plan = []
        for binding in spec.bindings:
            attr = self.table.attribute(binding.target)
            assert attr is not None
            chain = [_compile_transform(t, synonyms) for t in binding.transforms]
            bounds = RANGE_BOUNDS.get(attr.unit) if attr.kind == "number" and attr.unit else None
            self._plan.append((binding.source, attr, chain, bounds))

    def apply(self, row: RawRow) -> dict | RejectRecord:
        fields = row.fields
        typed: dict[str, object] = {}
        for source, attr, chain, bounds in self._plan:
            value: object = fields.get(source)
            try:
                for step in chain:
                    value = step(value)
            except _BindingFailure as failure:
                return RejectRecord(
                    source=row.source, row=row.number, binding=attr.name,
                    reason=failure.reason, raw=row.raw,
                )
            if value is None:
                if not attr.nullable:
                    return RejectRecord(
                        source=row.source, row=row.number, binding=attr.name,
                        reason=REASON_MISSING, raw=row.raw,
                    )
                continue
            if attr.kind == "number":
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    return RejectRecord(
                        source=row.source, row=row.number, binding=attr.name,
                        reason=REASON_TYPE, raw=row.raw,
                    )
                value = float(value)
                if bounds is not None:
                    lo, hi, lo_exclusive = bounds
                    if value < lo or value > hi or (lo_exclusive and value == lo):
                        return RejectRecord(
                            source=row.source, row=row.number, binding=attr.name,
                            reason=REASON_RANGE, raw=row.raw,
                        )
            else:
                if not isinstance(value, str):
                    return RejectRecord(
                        source=row.source, row=row.number, binding=attr.name,
                        reason=REASON_TYPE, raw=row.raw,
                    )
            typed[attr.name] = value
        return typed


def apply_mapping(
    row: RawRow,
    spec: MappingSpec,
    catalog: Catalog,
    synonyms: Mapping[str, SynonymTable] | None = None,
) -> dict | RejectRecord:
    """Transform one raw row; any failure yields a RejectRecord for the first failing binding."""
    return CompiledMapping(spec, catalog, synonyms).apply(row)


# --- pipeline ---------------------------------------------------------------

def write_reject_ledger(rejects: Sequence[RejectRecord], path: str | Path) -> Path:
    """Full reject ledger as delimited text: source,row,binding,reason,raw."""
    out = io.StringIO()
    out.write("source,row,binding,reason,raw\n")
    for r in rejects:
        out.write(csv_line([r.source, str(r.row), r.binding, r.reason, r.raw]))
    return atomic_write_text(Path(path), out.getvalue())


def run_pipeline(
    sources: Sequence[tuple[SourceDescriptor, MappingSpec]],
    catalog: Catalog,
    store: "Store",
    synonyms: Mapping[str, SynonymTable] | None = None,
) -> LoadReport:
    """Load all sources: dimensions first, then facts, with a full reject ledger.

    Dimension rows are upserted by natural key (first write wins); fact rows
    resolve each foreign-key value against the referenced dimension's leading
    natural-key part and are rejected as missing-required when unresolved.
    The store is flushed after each source batch.
    """
    synonyms = synonyms if synonyms is not None else default_synonym_tables()
    compiled: list[tuple[SourceDescriptor, CompiledMapping]] = []
    for src, spec in sources:
        compiled.append((src, CompiledMapping(spec, catalog, synonyms)))

    report = LoadReport()
    ordered = [c for c in compiled if not c[1].table.is_fact] + [c for c in compiled if c[1].table.is_fact]

    with store.exclusive_lock():
        for src, mapping in ordered:
            table = mapping.table
            stats = report.stats_for(table.name)
            started = time.perf_counter()
            fact_batch: list[dict] = []
            fk_attrs = [(a.name, a.references) for a in table.attributes if a.kind == "foreign-key"]
            for item in read_source(src):
                stats.rows_read += 1
                if isinstance(item, RejectRecord):
                    stats.rows_rejected += 1
                    report.rejects.append(item)
                    continue
                typed = mapping.apply(item)
                if isinstance(typed, RejectRecord):
                    stats.rows_rejected += 1
                    report.rejects.append(typed)
                    continue
                if not table.is_fact:
                    before = store.row_count(table.name)
                    store.upsert_dimension(table.name, typed)
                    if store.row_count(table.name) > before:
                        stats.upserts_new += 1
                    else:
                        stats.upserts_deduped += 1
                    stats.rows_accepted += 1
                    continue
                reject = None
                for attr_name, ref_table in fk_attrs:
                    raw_key = typed.get(attr_name)
                    if raw_key is None:
                        continue
                    sk = store.resolve_dimension(ref_table, str(raw_key))
                    if sk is None:
                        reject = RejectRecord(
                            source=item.source, row=item.number, binding=attr_name,
                            reason=REASON_MISSING, raw=item.raw,
                        )
                        break
                    typed[attr_name] = sk
                if reject is not None:
                    stats.rows_rejected += 1
                    report.rejects.append(reject)
                    continue
                fact_batch.append(typed)
            if table.is_fact and fact_batch:
                store.insert_facts(table.name, fact_batch)
                stats.rows_accepted += len(fact_batch)
            store.flush()
            stats.elapsed_s += time.perf_counter() - started
    return report
