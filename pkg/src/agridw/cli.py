"""agridw command line: catalog validation, ingest, analysis, synthesis.

Exit codes: 0 success, 1 completed with findings (catalog violations or
ingest rejects), 2 usage or environment failure. Diagnostics go to stderr;
analysis data is written to files.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import analytics, report, synth
from .catalog import builtin_catalog, catalog_digest, load_catalog, validate_catalog
from .errors import AgriDwError, ConfigError
from .etl import SourceDescriptor, load_mapping, run_pipeline, write_reject_ledger
from .store import open_store


def _load_catalog_arg(path: str | None):
    if path is None:
        return builtin_catalog()
    return load_catalog(path)


def _parse_rule(text: str) -> analytics.SignificanceRule:
    """Rule syntax: gap:<threshold>[:<min-count>] or welch:<alpha>[:<min-count>]."""
    parts = text.split(":")
    kind = parts[0]
    try:
        if kind == "gap":
            rule = analytics.SignificanceRule(
                kind=analytics.RULE_RELATIVE_GAP,
                threshold=float(parts[1]) if len(parts) > 1 else 0.10,
                min_count=int(parts[2]) if len(parts) > 2 else 5,
            )
        elif kind == "welch":
            rule = analytics.SignificanceRule(
                kind=analytics.RULE_WELCH_T,
                alpha=float(parts[1]) if len(parts) > 1 else 0.05,
                min_count=int(parts[2]) if len(parts) > 2 else 5,
            )
        else:
            raise ConfigError(f"unknown rule {kind!r}; use gap:<threshold> or welch:<alpha>")
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"bad rule spec {text!r}: {exc}") from exc
    return rule


def _cmd_catalog_validate(args) -> int:
    catalog = _load_catalog_arg(args.catalog)
    violations = validate_catalog(catalog)
    for v in violations:
        attr = f".{v.attribute}" if v.attribute else ""
        print(f"{v.table}{attr}: [{v.rule}] {v.message}")
    if violations:
        return 1
    print(f"catalog ok: {len(catalog.tables)} tables, digest {catalog_digest(catalog)}")
    return 0


def _cmd_ingest(args) -> int:
    if len(args.source) != len(args.mapping):
        raise ConfigError("--source and --mapping must be given in matching pairs")
    catalog = _load_catalog_arg(args.catalog)
    store = open_store(args.store, catalog)
    pairs = []
    for src_path, map_path in zip(args.source, args.mapping):
        pairs.append((SourceDescriptor(path=src_path), load_mapping(map_path)))
    load_report = run_pipeline(pairs, catalog, store)
    ledger_path = Path(args.rejects) if args.rejects else Path(args.store) / "reject_ledger.csv"
    write_reject_ledger(load_report.rejects, ledger_path)
    print(load_report.format_summary(), file=sys.stderr)
    print(f"reject ledger: {ledger_path}", file=sys.stderr)
    return 1 if load_report.rejects else 0


def _cmd_analyze(args) -> int:
    catalog = _load_catalog_arg(args.catalog)
    store = open_store(args.store, catalog)
    snapshot = store.snapshot()
    if not snapshot.rows("FieldFact"):
        raise ConfigError("store has no FieldFact rows to analyze")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = analytics.extract_yield_records(snapshot)
    assignments = analytics.assign_groups(records)
    rule = _parse_rule(args.rule)

    if args.mode == "groups":
        stats = [analytics.yield_group_stats(a, records) for a in assignments.values()]
        fmt = {"json": report.FORMAT_JSON, "markdown": report.FORMAT_MARKDOWN}.get(
            args.format, report.FORMAT_DELIMITED
        )
        suffix = {"json": ".json", "markdown": ".md"}.get(args.format, ".csv")
        path = report.emit_group_table(stats, fmt, out_dir / f"group_table{suffix}")
        print(f"group table: {path}", file=sys.stderr)
    elif args.mode == "factor":
        if args.factor not in analytics.FACTORS:
            print(
                f"unknown factor {args.factor!r}; valid factors: {', '.join(analytics.FACTORS)}",
                file=sys.stderr,
            )
            return 2
        stats = [analytics.factor_group_means(a, records, args.factor) for a in assignments.values()]
        if args.format == "json":
            path = report.emit_factor_series_json(stats, out_dir / f"factor_{args.factor}.json")
        else:
            path = report.emit_factor_series(stats, out_dir / f"factor_{args.factor}.csv")
        print(f"factor series: {path}", file=sys.stderr)
    else:  # mine
        findings = analytics.mine_optima_from_records(records, rule)
        json_path = report.emit_findings(findings, report.FORMAT_JSON, out_dir / "findings.json")
        md_path = report.emit_findings(findings, report.FORMAT_MARKDOWN, out_dir / "findings.md")
        report.write_run_metadata(
            out_dir / "run_metadata.json",
            catalog_digest=catalog_digest(catalog),
            snapshot_digest=snapshot.digest,
            rule=rule.as_dict(),
        )
        print(f"findings: {json_path}, {md_path}", file=sys.stderr)
    return 0


def _cmd_synth(args) -> int:
    config = synth.SynthConfig.from_json_file(args.config)
    if args.seed is not None:
        config = synth.SynthConfig(
            crops=config.crops,
            records_per_crop=config.records_per_crop,
            noise_sd=config.noise_sd,
            missing_rate=config.missing_rate,
            seed=args.seed,
        )
    result = synth.generate(config, args.out)
    print(f"generated {len(config.crops)} crops x {config.records_per_crop} records in {result.out_dir}",
          file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agridw", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_catalog = sub.add_parser("catalog", help="catalog operations")
    catalog_sub = p_catalog.add_subparsers(dest="catalog_command", required=True)
    p_validate = catalog_sub.add_parser("validate", help="check catalog invariants")
    p_validate.add_argument("--catalog", help="catalog JSON path (default: builtin)")
    p_validate.set_defaults(func=_cmd_catalog_validate)

    p_ingest = sub.add_parser("ingest", help="load sources into a store")
    p_ingest.add_argument("--store", required=True, help="store directory")
    p_ingest.add_argument("--catalog", help="catalog JSON path (default: builtin)")
    p_ingest.add_argument("--source", action="append", default=[], help="source file (repeatable)")
    p_ingest.add_argument("--mapping", action="append", default=[], help="mapping spec file (repeatable)")
    p_ingest.add_argument("--rejects", help="reject ledger path (default: <store>/reject_ledger.csv)")
    p_ingest.set_defaults(func=_cmd_ingest)

    p_analyze = sub.add_parser("analyze", help="run yield-group analyses")
    p_analyze.add_argument("mode", choices=("groups", "factor", "mine"))
    p_analyze.add_argument("--store", required=True, help="store directory")
    p_analyze.add_argument("--catalog", help="catalog JSON path (default: builtin)")
    p_analyze.add_argument("--out", required=True, help="output directory")
    p_analyze.add_argument("--rule", default="gap:0.10", help="gap:<threshold> or welch:<alpha>")
    p_analyze.add_argument("--factor", help="factor name for 'factor' mode")
    p_analyze.add_argument("--format", choices=("delimited", "json", "markdown"), default="delimited")
    p_analyze.set_defaults(func=_cmd_analyze)

    p_synth = sub.add_parser("synth", help="generate synthetic sources")
    p_synth.add_argument("--config", required=True, help="synth config JSON")
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.add_argument("--seed", type=int, help="override the config seed")
    p_synth.set_defaults(func=_cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AgriDwError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
