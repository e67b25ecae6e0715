"""Core CLI - `run`, `report` and `schema` for the Liouville corner lab.

This module contains all command logic in an importable form.
The liouville-lab.py script is the executable entry point.

Exit codes:
- 0: every binding check passed (advisory checks never fail a run)
- 1: a job crashed or a binding check failed
- 2: config or usage error; nothing is written
"""

import argparse
import sys
import time
from pathlib import Path

from job_pool import JobPool
from lab_config import load_config, schema_text
from lab_utils import ConfigError, arcsin_clamps, format_float, log
from store import MANIFEST_NAME, RunManifest, write_text_atomic

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2

REPORT_COLUMNS = ("job", "kind", "verdict", "binding", "slope", "C", "seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="liouville-lab",
                                     description="Blow-up Liouville experiments on corner domains")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run every experiment in a TOML config")
    run.add_argument("config", type=Path)
    run.add_argument("--jobs", type=int, default=None, help="concurrent jobs (overrides the config)")
    run.add_argument("--out", type=Path, default=None, help="output directory (overrides the config)")
    report = sub.add_parser("report", help="summarize a finished run directory")
    report.add_argument("run_dir", type=Path)
    sub.add_parser("schema", help="print the config schema")
    return parser


def report_rows(manifest: RunManifest) -> list[list[str]]:
    """One row per job, straight from the manifest."""
    rows = []
    for name, job in manifest.jobs.items():
        rows.append([
            name,
            job.get("kind", "-"),
            job.get("verdict", job.get("status", "-")),
            "yes" if job.get("binding", True) else "advisory",
            format_float(job.get("slope"), 4),
            format_float(job.get("C"), 4),
            format_float(job.get("seconds"), 4),
        ])
    return rows


def format_table(rows: list[list[str]]) -> str:
    table = [list(REPORT_COLUMNS)] + rows
    widths = [max(len(str(r[i])) for r in table) for i in range(len(REPORT_COLUMNS))]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip() for r in table]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


async def cmd_run(config_path: Path, jobs: int | None, out: Path | None) -> int:
    try:
        cfg = load_config(config_path)
        if jobs is not None and jobs < 1:
            raise ConfigError(f"--jobs must be >= 1, got {jobs}")
    except ConfigError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    run_dir = Path(out or cfg.out)
    limit = jobs or cfg.jobs
    started = time.time()
    manifest = RunManifest(run_dir)
    manifest.start(cfg.sha256, cfg.seed, [e.name for e in cfg.experiments])
    config_copy = run_dir / "config.toml"
    write_text_atomic(config_copy, cfg.source)
    manifest.add_file(config_copy)
    arcsin_clamps.reset()
    log(f"Run started: {len(cfg.experiments)} jobs, {limit} at a time, output in {run_dir}")

    pool = JobPool(manifest, cfg.seed, limit)
    await pool.run_all(list(cfg.experiments))

    manifest.note("arcsin_clamps", arcsin_clamps.count)
    code = EXIT_FAILED if pool.failed else EXIT_OK
    manifest.mark_finished(code, started)
    print(format_table(report_rows(manifest)))
    log(f"Run finished with exit code {code}")
    return code


def cmd_report(run_dir: Path) -> int:
    manifest = RunManifest(run_dir)
    if not manifest.exists:
        print(f"Error: no {MANIFEST_NAME} in {run_dir}", file=sys.stderr)
        return EXIT_CONFIG
    data = manifest.as_dict()
    print(f"run: {run_dir}  tool {data.get('tool_version', '-')}  config {str(data.get('config_sha256', '-'))[:12]}"
          f"  seed {data.get('seed', '-')}  exit {data.get('exit_code', '-')}")
    print(format_table(report_rows(manifest)))
    clamps = data.get("arcsin_clamps")
    if clamps:
        print(f"warning: {clamps} arcsin arguments were clamped into [-1, 1]")
    for rel in manifest.verify_files():
        print(f"warning: {rel} is missing or does not match its recorded hash")
    return EXIT_OK


async def main(argv: list[str] | None = None) -> int:
    """Main entry point.

    Args:
        argv: Command-line arguments without the program name.

    Returns:
        Exit code (see module docstring).
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK

    if args.command == "schema":
        print(schema_text(), end="")
        return EXIT_OK
    if args.command == "report":
        return cmd_report(args.run_dir)
    return await cmd_run(args.config, args.jobs, args.out)
