# core/headless_runner.py
# Command controller: solve, bench and validate problem specs from the terminal.

import logging
import sys
from typing import Optional, TextIO

from core import config
from core.bench import BENCH_COLUMNS, BenchOrchestrator
from core.errors import GraphOTError, SpecError, ValidationError
from core.reporting import (
    SUMMARY_COLUMNS,
    TRACE_COLUMNS,
    emit_rows,
    summary_path,
    trace_rows,
    write_summary_csv,
    write_trace_csv,
)
from core.runner import collect_violations, run_spec
from core.spec_file import ProblemSpec, load_spec

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_MAX_ITER = 2


def configure_logging(level: str = config.LOG_LEVEL):
    """Diagnostics go to stderr; data goes to files or stdout."""
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s [%(levelname)s] %(message)s",
        handlers=[logging.StreamHandler(sys.stderr)],
    )
    logging.captureWarnings(True)


class HeadlessRunner:
    def __init__(self, threads: Optional[int] = None, seed: Optional[int] = None, out: Optional[str] = None,
                 log_domain: bool = False, max_iter: Optional[int] = None, stdout: Optional[TextIO] = None):
        self.overrides = dict(threads=threads, seed=seed, out=out, log_domain=log_domain, max_iter=max_iter)
        self.stdout = stdout or sys.stdout

    def _load(self, path: str) -> ProblemSpec:
        return load_spec(path).with_overrides(**self.overrides)

    def _fail(self, exc: Exception) -> int:
        if isinstance(exc, ValidationError):
            for v in exc.violations:
                print(f"[!] {v}", file=sys.stderr)
        elif isinstance(exc, OSError):
            print(f"[!] output not written: {exc}", file=sys.stderr)
        else:
            print(f"[!] {exc}", file=sys.stderr)
        return EXIT_INVALID

    def cmd_solve(self, path: str) -> int:
        try:
            spec = self._load(path)
            result = run_spec(spec)
            report = result.report
            out = spec.output
            if out.csv:
                write_trace_csv(report, out.csv)
                write_summary_csv(report, summary_path(out.csv))
                logger.info("Trace written to %s", out.csv)
        except (GraphOTError, OSError) as exc:
            return self._fail(exc)

        if out.verbosity == "trace" and not out.csv:
            emit_rows(self.stdout, TRACE_COLUMNS, trace_rows(report))
        if out.verbosity != "quiet":
            emit_rows(self.stdout, SUMMARY_COLUMNS, [report.summary()])
        return EXIT_OK if report.converged else EXIT_MAX_ITER

    def cmd_bench(self, path: str) -> int:
        try:
            spec = self._load(path)
            bench = BenchOrchestrator(spec, log_fn=logger.info)
            rows = bench.run()
            if spec.output.csv:
                bench.write(rows, spec.output.csv)
                logger.info("Bench rows written to %s", spec.output.csv)
        except (GraphOTError, OSError) as exc:
            return self._fail(exc)
        if not spec.output.csv:
            emit_rows(self.stdout, BENCH_COLUMNS, [r.as_dict() for r in rows])
        return EXIT_OK if all(all(r.converged) for r in rows) else EXIT_MAX_ITER

    def cmd_validate(self, path: str) -> int:
        try:
            spec = self._load(path)
        except SpecError as exc:
            return self._fail(exc)
        violations = collect_violations(spec)
        if violations:
            for v in violations:
                print(f"[!] {v}", file=sys.stderr)
            return EXIT_INVALID
        print(f"[+] {path}: valid", file=sys.stderr)
        return EXIT_OK
