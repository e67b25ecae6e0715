"""JobPool - runs experiment jobs concurrently with a bounded worker count.

Jobs are synchronous numerical work; each one runs on a worker thread via
asyncio.to_thread while the event loop owns the manifest, so manifest
updates never race.
"""

import asyncio
import time
import traceback
from pathlib import Path
from typing import Callable, Protocol

from experiments import JobResult, run_experiment
from lab_config import ExperimentSpec
from lab_utils import log
from store import RunManifest


class Runner(Protocol):
    """Callable that executes one experiment and returns its result."""

    def __call__(self, exp: ExperimentSpec, run_dir: Path, base_seed: int) -> JobResult:
        ...


class JobPool:
    """Runs a batch of experiments with at most `limit` in flight.

    Responsibilities:
    - Bound concurrency with a semaphore
    - Record status, verdicts, timings and files in the run manifest
    - Turn a crashing job into a "crashed" manifest entry with its traceback
    """

    def __init__(self, manifest: RunManifest, base_seed: int, limit: int = 1,
                 runner: Runner | Callable = run_experiment):
        if limit < 1:
            raise ValueError(f"job limit must be >= 1, got {limit}")
        self.manifest = manifest
        self.base_seed = base_seed
        self.limit = limit
        self.runner = runner
        self.results: dict[str, JobResult] = {}
        self.crashed: dict[str, str] = {}
        self._semaphore = asyncio.Semaphore(limit)

    async def _run_one(self, exp: ExperimentSpec):
        async with self._semaphore:
            started = time.time()
            self.manifest.record_job(exp.name, kind=exp.kind, binding=exp.binding, status="running")
            log(f"Job started: {exp.name} ({exp.kind})")
            try:
                result = await asyncio.to_thread(self.runner, exp, self.manifest.run_dir, self.base_seed)
            except Exception as e:
                seconds = round(time.time() - started, 3)
                text = traceback.format_exc()
                self.crashed[exp.name] = text
                self.manifest.record_job(exp.name, status="crashed", verdict="error", error=str(e),
                                         traceback=text, seconds=seconds)
                log(f"Job crashed: {exp.name}: {type(e).__name__}: {e}")
                return
            seconds = round(time.time() - started, 3)
            self.results[exp.name] = result
            for path in result.files:
                self.manifest.add_file(path)
            self.manifest.record_job(
                exp.name, status="done", verdict=result.verdict, seconds=seconds,
                slope=result.summary.get("slope"), C=result.summary.get("C"),
                files=sorted(str(Path(p).relative_to(self.manifest.run_dir)) for p in result.files),
            )
            log(f"Job finished: {exp.name} -> {result.verdict} ({seconds:.1f}s)")

    async def run_all(self, experiments: list[ExperimentSpec]) -> dict[str, JobResult]:
        """Run every experiment; crashes are recorded, never raised."""
        await asyncio.gather(*(self._run_one(exp) for exp in experiments))
        return self.results

    @property
    def failed(self) -> bool:
        """True if any job crashed or any binding check failed."""
        return bool(self.crashed) or any(r.failed for r in self.results.values())
