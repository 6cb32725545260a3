import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from commons import get_trace_dir
from harness import load_config, run_experiment

logger = logging.getLogger(__name__)

CONFIG_SUFFIX = ".cfg"


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class BatchResult:
    config: Path
    dispersed: bool
    rounds: int = 0
    trace: Path | None = None
    error: str | None = None


def run_one(path: Path) -> BatchResult:
    """
    Runs a single experiment config; any failure becomes part of the result instead of propagating.

    Unless the config names its own trace, the trace is written next to the others in the trace
    directory under the config file's stem, so no two configs of a batch share a trace file.

    Args:
        path (Path): The config file to run.

    Returns:
        BatchResult: Whether the run dispersed, how long it took and where its trace went,
                     or the error that stopped it.
    """
    try:
        config = load_config(path)
        trace = config.trace if config.trace is not None else Path(get_trace_dir()) / f"{path.stem}.trace"
        report = run_experiment(config, trace)
    except Exception as e:
        logger.error(f"Run {path.name} failed: {e}")
        return BatchResult(path, False, error=f"{type(e).__name__}: {e}")
    return BatchResult(path, report.verdict.dispersed, report.verdict.rounds_used, report.trace_path)


def run_batch(directory: Path, workers: int | None = None) -> list[BatchResult]:
    """
    Runs every ``*.cfg`` file in a directory, each in its own worker process.

    Runs share nothing, so one failing config never affects the others. Results
    come back in file-name order.

    Args:
        directory (Path): The directory holding the configs.
        workers (int | None): Worker process count; ``1`` runs everything in this process.

    Returns:
        list[BatchResult]: One result per config.
    """
    configs = sorted(Path(directory).glob(f"*{CONFIG_SUFFIX}"))
    if not configs:
        logger.warning(f"No {CONFIG_SUFFIX} files in {directory}")
        return []
    logger.info(f"Running {len(configs)} configs from {directory}")
    if workers == 1:
        results = [run_one(path) for path in configs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, configs))
    failed = [result.config.name for result in results if not result.dispersed]
    if failed:
        logger.warning(f"{len(failed)} of {len(results)} runs did not disperse: {', '.join(failed)}")
    return results
