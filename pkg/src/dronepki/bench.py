"""Latency/throughput sweeps over validator count and transaction volume.

Every point is the mean over ``repetitions`` simulator runs with distinct
seeds. Metrics are in simulated seconds (ticks times ``Timing.tick_seconds``):

    throughput = completed operations / (last completion - first submission)
    latency    = mean (completion tick - submission tick)

so results do not depend on the machine running the sweep.
"""

from __future__ import annotations

import csv
import json
import platform
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from statistics import fmean
from typing import Callable, Iterable, Optional, Sequence, Union

from .crypto import DIGEST_SIZE, PUBLIC_KEY_SIZE, SIGNATURE_SIZE
from .errors import EmptyLedger
from .ledger import LedgerState
from .model import Block, canonical_bytes
from .simnet import OP_CLASSES, SimConfig, Timing, run

CSV_HEADER = ("axis", "op_class", "latency_s", "throughput_ops", "block_bytes", "seeds")

METRIC_NOTES = {
    "throughput_ops": "completed operations / (last completion - first submission), simulated seconds",
    "latency_s": "mean (completion tick - submission tick) x tick_seconds",
    "block_bytes": "mean length of the canonical block encoding",
}

PRIMITIVES = {
    "hash": "SHA-256",
    "signature": "Ed25519",
    "sealing": "X25519 + HKDF-SHA256 + ChaCha20-Poly1305",
    "digest_bytes": DIGEST_SIZE,
    "public_key_bytes": PUBLIC_KEY_SIZE,
    "signature_bytes": SIGNATURE_SIZE,
}


@dataclass(frozen=True)
class BenchPoint:
    axis: int
    op_class: str
    latency_s: float
    throughput_ops: float
    block_bytes: float
    seeds: tuple[int, ...]

    def row(self) -> list:
        return [
            self.axis,
            self.op_class,
            f"{self.latency_s:.6f}",
            f"{self.throughput_ops:.6f}",
            f"{self.block_bytes:.3f}",
            " ".join(str(s) for s in self.seeds),
        ]


def measure_block_size(source: Union[LedgerState, Sequence[Block]]) -> float:
    blocks = source.blocks if isinstance(source, LedgerState) else list(source)
    if not blocks:
        raise EmptyLedger("cannot measure an empty ledger")
    return sum(len(canonical_bytes(b)) for b in blocks) / len(blocks)


def bench_config(n_validators: int, n_transactions: int, seed: int, timing: Optional[Timing] = None) -> SimConfig:
    """Config used for every sweep point: all work arrives at tick 0."""
    return SimConfig(
        seed=seed,
        n_validators=n_validators,
        n_operators=max(2, n_validators // 2),
        n_transactions=n_transactions,
        arrival_interval=0,
        timing=timing or Timing(),
    )


def _run_point(cfg: SimConfig) -> dict:
    trace = run(cfg, record=False)
    metrics = dict(trace.metrics)
    metrics["block_bytes"] = measure_block_size(trace.ledger)
    return metrics


def _sweep(
    axis_name: str,
    values: Sequence[int],
    make: Callable[[int, int], SimConfig],
    repetitions: int,
    base_seed: int,
    workers: Optional[int],
) -> list[BenchPoint]:
    if not values:
        raise ValueError(f"{axis_name} list is empty")
    if repetitions < 1:
        raise ValueError("repetitions must be at least 1")
    seeds = tuple(base_seed + r for r in range(repetitions))
    configs = [make(v, s) for v in values for s in seeds]
    if workers and workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_point, configs))
    else:
        results = [_run_point(c) for c in configs]

    points = []
    for i, value in enumerate(values):
        chunk = results[i * len(seeds) : (i + 1) * len(seeds)]
        size = fmean(m["block_bytes"] for m in chunk)
        for klass in OP_CLASSES:
            points.append(
                BenchPoint(
                    axis=value,
                    op_class=klass,
                    latency_s=fmean(m[klass]["latency_s"] for m in chunk),
                    throughput_ops=fmean(m[klass]["throughput_ops"] for m in chunk),
                    block_bytes=size,
                    seeds=seeds,
                )
            )
    return points


def sweep_nodes(
    node_counts: Sequence[int],
    tx_count: int = 2000,
    repetitions: int = 5,
    base_seed: int = 1,
    workers: Optional[int] = None,
    timing: Optional[Timing] = None,
) -> list[BenchPoint]:
    if any(n < 1 for n in node_counts):
        raise ValueError("node counts must be positive")
    return _sweep(
        "node_counts",
        list(node_counts),
        lambda n, s: bench_config(n, tx_count, s, timing),
        repetitions,
        base_seed,
        workers,
    )


def sweep_transactions(
    tx_counts: Sequence[int],
    node_count: int = 12,
    repetitions: int = 5,
    base_seed: int = 1,
    workers: Optional[int] = None,
    timing: Optional[Timing] = None,
) -> list[BenchPoint]:
    if any(t < 1 for t in tx_counts):
        raise ValueError("transaction counts must be positive")
    return _sweep(
        "tx_counts",
        list(tx_counts),
        lambda t, s: bench_config(node_count, t, s, timing),
        repetitions,
        base_seed,
        workers,
    )


def by_class(points: Iterable[BenchPoint], op_class: str) -> list[BenchPoint]:
    return sorted((p for p in points if p.op_class == op_class), key=lambda p: p.axis)


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def write_csv(points: Iterable[BenchPoint], path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for p in points:
            writer.writerow(p.row())


def read_csv(path: Union[str, Path]) -> list[BenchPoint]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        return [
            BenchPoint(
                int(r["axis"]),
                r["op_class"],
                float(r["latency_s"]),
                float(r["throughput_ops"]),
                float(r["block_bytes"]),
                tuple(int(s) for s in r["seeds"].split()),
            )
            for r in reader
        ]


def git_revision() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"], capture_output=True, text=True, check=True, cwd=Path(__file__).parent
        )
        return out.stdout.strip()
    except (OSError, subprocess.CalledProcessError):
        return "unknown"


def write_metadata(path: Union[str, Path], axis: str, points: Sequence[BenchPoint], config: dict) -> dict:
    meta = {
        "axis": axis,
        "config": config,
        "timing": asdict(Timing()) if "timing" not in config else config["timing"],
        "metrics": METRIC_NOTES,
        "primitives": PRIMITIVES,
        "mean_block_bytes": fmean(p.block_bytes for p in points) if points else None,
        "block_bytes_by_axis": {str(p.axis): p.block_bytes for p in points if p.op_class == OP_CLASSES[0]},
        "git_revision": git_revision(),
        "python": platform.python_version(),
    }
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return meta


def sidecar_path(csv_path: Union[str, Path]) -> Path:
    p = Path(csv_path)
    return p.with_suffix(p.suffix + ".json") if p.suffix != ".csv" else p.with_suffix(".json")


__all__ = [
    "BenchPoint",
    "CSV_HEADER",
    "bench_config",
    "by_class",
    "measure_block_size",
    "read_csv",
    "sweep_nodes",
    "sweep_transactions",
    "write_csv",
    "write_metadata",
    "sidecar_path",
]
