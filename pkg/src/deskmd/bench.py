"""Timing harness, speedup/efficiency tables and Amdahl's-law fitting."""

from __future__ import annotations

import csv
import hashlib
import io
import math
import pickle
import statistics
import time
from dataclasses import dataclass, fields
from typing import Any, Callable, Iterable, Sequence

import numpy as np

STAGES = ("EM", "NVT", "MD", "DOCK")
RAW_HEADER = ("stage", "workload", "workers", "repetition", "wall_seconds")
SCALING_HEADER = ("stage", "workload", "workers", "median_seconds", "speedup", "efficiency")


class MeasurementInvalidError(RuntimeError):
    pass


class CSVFormatError(ValueError):
    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


@dataclass(frozen=True)
class BenchmarkRecord:
    stage: str
    workload: int
    workers: int
    repetition: int
    wall_seconds: float

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.workers < 1 or self.workload < 0 or self.repetition < 0:
            raise ValueError("workers must be >= 1; workload and repetition >= 0")
        if not (math.isfinite(self.wall_seconds) and self.wall_seconds > 0):
            raise ValueError(f"wall_seconds must be positive, got {self.wall_seconds}")


@dataclass(frozen=True)
class ScalingRow:
    workers: int
    median_seconds: float
    speedup: float
    efficiency: float
    stage: str = ""
    workload: int = 0


@dataclass(frozen=True)
class AmdahlFit:
    f: float
    t1: float
    residual: float
    clamped: bool = False

    def summary(self) -> str:
        return f"f={self.f!r} t1={self.t1!r} residual={self.residual!r} clamped={str(self.clamped).lower()}"


def checksum(value: Any) -> str:
    return hashlib.sha256(pickle.dumps(value, protocol=4)).hexdigest()


def measure(runner: Callable[[], Any], repetitions: int = 5, warmup: int = 1, *,
            stage: str = "DOCK", workload: int = 0, workers: int = 1,
            clock: Callable[[], float] = time.perf_counter) -> list[BenchmarkRecord]:
    """Time ``runner`` ``repetitions`` times after ``warmup`` untimed calls.

    Every timed call must return the same value (compared by checksum), so
    a run that silently did different work is rejected.
    """
    if repetitions < 1 or warmup < 0:
        raise ValueError("need repetitions >= 1 and warmup >= 0")
    for _ in range(warmup):
        runner()
    records = []
    reference = None
    for rep in range(repetitions):
        t0 = clock()
        out = runner()
        elapsed = clock() - t0
        digest = checksum(out)
        if reference is None:
            reference = digest
        elif digest != reference:
            raise MeasurementInvalidError(f"repetition {rep} produced different output")
        records.append(BenchmarkRecord(stage, workload, workers, rep, max(elapsed, 1e-9)))
    return records


def group_records(records: Iterable[BenchmarkRecord]) -> dict[tuple[str, int], list[BenchmarkRecord]]:
    groups: dict[tuple[str, int], list[BenchmarkRecord]] = {}
    for r in records:
        groups.setdefault((r.stage, r.workload), []).append(r)
    return dict(sorted(groups.items(), key=lambda kv: (STAGES.index(kv[0][0]), kv[0][1])))


def compute_scaling(records: Sequence[BenchmarkRecord]) -> list[ScalingRow]:
    """Median time, speedup T(1)/T(p) and efficiency S(p)/p per worker count.

    All records must share one (stage, workload); use :func:`group_records`
    to split mixed input.
    """
    keys = {(r.stage, r.workload) for r in records}
    if len(keys) > 1:
        raise ValueError(f"records mix several stage/workload groups: {sorted(keys)}")
    by_p: dict[int, list[float]] = {}
    for r in records:
        by_p.setdefault(r.workers, []).append(r.wall_seconds)
    if 1 not in by_p:
        raise ValueError("no workers=1 baseline; speedup is undefined")
    stage, workload = next(iter(keys))
    t1 = statistics.median(by_p[1])
    rows = []
    for p in sorted(by_p):
        tp = statistics.median(by_p[p])
        s = t1 / tp
        rows.append(ScalingRow(p, tp, s, s / p, stage, workload))
    return rows


def amdahl_fit(rows: Sequence[ScalingRow]) -> AmdahlFit:
    """Least-squares fit of T(p) = a + b/p, reported as T(1)(f + (1-f)/p).

    ``t1 = a + b`` and ``f = a / (a + b)``. Keeping ``f`` in [0, 1] with
    ``t1 > 0`` means ``a, b >= 0``; when the free fit leaves that region
    the best constrained fit lies on an edge (``f = 0`` or ``f = 1``), and
    ``clamped`` is set.
    """
    p = np.array([r.workers for r in rows], dtype=float)
    t = np.array([r.median_seconds for r in rows], dtype=float)
    if len(set(p.tolist())) < 2:
        raise ValueError("need at least two distinct worker counts")
    design = np.column_stack([np.ones_like(p), 1.0 / p])
    (a, b), *_ = np.linalg.lstsq(design, t, rcond=None)
    clamped = not (a >= 0 and b >= 0 and a + b > 0)
    if clamped:
        edges = [(float(np.mean(t)), 0.0), (0.0, float(np.sum(t / p) / np.sum(1.0 / p ** 2)))]
        a, b = min(edges, key=lambda ab: float(np.sum((ab[0] + ab[1] / p - t) ** 2)))
    t1 = a + b
    if not t1 > 0:
        raise ValueError("timings must be positive")
    f = min(max(a / t1, 0.0), 1.0)
    fitted = t1 * (f + (1.0 - f) / p)
    residual = float(np.sqrt(np.mean((fitted - t) ** 2)))
    return AmdahlFit(float(f), float(t1), residual, clamped)


# -- CSV ---------------------------------------------------------------------

def write_csv(items: Sequence[BenchmarkRecord] | Sequence[ScalingRow]) -> str:
    """Serialize records or scaling rows; floats use shortest round-trip repr."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    is_rows = bool(items) and isinstance(items[0], ScalingRow)
    header = SCALING_HEADER if is_rows else RAW_HEADER
    writer.writerow(header)
    for item in items:
        writer.writerow([repr(v) if isinstance(v, float) else v
                         for v in (getattr(item, name) for name in header)])
    return buf.getvalue()


def read_csv(text: str) -> list[BenchmarkRecord] | list[ScalingRow]:
    lines = list(csv.reader(io.StringIO(text)))
    if not lines:
        raise CSVFormatError("missing header", 1)
    header = tuple(h.strip() for h in lines[0])
    if header == RAW_HEADER:
        cls, types = BenchmarkRecord, (str, int, int, int, float)
    elif header == SCALING_HEADER:
        cls, types = ScalingRow, (str, int, int, float, float, float)
    else:
        raise CSVFormatError(f"unrecognised header {','.join(header)}", 1)
    names = {f.name for f in fields(cls)}
    out = []
    for lineno, row in enumerate(lines[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise CSVFormatError(f"expected {len(header)} fields, got {len(row)}", lineno)
        try:
            values = {h: typ(v) for h, typ, v in zip(header, types, row) if h in names}
            out.append(cls(**values))
        except ValueError as exc:
            raise CSVFormatError(str(exc), lineno) from None
    return out


def write_amdahl_log(fits: dict[tuple[str, int], AmdahlFit]) -> str:
    return "".join(f"stage={stage} workload={workload} {fit.summary()}\n"
                   for (stage, workload), fit in fits.items())
