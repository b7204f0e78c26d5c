"""Gateway-style streaming detection over record feeds.

Records are scored in micro-batches (bounded memory, order preserved) using
exactly the normalization parameters and feature mask stored in the model
artifact.  Every input record produces one verdict line; records that fail
to parse get the class ``PARSE-ERROR`` and processing continues.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import numpy as np

from .errors import SchemaMismatchError
from .ingest import CAN_NUMERIC_FEATURES, parse_can_tokens
from .model_io import ModelArtifact

PARSE_ERROR_CLASS = "PARSE-ERROR"
DEFAULT_BATCH_SIZE = 1024


@dataclass(frozen=True)
class DetectionVerdict:
    ordinal: int
    class_name: str
    confidence: float
    latency_us: float

    def line(self) -> str:
        return f"{self.ordinal},{self.class_name},{self.confidence:.6f},{self.latency_us:.1f}"


@dataclass(frozen=True)
class DetectionSummary:
    records: int
    parse_errors: int
    mean_latency_us: float
    p99_latency_us: float
    records_per_second: float

    def lines(self) -> list[str]:
        return [
            f"# records={self.records} parse_errors={self.parse_errors}",
            f"# latency_us mean={self.mean_latency_us:.1f} p99={self.p99_latency_us:.1f}",
            f"# throughput records_per_second={self.records_per_second:.0f}",
        ]


def _can_row_encoder(artifact: ModelArtifact) -> Callable[[str], np.ndarray]:
    names = artifact.schema.names
    if names == CAN_NUMERIC_FEATURES:
        def encode(line: str) -> np.ndarray:
            tokens = [t.strip() for t in line.split(",")]
            _, can_id, _, data, _ = parse_can_tokens(tokens, require_flag=False)
            return np.array([can_id, *data], dtype=np.float64)
        return encode
    # one-hot id layout: DATA[0..7] then one indicator column per trained id
    id_columns = {}
    for i, (name, kind) in enumerate(zip(names, artifact.schema.kinds)):
        if kind == "onehot" and name.startswith("CAN ID="):
            id_columns[int(name.split("=", 1)[1], 16)] = i
    expected_data = CAN_NUMERIC_FEATURES[1:]
    if names[:8] != expected_data or not id_columns:
        raise SchemaMismatchError("artifact schema is not a CAN encoding")
    width = len(names)

    def encode(line: str) -> np.ndarray:
        tokens = [t.strip() for t in line.split(",")]
        _, can_id, _, data, _ = parse_can_tokens(tokens, require_flag=False)
        row = np.zeros(width, dtype=np.float64)
        row[:8] = data
        col = id_columns.get(can_id)
        if col is not None:  # ids unseen at training time stay all-zero
            row[col] = 1.0
        return row
    return encode


class _FlowRowEncoder:
    """Header-aware flow-line encoder; the first line must be the header."""

    def __init__(self, artifact: ModelArtifact, label_column: str = "Label"):
        self.artifact = artifact
        self.label_column = label_column
        self.positions: np.ndarray | None = None
        self.header_width = 0

    def read_header(self, line: str):
        header = [t.strip() for t in line.split(",")]
        index = {name: i for i, name in enumerate(header)}
        missing = [n for n in self.artifact.schema.names if n not in index]
        if missing:
            raise SchemaMismatchError(
                f"stream header lacks columns required by the model: {missing[:5]}"
            )
        self.positions = np.array([index[n] for n in self.artifact.schema.names], dtype=np.int64)
        self.header_width = len(header)

    def __call__(self, line: str) -> np.ndarray:
        cells = [t.strip() for t in line.split(",")]
        if len(cells) != self.header_width:
            raise ValueError(f"expected {self.header_width} columns, found {len(cells)}")
        out = np.empty(self.positions.shape[0], dtype=np.float64)
        for j, pos in enumerate(self.positions):
            cell = cells[pos]
            out[j] = float(cell) if cell and cell.lower() != "nan" else float("nan")
        if not np.isfinite(out).all():
            raise ValueError("row contains non-finite values")
        return out


def detect_stream(artifact: ModelArtifact, lines: Iterable[str], profile: str,
                  batch_size: int = DEFAULT_BATCH_SIZE) -> Iterator[DetectionVerdict]:
    """Yield one verdict per input record, in input order."""
    if profile == "can":
        encoder = _can_row_encoder(artifact)
        skip_header = False
    elif profile == "flow":
        encoder = _FlowRowEncoder(artifact)
        skip_header = True
    else:
        raise SchemaMismatchError(f"unknown profile {profile!r}")

    batch_rows: list[np.ndarray] = []
    batch_ordinals: list[int] = []
    parse_failures: list[int] = []
    ordinal = 0

    def flush() -> list[DetectionVerdict]:
        nonlocal batch_rows, batch_ordinals, parse_failures
        verdicts = {}
        started = time.perf_counter()
        if batch_rows:
            classes, proba = artifact.score(np.vstack(batch_rows))
            elapsed_us = (time.perf_counter() - started) * 1e6
            per_record = elapsed_us / len(batch_rows)
            for j, ord_ in enumerate(batch_ordinals):
                c = int(classes[j])
                verdicts[ord_] = DetectionVerdict(
                    ord_, artifact.class_name(c), float(proba[j, c]), per_record,
                )
        for ord_ in parse_failures:
            verdicts[ord_] = DetectionVerdict(ord_, PARSE_ERROR_CLASS, 0.0, 0.0)
        batch_rows, batch_ordinals, parse_failures = [], [], []
        return [verdicts[k] for k in sorted(verdicts)]

    for raw in lines:
        line = raw.strip()
        if not line:
            continue
        if skip_header and ordinal == 0 and encoder.positions is None:
            encoder.read_header(line)
            continue
        ordinal += 1
        try:
            row = encoder(line)
        except (ValueError, IndexError):
            parse_failures.append(ordinal)
        else:
            batch_rows.append(row)
            batch_ordinals.append(ordinal)
        if len(batch_rows) + len(parse_failures) >= batch_size:
            yield from flush()
    yield from flush()


def summarize(verdicts: list[DetectionVerdict], elapsed_seconds: float) -> DetectionSummary:
    latencies = np.array([v.latency_us for v in verdicts if v.class_name != PARSE_ERROR_CLASS])
    errors = sum(1 for v in verdicts if v.class_name == PARSE_ERROR_CLASS)
    if latencies.size:
        mean = float(latencies.mean())
        p99 = float(np.percentile(latencies, 99))
    else:
        mean = p99 = 0.0
    rate = len(verdicts) / elapsed_seconds if elapsed_seconds > 0 else 0.0
    return DetectionSummary(len(verdicts), errors, mean, p99, rate)
