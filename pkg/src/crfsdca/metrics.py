"""Convergence telemetry records, their CSV encoding, and test-error scoring."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .inference import viterbi
from .model import FeatureIndexer, score_tables

CSV_FIELDS = (
    "update_count",
    "oracle_calls",
    "epoch_equivalent",
    "primal",
    "dual",
    "gap_estimate",
    "true_gap",
    "test_error",
    "elapsed_s",
)


@dataclass(frozen=True)
class MetricsRecord:
    """One telemetry row.  ``primal``/``true_gap``/``test_error`` appear only
    on full-evaluation rows; empty CSV cells encode their absence."""

    update_count: int
    oracle_calls: int
    epoch_equivalent: float
    primal: float | None
    dual: float | None
    gap_estimate: float
    true_gap: float | None
    test_error: float | None
    elapsed_s: float

    def to_row(self) -> list[str]:
        def cell(value):
            # repr of a builtin float round-trips exactly; numpy scalars do not.
            return "" if value is None else repr(float(value))

        return [
            str(int(self.update_count)),
            str(int(self.oracle_calls)),
            cell(self.epoch_equivalent),
            cell(self.primal),
            cell(self.dual),
            cell(self.gap_estimate),
            cell(self.true_gap),
            cell(self.test_error),
            cell(self.elapsed_s),
        ]


class MetricsWriter:
    """Append-only CSV sink, flushed per row so a run can be tailed live."""

    def __init__(self, path: str):
        self._handle = open(path, "w", newline="")
        self._writer = csv.writer(self._handle)
        self._writer.writerow(CSV_FIELDS)
        self._handle.flush()

    def __call__(self, record: MetricsRecord) -> None:
        self._writer.writerow(record.to_row())
        self._handle.flush()

    def close(self) -> None:
        self._handle.close()

    def __enter__(self) -> "MetricsWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_metrics(path: str) -> list[MetricsRecord]:
    """Parse a metrics CSV back into records (inverse of MetricsWriter)."""
    records = []
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames != list(CSV_FIELDS):
            raise ValueError(f"unexpected metrics header {reader.fieldnames}")
        for row in reader:
            records.append(
                MetricsRecord(
                    update_count=int(row["update_count"]),
                    oracle_calls=int(row["oracle_calls"]),
                    epoch_equivalent=float(row["epoch_equivalent"]),
                    primal=float(row["primal"]) if row["primal"] else None,
                    dual=float(row["dual"]) if row["dual"] else None,
                    gap_estimate=float(row["gap_estimate"]),
                    true_gap=float(row["true_gap"]) if row["true_gap"] else None,
                    test_error=float(row["test_error"]) if row["test_error"] else None,
                    elapsed_s=float(row["elapsed_s"]),
                )
            )
    return records


def token_error_rate(indexer: FeatureIndexer, sequences, w: np.ndarray) -> float:
    """Fraction of tokens mislabeled by argmax decoding under weights w."""
    wrong = 0
    total = 0
    for seq in sequences:
        unary, pair = score_tables(indexer, w, seq)
        predicted = viterbi(unary, pair)
        gold = np.array(seq.gold_labels, dtype=np.int64)
        wrong += int((predicted != gold).sum())
        total += seq.length
    if total == 0:
        raise ValueError("no tokens to score")
    return wrong / total
