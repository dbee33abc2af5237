"""Attack-quality metrics and the generation accuracy-bound algebra.

Correct Rate is the fraction of claims that survived external verification.
Raw Potency averages, over the attacked systems, the fraction of claims
each system got wrong; by default only verified-correct claims count
toward it (incorrect claims are disqualified), with an all-claims mode for
comparison. Potency is Raw Potency scaled by Correct Rate.

The bound algebra models a sample whose first sentence can be predicted
perfectly while the remaining sentences stay at a fixed rate:
    overall = (first + (n - 1) * rest) / n
and its inverse recovers the implied first-sentence rate from an observed
overall rate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .errors import MetricsError


@dataclass(frozen=True)
class ClaimRecord:
    claim_id: str
    correct: bool
    fooled: tuple[bool, ...]  # per system: True = the system predicted wrongly


@dataclass(frozen=True)
class AttackMetrics:
    correct_rate: float
    raw_potency: float
    potency: float


def attack_metrics(records: list[ClaimRecord], over_correct_only: bool = True) -> AttackMetrics:
    if not records:
        raise MetricsError("attack_metrics needs at least one record")
    n_systems = len(records[0].fooled)
    if n_systems == 0:
        raise MetricsError("attack_metrics needs at least one system")
    if any(len(r.fooled) != n_systems for r in records):
        raise MetricsError("all records must cover the same system set")
    correct = [r for r in records if r.correct]
    correct_rate = len(correct) / len(records)
    pool = correct if over_correct_only else records
    if not pool:
        raise MetricsError("raw potency undefined: no correct claims")
    per_system = [
        sum(1 for r in pool if r.fooled[k]) / len(pool) for k in range(n_systems)
    ]
    raw_potency = sum(per_system) / n_systems
    return AttackMetrics(
        correct_rate=correct_rate,
        raw_potency=raw_potency,
        potency=raw_potency * correct_rate,
    )


class BoundValue(float):
    """A rate that may fall outside [0, 1]; the flag reports when it does.

    The numeric value is left unclamped so the bound algebra inverts
    exactly.
    """

    clamped: bool

    def __new__(cls, value: float, clamped: bool):
        obj = super().__new__(cls, value)
        obj.clamped = clamped
        return obj


def accuracy_bound(n_generated_sentences: int, acc_first: float, acc_rest: float) -> float:
    """Average accuracy over n sentences with a distinguished first sentence."""
    if n_generated_sentences < 1:
        raise MetricsError("need at least one generated sentence")
    for name, rate in (("acc_first", acc_first), ("acc_rest", acc_rest)):
        if not (0.0 <= rate <= 1.0):
            raise MetricsError(f"{name} must lie in [0, 1]")
    n = n_generated_sentences
    return (acc_first + (n - 1) * acc_rest) / n


def invert_bound(overall: float, acc_rest: float, n: int) -> BoundValue:
    """First-sentence rate implied by an overall rate; flags out-of-range."""
    if n < 1:
        raise MetricsError("need at least one generated sentence")
    value = n * overall - (n - 1) * acc_rest
    return BoundValue(value, clamped=not (0.0 <= value <= 1.0))


def read_claim_records(path: str | Path) -> list[ClaimRecord]:
    """CSV with header claim_id,correct,sys1,...,sysK and 0/1 cells."""
    path = Path(path)
    if not path.exists():
        raise MetricsError(f"metrics file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MetricsError(f"{path}: empty metrics file") from None
        if len(header) < 3 or header[0] != "claim_id" or header[1] != "correct":
            raise MetricsError(f"{path}: header must be claim_id,correct,sys1,...")
        n_systems = len(header) - 2
        records = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise MetricsError(f"{path} line {lineno}: expected {len(header)} cells")
            cells = row[1:]
            if any(c not in ("0", "1") for c in cells):
                raise MetricsError(f"{path} line {lineno}: cells must be 0 or 1")
            records.append(ClaimRecord(
                claim_id=row[0],
                correct=cells[0] == "1",
                fooled=tuple(c == "1" for c in cells[1:]),
            ))
    if not records:
        raise MetricsError(f"{path}: no claim records")
    if n_systems < 1:
        raise MetricsError(f"{path}: need at least one system column")
    return records


def format_report(metrics: AttackMetrics) -> str:
    return f"{metrics.correct_rate:.4f},{metrics.raw_potency:.4f},{metrics.potency:.4f}"
