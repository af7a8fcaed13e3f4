"""Worst-group / average accuracy reports and the ratio-distribution exports.

Predictions arrive as (GroupKey, predicted, observed) triples; everything here
is pure aggregation over them, so reports are byte-reproducible.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

from .dataset import ALL_GROUP_KEYS, Attribute, GroupKey
from .errors import ContractError
from .util import atomic_write_json, atomic_write_text

N_RATIO_BINS = 20


@dataclass(frozen=True)
class GroupStat:
    count: int
    correct: int

    @property
    def accuracy(self) -> float:
        if self.count == 0:
            raise ContractError("accuracy of an empty group")
        return self.correct / self.count


@dataclass
class EvalReport:
    t: int
    ood: bool
    worst: float
    avg: float
    groups: dict[GroupKey, GroupStat]
    selected_ratios: list[tuple[int, Attribute, float]] = field(default_factory=list)
    meta_ratios: list[tuple[int, Attribute, float]] = field(default_factory=list)


def classify(p: float) -> int:
    """Threshold a response probability; the boundary goes to the positive class."""
    return 1 if p >= 0.5 else 0


def group_accuracies(predictions: list[tuple[GroupKey, int, int]]) -> dict[GroupKey, GroupStat]:
    counts = {k: 0 for k in ALL_GROUP_KEYS}
    correct = {k: 0 for k in ALL_GROUP_KEYS}
    for key, y_hat, y in predictions:
        counts[key] += 1
        if y_hat == y:
            correct[key] += 1
    return {k: GroupStat(counts[k], correct[k]) for k in ALL_GROUP_KEYS}


def worst_group_accuracy(groups: dict[GroupKey, GroupStat]) -> float:
    present = [s.accuracy for s in groups.values() if s.count > 0]
    if not present:
        raise ContractError("no nonempty groups")
    return min(present)


def report(predictions: list[tuple[GroupKey, int, int]], t: int, ood: bool) -> EvalReport:
    """Aggregate predictions into the headline metrics.

    avg is the plain accuracy over every meta interaction; worst is the
    minimum accuracy over the nonempty attribute x label groups, which makes
    worst <= avg an identity (avg is a count-weighted mean of group accuracies).
    """
    if not predictions:
        raise ContractError("empty prediction set")
    groups = group_accuracies(predictions)
    n_correct = sum(s.correct for s in groups.values())
    n_total = sum(s.count for s in groups.values())
    return EvalReport(
        t=t,
        ood=ood,
        worst=worst_group_accuracy(groups),
        avg=n_correct / n_total,
        groups=groups,
    )


def ratio_histogram(
    records: list[tuple[int, Attribute, float]],
) -> dict[Attribute, list[int]]:
    """20 equal bins on [0, 1] per attribute; ratio 1.0 lands in the top bin."""
    hist = {a: [0] * N_RATIO_BINS for a in Attribute}
    for _, attr, ratio in records:
        if not 0.0 <= ratio <= 1.0:
            raise ContractError(f"ratio {ratio} outside [0, 1]")
        b = min(int(ratio * N_RATIO_BINS), N_RATIO_BINS - 1)
        hist[attr][b] += 1
    return hist


def selected_ratio_records(traces) -> list[tuple[int, Attribute, float]]:
    """Per-examinee correct ratio over the selected questions.

    ``traces`` is a list of (EpisodeTrace, Attribute) pairs; the trace carries
    (question_id, label, log_prob) triples in selection order.
    """
    if not traces:
        raise ContractError("no traces")
    records = []
    for trace, attr in traces:
        labels = [label for _, label, _ in trace.selected]
        records.append((trace.examinee_id, attr, sum(labels) / len(labels)))
    return records


def _fmt(x: float, places: int = 6) -> str:
    return f"{x:.{places}f}"


def write_report(rep: EvalReport, path: str) -> None:
    payload = {
        "t": rep.t,
        "ood": rep.ood,
        "worst": round(rep.worst, 4),
        "avg": round(rep.avg, 4),
        "groups": {
            k.name(): {
                "count": s.count,
                "correct": s.correct,
                "accuracy": round(s.accuracy, 6) if s.count else None,
                "bias": k.bias,
            }
            for k, s in rep.groups.items()
        },
    }
    atomic_write_json(path, payload)


def write_groups_csv(groups: dict[GroupKey, GroupStat], path: str) -> None:
    buf = io.StringIO()
    buf.write("group,count,accuracy\n")
    for k in ALL_GROUP_KEYS:
        s = groups[k]
        acc = _fmt(s.accuracy) if s.count else ""
        buf.write(f"{k.name()},{s.count},{acc}\n")
    atomic_write_text(path, buf.getvalue())


def write_ratio_csv(records: list[tuple[int, Attribute, float]], path: str) -> None:
    buf = io.StringIO()
    buf.write("examinee_id,attribute,ratio\n")
    for eid, attr, ratio in records:
        buf.write(f"{eid},{attr.value},{_fmt(ratio)}\n")
    atomic_write_text(path, buf.getvalue())
