"""Interaction logs: loading, filtering, splits, and the attribute/group taxonomy.

Input CSV format (header required)::

    examinee_id,question_id,correct,concept_ids

``correct`` is 0 or 1; ``concept_ids`` is a ``;``-separated list of 1-based
concept indices. All ids are remapped to dense 0-based indices on load.
Repeated (examinee, question) pairs keep the first occurrence.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

from .errors import ConfigError, ContractError, IntegrityError, ParseError
from .util import TAG_EXAMINEE_SPLIT, TAG_RESPLIT, atomic_write_json, round_half_up, substream

CSV_HEADER = ["examinee_id", "question_id", "correct", "concept_ids"]


@dataclass(frozen=True)
class Interaction:
    examinee_id: int
    question_id: int
    label: int


@dataclass(frozen=True)
class QuestionMeta:
    question_id: int
    concept_ids: frozenset[int]


@dataclass
class Corpus:
    examinee_logs: dict[int, list[Interaction]]
    questions: dict[int, QuestionMeta]
    n_concepts: int

    @property
    def n_examinees(self) -> int:
        return len(self.examinee_logs)

    @property
    def n_questions(self) -> int:
        return len(self.questions)

    @property
    def n_interactions(self) -> int:
        return sum(len(log) for log in self.examinee_logs.values())

    @property
    def counts(self) -> tuple[int, int, int, int]:
        return (self.n_examinees, self.n_questions, self.n_concepts, self.n_interactions)

    def validate(self) -> None:
        for eid, log in self.examinee_logs.items():
            for it in log:
                if it.examinee_id != eid:
                    raise IntegrityError(f"interaction filed under examinee {eid} carries id {it.examinee_id}")
                if it.label not in (0, 1):
                    raise IntegrityError(f"label {it.label} outside {{0,1}}")
                if it.question_id not in self.questions:
                    raise IntegrityError(f"interaction references unknown question {it.question_id}")
        for qid, meta in self.questions.items():
            if not meta.concept_ids:
                raise IntegrityError(f"question {qid} has no concepts")
            bad = [c for c in meta.concept_ids if not 0 <= c < self.n_concepts]
            if bad:
                raise IntegrityError(f"question {qid} concepts {bad} outside [0, {self.n_concepts})")


class Attribute(str, enum.Enum):
    A = "A"
    B = "B"
    C = "C"


# Dominant-pattern tags for the six attribute x label groups.
BIAS_ALIGNED = "aligned"
BIAS_CONFLICTING = "conflicting"
BIAS_NEUTRAL = "neutral"


@dataclass(frozen=True)
class GroupKey:
    attribute: Attribute
    label: int

    @property
    def bias(self) -> str:
        if self.attribute is Attribute.B:
            return BIAS_NEUTRAL
        dominant = 0 if self.attribute is Attribute.A else 1
        return BIAS_ALIGNED if self.label == dominant else BIAS_CONFLICTING

    def name(self) -> str:
        return f"{self.attribute.value}{self.label}"


ALL_GROUP_KEYS = tuple(GroupKey(a, y) for a in (Attribute.A, Attribute.B, Attribute.C) for y in (0, 1))


def group_key(attribute: Attribute, label: int) -> GroupKey:
    if label not in (0, 1):
        raise ContractError(f"label {label} outside {{0,1}}")
    return GroupKey(attribute, label)


@dataclass
class EpisodeSplit:
    """Per-examinee support/meta partition for one episode.

    ``usable`` is False when the meta set is empty (single-interaction log),
    in which case the episode must not contribute to the outer loss.
    """

    examinee_id: int
    support: list[Interaction]
    meta: list[Interaction]
    usable: bool = True


def load_corpus(path: str, index_map_path: str | None = None) -> Corpus:
    """Parse the interaction CSV into dense 0-based index tables.

    Ids are remapped in order of first appearance; the original-to-dense maps
    are written to ``index_map_path`` when given.
    """
    examinee_map: dict[str, int] = {}
    question_map: dict[str, int] = {}
    concept_map: dict[str, int] = {}
    logs: dict[int, list[Interaction]] = {}
    questions: dict[int, QuestionMeta] = {}
    seen_pairs: set[tuple[int, int]] = set()

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(1, "empty file, expected header") from None
        if [h.strip() for h in header] != CSV_HEADER:
            raise ParseError(1, f"expected header {','.join(CSV_HEADER)!r}, got {','.join(header)!r}")
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 4:
                raise ParseError(line_no, f"expected 4 fields, got {len(row)}")
            raw_eid, raw_qid, raw_label, raw_concepts = (f.strip() for f in row)
            if not raw_eid or not raw_qid or not raw_label or not raw_concepts:
                raise ParseError(line_no, "missing value")
            try:
                int(raw_eid), int(raw_qid)
            except ValueError:
                raise ParseError(line_no, f"ids must be integers, got {raw_eid!r}/{raw_qid!r}") from None
            try:
                label = int(raw_label)
            except ValueError:
                raise ParseError(line_no, f"correct={raw_label!r} is not an integer") from None
            if label not in (0, 1):
                raise ParseError(line_no, f"correct={label} outside {{0,1}}")
            try:
                concept_tokens = [int(tok) for tok in raw_concepts.split(";") if tok.strip()]
            except ValueError:
                raise ParseError(line_no, f"concept_ids={raw_concepts!r} is not a ;-separated integer list") from None
            if not concept_tokens:
                raise ParseError(line_no, "concept_ids empty")
            if any(tok < 1 for tok in concept_tokens):
                raise ParseError(line_no, f"concept ids are 1-based, got {concept_tokens}")

            eid = examinee_map.setdefault(raw_eid, len(examinee_map))
            qid = question_map.setdefault(raw_qid, len(question_map))
            concepts = frozenset(concept_map.setdefault(str(tok), len(concept_map)) for tok in concept_tokens)
            if qid in questions:
                if questions[qid].concept_ids != concepts:
                    raise IntegrityError(
                        f"line {line_no}: question {raw_qid} redefined with different concepts"
                    )
            else:
                questions[qid] = QuestionMeta(qid, concepts)
            if (eid, qid) in seen_pairs:
                continue
            seen_pairs.add((eid, qid))
            logs.setdefault(eid, []).append(Interaction(eid, qid, label))

    corpus = Corpus(examinee_logs=logs, questions=questions, n_concepts=len(concept_map))
    corpus.validate()
    if index_map_path is not None:
        atomic_write_json(
            index_map_path,
            {"examinees": examinee_map, "questions": question_map, "concepts": concept_map},
        )
    return corpus


def filter_min_interactions(corpus: Corpus, min_n: int) -> Corpus:
    """Drop examinees with fewer than ``min_n`` interactions.

    The question table (and therefore the selector's index space) is kept
    intact; only examinee-dependent counts change.
    """
    if min_n < 1:
        raise ConfigError(f"min_n must be >= 1, got {min_n}")
    kept = {eid: log for eid, log in corpus.examinee_logs.items() if len(log) >= min_n}
    return Corpus(examinee_logs=kept, questions=corpus.questions, n_concepts=corpus.n_concepts)


def split_examinees(
    corpus: Corpus, ratios: tuple[float, float, float], seed: int
) -> tuple[set[int], set[int], set[int]]:
    """Disjoint train/valid/test examinee-id sets at the given ratios."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios}")
    ids = sorted(corpus.examinee_logs)
    order = substream(seed, TAG_EXAMINEE_SPLIT).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n = len(ids)
    n_train = min(round_half_up(ratios[0] * n), n)
    n_valid = min(round_half_up(ratios[1] * n), n - n_train)
    train = set(shuffled[:n_train])
    valid = set(shuffled[n_train : n_train + n_valid])
    test = set(shuffled[n_train + n_valid :])
    return train, valid, test


def resplit_support_meta(
    log: list[Interaction], meta_frac: float, seed: int, epoch: int, tag: int = TAG_RESPLIT
) -> EpisodeSplit:
    """Fresh support/meta partition for one epoch, reproducible from
    (seed, epoch, examinee_id) alone. ``tag`` separates the per-epoch training
    resplits from the fixed evaluation split."""
    if not log:
        raise ContractError("empty examinee log")
    eid = log[0].examinee_id
    n = len(log)
    if n == 1:
        return EpisodeSplit(eid, support=list(log), meta=[], usable=False)
    m = min(max(round_half_up(meta_frac * n), 1), n - 1)
    rng = substream(seed, tag, epoch, eid)
    meta_idx = set(rng.choice(n, size=m, replace=False).tolist())
    support = [it for i, it in enumerate(log) if i not in meta_idx]
    meta = [it for i, it in enumerate(log) if i in meta_idx]
    return EpisodeSplit(eid, support=support, meta=meta)


def build_ood_meta(log: list[Interaction], meta_frac: float = 0.2) -> EpisodeSplit | None:
    """Label-balanced meta partition; None when the examinee cannot supply
    equal label counts (excluded from the OOD protocol)."""
    if not log:
        raise ContractError("empty examinee log")
    eid = log[0].examinee_id
    n = len(log)
    m = max(1, round_half_up(meta_frac * n / 2.0))
    correct_idx = [i for i, it in enumerate(log) if it.label == 1]
    wrong_idx = [i for i, it in enumerate(log) if it.label == 0]
    if min(len(correct_idx), len(wrong_idx)) < m:
        return None
    meta_idx = set(correct_idx[:m]) | set(wrong_idx[:m])
    support = [it for i, it in enumerate(log) if i not in meta_idx]
    meta = [it for i, it in enumerate(log) if i in meta_idx]
    return EpisodeSplit(eid, support=support, meta=meta)


def attribute_of(log: list[Interaction]) -> Attribute:
    """Examinee attribute from the correct-response ratio of the full log.

    Exact rational comparison: ratio <= 0.4 -> A, <= 0.6 -> B, else C.
    """
    if not log:
        raise ContractError("attribute undefined for an empty log")
    n = len(log)
    c = sum(it.label for it in log)
    if 5 * c <= 2 * n:
        return Attribute.A
    if 5 * c <= 3 * n:
        return Attribute.B
    return Attribute.C
