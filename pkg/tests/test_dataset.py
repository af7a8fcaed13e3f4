"""Corpus loading, splits, the balanced-meta protocol, and the group taxonomy."""
import json

import pytest

from catlab.dataset import (
    ALL_GROUP_KEYS,
    Attribute,
    Interaction,
    attribute_of,
    build_ood_meta,
    filter_min_interactions,
    group_key,
    load_corpus,
    resplit_support_meta,
    split_examinees,
)
from catlab.errors import ConfigError, ContractError, IntegrityError, ParseError
from catlab.util import round_half_up

from .synth import corpus_to_csv, random_corpus

HEADER = "examinee_id,question_id,correct,concept_ids\n"


def write(tmp_path, text):
    p = tmp_path / "log.csv"
    p.write_text(text)
    return str(p)


def test_load_counts_small(tmp_path):
    text = HEADER + "10,100,1,1;2\n10,101,0,2\n11,100,1,1;2\n11,102,0,3\n"
    corpus = load_corpus(write(tmp_path, text))
    assert corpus.counts == (2, 3, 3, 4)


def test_load_preserves_order_and_remaps(tmp_path):
    text = HEADER + "7,900,1,5\n7,300,0,5\n9,900,1,5\n"
    corpus = load_corpus(write(tmp_path, text))
    log = corpus.examinee_logs[0]
    assert [it.question_id for it in log] == [0, 1]
    assert [it.label for it in log] == [1, 0]
    assert corpus.examinee_logs[1][0].question_id == 0


def test_load_bad_label(tmp_path):
    text = HEADER + "1,1,2,1\n"
    with pytest.raises(ParseError, match="line 2"):
        load_corpus(write(tmp_path, text))


def test_load_missing_field(tmp_path):
    text = HEADER + "1,1,1\n"
    with pytest.raises(ParseError, match="line 2"):
        load_corpus(write(tmp_path, text))


def test_load_non_integer(tmp_path):
    with pytest.raises(ParseError):
        load_corpus(write(tmp_path, HEADER + "x,1,1,1\n"))


def test_load_zero_based_concept_rejected(tmp_path):
    with pytest.raises(ParseError, match="1-based"):
        load_corpus(write(tmp_path, HEADER + "1,1,1,0\n"))


def test_load_bad_header(tmp_path):
    with pytest.raises(ParseError, match="header"):
        load_corpus(write(tmp_path, "a,b,c,d\n1,1,1,1\n"))


def test_load_conflicting_concepts(tmp_path):
    text = HEADER + "1,5,1,1;2\n2,5,0,3\n"
    with pytest.raises(IntegrityError):
        load_corpus(write(tmp_path, text))


def test_load_dedup_keeps_first(tmp_path):
    text = HEADER + "1,5,1,1\n1,5,0,1\n1,6,0,2\n"
    corpus = load_corpus(write(tmp_path, text))
    assert corpus.counts[3] == 2
    assert corpus.examinee_logs[0][0].label == 1


def test_load_writes_index_map(tmp_path):
    text = HEADER + "42,900,1,7;9\n42,901,0,9\n"
    map_path = tmp_path / "index_map.json"
    load_corpus(write(tmp_path, text), index_map_path=str(map_path))
    doc = json.loads(map_path.read_text())
    assert doc["examinees"]["42"] == 0
    assert doc["questions"]["900"] == 0 and doc["questions"]["901"] == 1
    assert doc["concepts"]["7"] == 0 and doc["concepts"]["9"] == 1


def test_roundtrip_through_csv(tmp_path):
    corpus = random_corpus(3)
    map_path = tmp_path / "index_map.json"
    reloaded = load_corpus(write(tmp_path, corpus_to_csv(corpus)), index_map_path=str(map_path))
    assert reloaded.counts == corpus.counts
    qmap = {int(k): v for k, v in json.loads(map_path.read_text())["questions"].items()}
    for eid, log in corpus.examinee_logs.items():
        assert [(qmap[i.question_id], i.label) for i in log] == [
            (i.question_id, i.label) for i in reloaded.examinee_logs[eid]
        ]


def test_filter_threshold_boundary():
    corpus = random_corpus(0, n_examinees=2, n_per_examinee=10)
    corpus.examinee_logs[0] = corpus.examinee_logs[0][:9]
    kept = filter_min_interactions(corpus, 10)
    assert set(kept.examinee_logs) == {1}
    assert kept.counts[0] == 1


def test_filter_min_one_is_identity():
    corpus = random_corpus(1)
    assert filter_min_interactions(corpus, 1).counts == corpus.counts


def test_filter_can_empty():
    corpus = random_corpus(2, n_per_examinee=5)
    assert filter_min_interactions(corpus, 6).counts[0] == 0


def test_split_sizes_and_determinism():
    corpus = random_corpus(4, n_examinees=10)
    parts = split_examinees(corpus, (0.6, 0.2, 0.2), seed=11)
    assert tuple(len(p) for p in parts) == (6, 2, 2)
    assert parts == split_examinees(corpus, (0.6, 0.2, 0.2), seed=11)
    union = set().union(*parts)
    assert union == set(corpus.examinee_logs)
    assert sum(len(p) for p in parts) == len(union)


def test_split_sizes_large():
    # 0.6*1360 = 816, 0.2*1360 = 272: plain rounding, frozen by hand
    corpus = random_corpus(5, n_examinees=1360, n_per_examinee=2, n_questions=40)
    parts = split_examinees(corpus, (0.6, 0.2, 0.2), seed=0)
    assert tuple(len(p) for p in parts) == (816, 272, 272)


def test_split_bad_ratios():
    with pytest.raises(ConfigError):
        split_examinees(random_corpus(6), (0.5, 0.2, 0.2), seed=0)


def test_resplit_sizes():
    log = random_corpus(7, n_examinees=1, n_per_examinee=10).examinee_logs[0]
    split = resplit_support_meta(log, 0.2, seed=1, epoch=0)
    assert len(split.support) == 8 and len(split.meta) == 2
    assert split.usable


def test_resplit_partition_property():
    for seed in range(5):
        corpus = random_corpus(100 + seed, n_examinees=6, n_per_examinee=7)
        for eid, log in corpus.examinee_logs.items():
            for epoch in range(3):
                split = resplit_support_meta(log, 0.2, seed=seed, epoch=epoch)
                merged = sorted(split.support + split.meta, key=lambda i: i.question_id)
                assert merged == sorted(log, key=lambda i: i.question_id)
                support_q = {i.question_id for i in split.support}
                assert not support_q & {i.question_id for i in split.meta}


def test_resplit_deterministic_and_epoch_sensitive():
    corpus = random_corpus(8, n_examinees=8, n_per_examinee=9)
    changed = False
    for eid, log in corpus.examinee_logs.items():
        a = resplit_support_meta(log, 0.2, seed=3, epoch=5)
        b = resplit_support_meta(log, 0.2, seed=3, epoch=5)
        assert [i.question_id for i in a.meta] == [i.question_id for i in b.meta]
        c = resplit_support_meta(log, 0.2, seed=3, epoch=6)
        if [i.question_id for i in a.meta] != [i.question_id for i in c.meta]:
            changed = True
    assert changed


def test_resplit_singleton_unusable():
    log = [Interaction(0, 0, 1)]
    split = resplit_support_meta(log, 0.2, seed=0, epoch=0)
    assert not split.usable and split.meta == [] and len(split.support) == 1


def test_ood_examples():
    log = [Interaction(0, q, 1 if q < 7 else 0) for q in range(10)]
    split = build_ood_meta(log, 0.2)
    assert len(split.meta) == 2 and len(split.support) == 8
    assert sum(i.label for i in split.meta) == 1

    all_correct = [Interaction(0, q, 1) for q in range(10)]
    assert build_ood_meta(all_correct, 0.2) is None

    log20 = [Interaction(0, q, q % 2) for q in range(20)]
    split = build_ood_meta(log20, 0.2)
    assert len(split.meta) == 4 and sum(i.label for i in split.meta) == 2
    assert len(split.support) == 16


def test_ood_exhaustive_small():
    # every (c, w) composition up to n=24: balance or exclusion, never both
    for c in range(0, 13):
        for w in range(0, 13):
            n = c + w
            if n == 0:
                continue
            log = [Interaction(0, q, 1 if q < c else 0) for q in range(n)]
            m = max(1, round_half_up(0.2 * n / 2.0))
            split = build_ood_meta(log, 0.2)
            if min(c, w) < m:
                assert split is None
            else:
                ones = sum(i.label for i in split.meta)
                assert ones == m and len(split.meta) == 2 * m
                assert len(split.support) == n - 2 * m


def test_attribute_boundaries():
    def log_with_ratio(c, n):
        return [Interaction(0, q, 1 if q < c else 0) for q in range(n)]

    assert attribute_of(log_with_ratio(2, 5)) is Attribute.A      # exactly 0.4
    assert attribute_of(log_with_ratio(3, 5)) is Attribute.B      # exactly 0.6
    assert attribute_of(log_with_ratio(61, 100)) is Attribute.C   # just above
    assert attribute_of(log_with_ratio(0, 4)) is Attribute.A
    assert attribute_of(log_with_ratio(4, 4)) is Attribute.C


def test_attribute_empty_log():
    with pytest.raises(ContractError):
        attribute_of([])


def test_group_keys():
    assert len(ALL_GROUP_KEYS) == 6
    assert group_key(Attribute.A, 1).bias == "conflicting"
    assert group_key(Attribute.C, 0).bias == "conflicting"
    assert group_key(Attribute.A, 0).bias == "aligned"
    assert group_key(Attribute.C, 1).bias == "aligned"
    assert group_key(Attribute.B, 0).bias == "neutral"
    assert group_key(Attribute.B, 1).bias == "neutral"
    with pytest.raises(ContractError):
        group_key(Attribute.A, 2)


def test_groups_partition_meta():
    corpus = random_corpus(9, n_examinees=10, n_per_examinee=8)
    total = 0
    by_group = {k: 0 for k in ALL_GROUP_KEYS}
    for eid, log in corpus.examinee_logs.items():
        attr = attribute_of(log)
        split = resplit_support_meta(log, 0.25, seed=1, epoch=0)
        for it in split.meta:
            by_group[group_key(attr, it.label)] += 1
            total += 1
    assert sum(by_group.values()) == total > 0
