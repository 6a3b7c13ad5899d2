import random
from collections import defaultdict

import pytest
from hypothesis import given, settings, strategies as st

from logvote.core import Label, LabeledDataset, LogMessage, LogSequence
from logvote.dataset import (
    AnomalousPlusNormalFraction,
    InjectionInfeasibleError,
    InjectionSpec,
    RandomSample,
    SlidingWindow,
    compute_data_efficiency,
    deduplicate,
    edit_sequence,
    inject_sequence_changes,
    inject_template_changes,
    partition_by_session,
    partition_sliding_window,
    sample_training_subset,
    truncate_sessions,
)
from logvote.parser import DrainParser, TemplateStore
from conftest import lseq


# -- partitioning


def test_session_partition_simple():
    msgs = [
        LogMessage("t1", session_key="A", arrival_index=0),
        LogMessage("t3", session_key="B", arrival_index=1),
        LogMessage("t2", session_key="A", arrival_index=2),
    ]
    ids = {"t1": 1, "t2": 2, "t3": 3}
    seqs = partition_by_session(msgs, lambda m: ids[m.content])
    assert [s.template_ids for s in seqs] == [(1, 2), (3,)]


def test_session_partition_hdfs_blocks(hdfs_lines):
    msgs = [LogMessage(c, session_key=k, arrival_index=i) for i, (k, c) in enumerate(hdfs_lines)]
    parser = DrainParser()
    seqs = partition_by_session(msgs, lambda m: parser.parse(m.content)[0])

    oracle = defaultdict(list)
    for i, (k, _) in enumerate(hdfs_lines):
        oracle[k].append(i)
    assert len(seqs) == len(oracle) == 2
    assert [len(s) for s in seqs] == [len(v) for v in oracle.values()] == [3, 3]
    assert seqs[0].template_ids == seqs[1].template_ids


def test_session_partition_single_long_trace():
    calls = [LogMessage(f"call{i % 17}", session_key="trace", arrival_index=i) for i in range(461)]
    (seq,) = partition_by_session(calls, lambda m: int(m.content[4:]))
    assert len(seq) == 461


def test_session_partition_missing_key():
    with pytest.raises(ValueError):
        partition_by_session([LogMessage("x")], lambda m: 0)


@given(st.lists(st.tuples(st.sampled_from("abcde"), st.integers(0, 9)), min_size=1, max_size=50))
def test_session_partition_covers_every_message(rows):
    msgs = [LogMessage(str(t), session_key=k, arrival_index=i) for i, (k, t) in enumerate(rows)]
    seqs = partition_by_session(msgs, lambda m: int(m.content))
    assert sum(len(s) for s in seqs) == len(rows)
    assert len(seqs) == len({k for k, _ in rows})


@pytest.mark.parametrize(
    "n, window, step, lengths",
    [(120, 50, 50, [50, 50, 20]), (50, 50, 50, [50])],
)
def test_sliding_window_lengths(n, window, step, lengths):
    assert [len(s) for s in partition_sliding_window(range(n), window, step)] == lengths


def test_sliding_window_overlapping():
    seqs = partition_sliding_window(range(7), 3, 2)
    starts = [s.origin.start_index for s in seqs]
    # oracle: enumerate start indices directly
    expected = [i for i in range(7) if i % 2 == 0]
    assert starts == expected == [0, 2, 4, 6]
    assert [len(s) for s in seqs] == [min(3, 7 - s) for s in expected] == [3, 3, 3, 1]
    assert seqs[1].template_ids == (2, 3, 4)


def test_sliding_window_spec_validation():
    with pytest.raises(ValueError):
        SlidingWindow(3, 4)


def test_truncate():
    long, short = LogSequence(tuple(range(57))), LogSequence(tuple(range(12)))
    out = truncate_sessions([long, short], 30)
    assert out[0].template_ids == tuple(range(30))
    assert out[1] == short
    assert truncate_sessions([], 30) == []


# -- de-duplication


def test_dedup_exact_match():
    kept, ratio = deduplicate([lseq([1, 2]), lseq([2, 1])], [lseq([1, 2])])
    assert kept == [lseq([2, 1])]
    assert ratio == 0.5


def test_dedup_disjoint_and_empty():
    assert deduplicate([lseq([5])], [lseq([6])])[1] == 0.0
    assert deduplicate([], [lseq([6])]) == ([], 0.0)


def test_dedup_ratio_fixture():
    train = [lseq([i, i + 1, i + 2]) for i in range(200)]
    test = [lseq([i, i + 1, i + 2]) for i in range(84)] + [lseq([1000 + i]) for i in range(16)]
    kept, ratio = deduplicate(test, train)
    assert ratio == pytest.approx(0.84)
    assert len(kept) == 16


# -- sequence injection


def _ds(n=100, seed=0, length=(3, 10), vocab=12):
    r = random.Random(seed)
    test = [lseq([r.randrange(vocab) for _ in range(r.randint(*length))], r.random() < 0.2) for _ in range(n)]
    return LabeledDataset("d", [lseq([0, 1])], test)


def test_remove_edit_matches_figure_example():
    spec = InjectionSpec(0.1, safe_template_ids=frozenset({2}))
    assert edit_sequence([1, 2, 3, 4], "remove", spec, random.Random(0)) == (1, 3, 4)


def test_injection_ratio_zero_is_identity():
    ds = _ds()
    out, report = inject_sequence_changes(ds, InjectionSpec(0.0))
    assert out.test == ds.test
    assert report["edited"] == 0


def test_injection_exact_count_and_determinism():
    ds = _ds()
    spec = InjectionSpec(0.30, seed=11)
    out1, report = inject_sequence_changes(ds, spec)
    out2, _ = inject_sequence_changes(ds, spec)
    changed = [i for i, (a, b) in enumerate(zip(ds.test, out1.test)) if a != b]
    assert len(changed) == 30 == report["edited"]
    assert sum(report["edits"].values()) == 30
    assert out1.test == out2.test
    assert [a.label for a in ds.test] == [b.label for b in out1.test]
    assert out1.train == ds.train


def test_injection_respects_safe_templates():
    ds = _ds(seed=3)
    safe = frozenset({0, 1, 2, 3})
    out, _ = inject_sequence_changes(ds, InjectionSpec(0.5, seed=5, safe_template_ids=safe))
    for before, after in zip(ds.test, out.test):
        if before != after:
            diff = {t: after.key.count(t) - before.key.count(t) for t in set(before.key) | set(after.key)}
            assert all(t in safe for t, d in diff.items() if d)


def test_injection_skips_uneditable_and_fails_when_impossible():
    test = [lseq([9, 9]) for _ in range(5)] + [lseq([1, 2, 3]) for _ in range(5)]
    ds = LabeledDataset("d", [], test)
    out, report = inject_sequence_changes(ds, InjectionSpec(0.5, seed=1, safe_template_ids=frozenset({1, 2, 3})))
    assert report["edited"] == 5
    assert all(a == b for a, b in zip(ds.test[:5], out.test[:5]))
    with pytest.raises(InjectionInfeasibleError):
        inject_sequence_changes(ds, InjectionSpec(0.6, seed=1, safe_template_ids=frozenset({1, 2, 3})))


@settings(max_examples=80)
@given(st.lists(st.integers(0, 5), min_size=2, max_size=15), st.integers(1, 6), st.integers(0, 10_000))
def test_shuffle_edit_only_permutes_one_span(ids, span, seed):
    spec = InjectionSpec(0.1, shuffle_span=span)
    starts = [s for s in range(len(ids) - min(span, len(ids)) + 1) if len(set(ids[s : s + min(span, len(ids))])) > 1]
    if not starts:
        return
    out = edit_sequence(ids, "shuffle", spec, random.Random(seed))
    assert len(out) == len(ids) and list(out) != ids
    diff = [i for i in range(len(ids)) if out[i] != ids[i]]
    lo, hi = diff[0], diff[-1]
    assert hi - lo < min(span, len(ids))
    # some aligned window of length span holds the whole change and is a permutation
    w = min(span, len(ids))
    assert any(
        s <= lo and hi < s + w and sorted(out[s : s + w]) == sorted(ids[s : s + w])
        for s in range(len(ids) - w + 1)
    )


# -- template injection


def _store(*texts):
    store = TemplateStore()
    for t in texts:
        store.mint(t.split())
    return store


def test_template_injection_ratio_zero():
    store = _store("received block <*> from <*>", "got it")
    out, report = inject_template_changes(store, InjectionSpec(0.0, level="template"), ["x"])
    assert out.templates == store.templates and report["edited"] == 0


def test_template_injection_edits():
    store = _store(*(f"w{i} block <*> from <*> done" for i in range(40)))
    out, report = inject_template_changes(store, InjectionSpec(0.25, level="template", seed=2), ["so", "then"])
    assert report["edited"] == 10
    changed = [tid for tid in store.templates if store[tid].tokens != out[tid].tokens]
    assert sorted(changed) == report["edited_ids"]
    assert sorted(out.templates) == sorted(store.templates)
    for tid in changed:
        d = len(out[tid].tokens) - len(store[tid].tokens)
        assert d in (-1, 0, 1)
        assert out[tid].tokens.count("<*>") == 2


def test_template_delete_never_removes_last_literal():
    store = _store(*(f"only{i} <*>" for i in range(30)))
    out, report = inject_template_changes(store, InjectionSpec(1.0, level="template", seed=4), ["so"])
    assert report["edits"]["delete"] == 0
    assert all(any(t != "<*>" for t in tpl.tokens) for tpl in out.templates.values())


def _first_outcome(text, pool, wanted_kind, wanted_text):
    store = _store(text)
    for seed in range(300):
        out, rep = inject_template_changes(store, InjectionSpec(1.0, level="template", seed=seed), pool)
        if rep["edits"][wanted_kind] and out[0].text == wanted_text:
            return out[0].text
    return None


def test_template_edit_figure_examples():
    assert _first_outcome("received block <*> from <*>", ["x"], "delete", "received <*> from <*>")
    assert _first_outcome("received block <*>", ["got"], "replace", "got block <*>")


# -- sampling and efficiency


def test_random_sample_size():
    train = [lseq([i % 50, i]) for i in range(4785)]
    subset = sample_training_subset(train, RandomSample(1000), seed=0)
    assert len(subset) == 1000
    assert sample_training_subset(train, RandomSample(1000), seed=0) == subset
    with pytest.raises(ValueError):
        sample_training_subset(train, RandomSample(5000), seed=0)


def test_random_sample_full_is_permutation():
    train = [lseq([i]) for i in range(30)]
    assert sorted(sample_training_subset(train, RandomSample(30), 3), key=lambda s: s.key) == train


def test_anomalous_plus_normal_fraction():
    anomalous = [lseq([900 + i], Label.ANOMALOUS) for i in range(10)]
    normals = [lseq([i, i]) for i in range(50)] * 2  # 50 unique, each twice
    subset = sample_training_subset(anomalous + normals, AnomalousPlusNormalFraction(0.2), seed=1)
    n_anom = sum(1 for s in subset if s.label is Label.ANOMALOUS)
    n_norm = len({s.key for s in subset if s.label is Label.NORMAL})
    assert (n_anom, n_norm, len(subset)) == (10, 10, 20)


def test_efficiency_table_value():
    full = [lseq([i]) for i in range(3181)]
    subset = [lseq([i]) for i in range(686)] * 2
    stats = compute_data_efficiency(subset, full)
    assert stats.u_count == 686 and stats.d_count == 1372
    assert stats.u_pct == pytest.approx(0.2157, abs=5e-5)
    assert stats.delta_u_pct == pytest.approx(0.7843, abs=5e-5)


def test_efficiency_small_and_identity():
    full = [lseq([i]) for i in range(8)] + [lseq([0])]
    assert compute_data_efficiency([lseq([0]), lseq([1]), lseq([1])], full).u_pct == len({0, 1}) / len(set(range(8)))
    s = compute_data_efficiency(full, full)
    assert (s.u_pct, s.delta_u_pct) == (1.0, 0.0)
    with pytest.raises(ValueError):
        compute_data_efficiency([], [])
    with pytest.raises(ValueError):
        compute_data_efficiency([lseq([99])], full)
