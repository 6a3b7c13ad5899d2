import itertools

import pytest
from hypothesis import given, settings, strategies as st

from logvote.core import WILDCARD
from logvote.parser import (
    DrainParser,
    ParserConfig,
    PassthroughParser,
    TemplateStore,
    grouping_accuracy,
    parse_message,
    parse_passthrough,
)


def test_config_validation():
    with pytest.raises(ValueError):
        ParserConfig(tree_depth=1)
    with pytest.raises(ValueError):
        ParserConfig(similarity_threshold=1.0)
    with pytest.raises(ValueError):
        ParserConfig(similarity_threshold=0.0)


def test_first_message_makes_template():
    parser = DrainParser()
    assert parse_message(parser, "Waiting to Receive") == (0, [])
    assert parser.store[0].tokens == ("Waiting", "to", "Receive")


def test_existing_template_matches():
    parser = DrainParser()
    parser.parse("Sent Block 7")
    tid = parser.store.next_id - 1
    assert parser.store[tid].text == "Sent Block <*>"
    assert parse_message(parser, "Sent Block 12") == (tid, ["12"])


def test_empty_message_rejected():
    with pytest.raises(ValueError):
        parse_message(DrainParser(), "   ")


def _alignment_oracle(messages):
    """Positions where all messages agree are literals, the rest are parameters."""
    toks = [m.split() for m in messages]
    assert len({len(t) for t in toks}) == 1
    varying = [i for i in range(len(toks[0])) if len({t[i] for t in toks}) > 1]
    return varying, [[t[i] for i in varying] for t in toks]


def test_two_message_corpus_merges():
    msgs = ["Received Block 4 from 12.2.1.6", "Received Block 7 from 9.9.9.9"]
    parser = DrainParser()
    ids = [parser.parse(m)[0] for m in msgs]
    assert ids[0] == ids[1]
    varying, expected = _alignment_oracle(msgs)
    template = parser.store[ids[0]].tokens
    assert [i for i, t in enumerate(template) if t == WILDCARD] == varying
    assert [parser.extract_params(ids[0], m) for m in msgs] == expected == [["4", "12.2.1.6"], ["7", "9.9.9.9"]]
    # the second call already sees the merged template
    assert parser.parse(msgs[1])[1] == ["7", "9.9.9.9"]


FIXTURE = [
    # (message, manual group)
    ("Receiving block blk_11 src: /10.0.0.1:50010 dest: /10.0.0.2:50010", "recv"),
    ("Receiving block blk_22 src: /10.0.0.5:50010 dest: /10.0.0.7:50010", "recv"),
    ("PacketResponder 1 for block blk_11 terminating", "resp"),
    ("PacketResponder 2 for block blk_22 terminating", "resp"),
    ("Verification succeeded for blk_11", "verify"),
    ("Verification succeeded for blk_93", "verify"),
    ("Deleting block blk_11 file /data/current/blk_11", "delete"),
    ("Deleting block blk_22 file /data/current/blk_22", "delete"),
    ("BLOCK* NameSystem.allocateBlock: /user/a.txt blk_11", "alloc"),
    ("BLOCK* NameSystem.allocateBlock: /user/b.txt blk_22", "alloc"),
    ("Starting thread to transfer block blk_11 to 10.0.0.9:50010", "transfer"),
    ("Starting thread to transfer block blk_22 to 10.0.0.8:50010", "transfer"),
    ("Served block blk_11 to /10.0.0.3", "served"),
    ("Served block blk_22 to /10.0.0.4", "served"),
    ("writeBlock blk_11 received exception java.io.IOException", "exception"),
    ("writeBlock blk_22 received exception java.io.IOException", "exception"),
    ("Shutting down datanode", "shutdown"),
    ("Shutting down datanode", "shutdown"),
    ("Got exception while serving blk_11 to /10.0.0.3", "gotexc"),
    ("Got exception while serving blk_22 to /10.0.0.4", "gotexc"),
]


def test_grouping_accuracy_on_fixture():
    parser = DrainParser()
    ids = [parser.parse(m)[0] for m, _ in FIXTURE]
    reference = [g for _, g in FIXTURE]
    assert len(set(reference)) == 10
    assert len(parser.store) == 10
    assert grouping_accuracy(ids, reference) == 1.0


def test_grouping_accuracy_examples():
    assert grouping_accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    assert grouping_accuracy([0, 1, 2], [0, 0, 0]) == 0.0
    with pytest.raises(ValueError):
        grouping_accuracy([0, 1], [0])


@given(st.lists(st.integers(0, 3), min_size=2, max_size=12), st.data())
def test_grouping_accuracy_matches_pair_enumeration(pred, data):
    ref = data.draw(st.lists(st.integers(0, 3), min_size=len(pred), max_size=len(pred)))
    pairs = list(itertools.combinations(range(len(pred)), 2))
    agree = sum((pred[i] == pred[j]) == (ref[i] == ref[j]) for i, j in pairs)
    assert grouping_accuracy(pred, ref) == pytest.approx(agree / len(pairs))


def test_passthrough():
    store = TemplateStore()
    a = parse_passthrough(store, "setxattr")
    assert parse_passthrough(store, "setxattr") == a
    assert parse_passthrough(store, "semtimedop") != a
    with pytest.raises(ValueError):
        parse_passthrough(store, "two tokens")


def test_passthrough_175_calls():
    calls = [f"syscall_{i}" for i in range(175)]
    parser = PassthroughParser()
    ids = [parser.parse(c)[0] for c in calls * 3]
    assert len(parser.store) == 175
    assert ids[:175] == list(range(175))


def test_store_file_round_trip(tmp_path):
    parser = DrainParser()
    for m, _ in FIXTURE:
        parser.parse(m)
    parser.store.save(tmp_path / "t.tsv")
    loaded = TemplateStore.load(tmp_path / "t.tsv")
    assert loaded.templates == parser.store.templates
    assert loaded.next_id == parser.store.next_id


words = st.sampled_from(["open", "close", "read", "blk", "42", "7", "x1", "disk", "ok", "3.5"])
messages = st.lists(st.lists(words, min_size=1, max_size=6).map(" ".join), min_size=1, max_size=40)


@settings(max_examples=60)
@given(messages)
def test_parser_properties(corpus):
    a, b = DrainParser(), DrainParser()
    ids = [a.parse(m)[0] for m in corpus]
    assert [b.parse(m)[0] for m in corpus] == ids
    assert a.store.templates == b.store.templates
    a.store.check_dense()

    # every literal survives verbatim in every message of its group
    for m, tid in zip(corpus, ids):
        template = a.store[tid].tokens
        toks = m.split()
        assert len(template) == len(toks)
        assert any(t != WILDCARD for t in template)
        for t, w in zip(template, toks):
            assert t == WILDCARD or t == w

    # re-parsing changes nothing
    before = dict(a.store.templates)
    assert [a.parse(m)[0] for m in corpus] == ids
    assert a.store.templates == before
