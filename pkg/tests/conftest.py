import random

import pytest

from logvote.core import Label, LabeledSequence, LogSequence


def lseq(ids, label=Label.NORMAL):
    return LabeledSequence(LogSequence(tuple(ids)), Label(label))


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def hdfs_lines():
    # six messages over two blocks
    return [
        ("blk_1", "Receiving block blk_1 src: /10.0.0.1 dest: /10.0.0.2"),
        ("blk_2", "Receiving block blk_2 src: /10.0.0.3 dest: /10.0.0.4"),
        ("blk_1", "PacketResponder 1 for block blk_1 terminating"),
        ("blk_2", "PacketResponder 0 for block blk_2 terminating"),
        ("blk_1", "Received block blk_1 of size 67108864 from /10.0.0.1"),
        ("blk_2", "Received block blk_2 of size 3 from /10.0.0.3"),
    ]
