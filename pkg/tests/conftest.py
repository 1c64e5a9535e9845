import random
import time

import pytest

from clonecc.replog import LogRecord, OpKind, ThreadLog, coalesce, iter_records

# replays in tests tick fast so the blocking snapshotter admits work quickly
FAST = dict(snapshot_interval_s=0.001, idle_wait_s=0.0005)


def make_log(txns, capacity=8):
    """Build segments from a list of transactions, each a list of writes.

    A write is (table_id, row_id), (table_id, row_id, value) or
    (table_id, row_id, None) for a delete.
    """
    tlog = ThreadLog(0)
    for txn_id, writes in enumerate(txns):
        records = []
        for k, write in enumerate(writes):
            table_id, row_id = write[0], write[1]
            value = write[2] if len(write) > 2 else b'%d.%d' % (txn_id, k)
            kind = OpKind.DELETE if value is None else OpKind.UPDATE
            records.append(LogRecord(0, txn_id, table_id, row_id, kind, value or b''))
        tlog.append(txn_id + 1, txn_id, records)
    return coalesce([tlog], capacity)


def random_txns(rng, max_txns=64, max_writes=8, hot_rows=4, cold_rows=256, hot_share=None):
    """Random transactions with a mix of hot and cold rows, and a few deletes."""
    hot_share = rng.random() if hot_share is None else hot_share
    txns = []
    for txn_id in range(rng.randint(1, max_txns)):
        writes = []
        for k in range(rng.randint(1, max_writes)):
            if rng.random() < hot_share:
                key = (0, rng.randrange(hot_rows))
            else:
                key = (1, rng.randrange(cold_rows))
            value = None if rng.random() < 0.05 else b'%d.%d' % (txn_id, k)
            writes.append(key + (value,))
        txns.append(writes)
    return txns


def random_log(seed, capacity=None, **kwargs):
    rng = random.Random(seed)
    txns = random_txns(rng, **kwargs)
    return make_log(txns, capacity or rng.choice([1, 3, 8, 64]))


def records_of(segments):
    return list(iter_records(segments))


def wait_until(predicate, timeout=5.0):
    deadline = time.monotonic() + timeout
    while not predicate():
        assert time.monotonic() < deadline, 'condition not reached'
        time.sleep(0.001)


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def three_txn_log():
    """T1 writes x, T2 writes y, T3 writes x and y."""
    return make_log([[(0, 1, b'x1')], [(0, 2, b'y2')], [(0, 1, b'x3'), (0, 2, b'y3')]], capacity=2)


@pytest.fixture
def empty_log():
    return []
