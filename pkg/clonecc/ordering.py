"""Ordering constraints of the replay protocols.

A protocol is described by which pairs of log records must execute in log
order on the backup:

- ``row``: records writing the same (table_id, row_id)
- ``page``: records whose rows map to the same page
- ``txn``: records of the same transaction, or of two transactions whose
  write sets intersect
- ``single``: every pair

The real backends and the lag simulator both build their dependencies from
the functions here.
"""

from dataclasses import dataclass

from clonecc.replog import txn_groups
from clonecc.util import ConfigurationError

ROW = 'row'
PAGE = 'page'
TXN = 'txn'
SINGLE = 'single'
GRANULARITIES = (ROW, PAGE, TXN, SINGLE)

DEFAULT_ROWS_PER_PAGE = 64


@dataclass(frozen=True)
class PageMap:
    rows_per_page: int = DEFAULT_ROWS_PER_PAGE

    def __post_init__(self):
        if self.rows_per_page < 1:
            raise ConfigurationError('rows_per_page must be >= 1, got %r' % self.rows_per_page)

    def page_of(self, record):
        return (record.table_id, record.row_id // self.rows_per_page)


def row_key(record):
    return record.key


def key_function(granularity, page_map=None):
    """Record -> key such that equal keys must execute in log order."""
    if granularity == ROW:
        return row_key
    if granularity == PAGE:
        return (page_map or PageMap()).page_of
    if granularity == SINGLE:
        return lambda record: None
    raise ValueError('granularity %r has no key function' % granularity)


def link_last_writers(records, key_fn, last_writer):
    """Yield (record, seq of the previous record with the same key or 0).

    *last_writer* maps key -> seq and is updated in place, so a log can be
    linked one segment at a time.
    """
    for record in records:
        key = key_fn(record)
        yield record, last_writer.get(key, 0)
        last_writer[key] = record.seq


def chain_predecessors(records, key_fn):
    """seq -> seq of the previous record with the same key (0 if none)."""
    return {record.seq: pred for record, pred in link_last_writers(records, key_fn, {})}


class TxnDependencyGraph():
    """Transactions in log order with an edge T1 -> T2 when their write sets intersect.

    Built incrementally with ``add``. With ``prune_edges`` only the last
    writer of each key becomes a predecessor, which is transitively
    equivalent; without it every earlier writer still registered is one.
    ``complete`` unregisters a finished transaction so pending-writer sets stay small.
    """

    def __init__(self, prune_edges=True):
        self.prune_edges = prune_edges
        self.txns = []
        self.preds = []
        self._last_writer = {}
        self._writers = {}

    def add(self, records):
        index = len(self.txns)
        keys = {record.key for record in records}
        preds = set()
        for key in keys:
            if self.prune_edges:
                if key in self._last_writer:
                    preds.add(self._last_writer[key])
            else:
                preds.update(self._writers.get(key, ()))
            self._last_writer[key] = index
            self._writers.setdefault(key, set()).add(index)
        self.txns.append(records)
        self.preds.append(preds)
        return index, preds

    def complete(self, index):
        for record in self.txns[index]:
            writers = self._writers.get(record.key)
            if writers is not None:
                writers.discard(index)

    @classmethod
    def from_records(cls, records, prune_edges=True):
        graph = cls(prune_edges)
        for group in txn_groups(records):
            graph.add(group)
        return graph


def constraint_pairs(records, granularity, page_map=None):
    """Set of (earlier seq, later seq) pairs that must execute in log order."""
    records = sorted(records, key=lambda r: r.seq)
    pairs = set()
    if granularity == TXN:
        write_sets = {}
        for record in records:
            write_sets.setdefault(record.txn_id, set()).add(record.key)
        for i, earlier in enumerate(records):
            for later in records[i + 1:]:
                if (earlier.txn_id == later.txn_id
                        or write_sets[earlier.txn_id] & write_sets[later.txn_id]):
                    pairs.add((earlier.seq, later.seq))
        return pairs
    key_fn = key_function(granularity, page_map)
    for i, earlier in enumerate(records):
        for later in records[i + 1:]:
            if key_fn(earlier) == key_fn(later):
                pairs.add((earlier.seq, later.seq))
    return pairs


def is_permitted(order, records, granularity, page_map=None):
    """True if executing records in *order* (list of seqs) respects the protocol."""
    position = {seq: i for i, seq in enumerate(order)}
    if set(position) != {record.seq for record in records}:
        return False
    return all(position[a] < position[b] for a, b in constraint_pairs(records, granularity, page_map))


def permitted_orders(records, granularity, page_map=None):
    """Every execution order the protocol permits, as a set of seq tuples.

    Enumerates linear extensions, so keep the log small (8 records is 40320
    orders at most).
    """
    seqs = sorted(record.seq for record in records)
    pairs = constraint_pairs(records, granularity, page_map)
    before = {seq: {a for a, b in pairs if b == seq} for seq in seqs}
    orders = set()

    def extend(prefix, placed):
        if len(prefix) == len(seqs):
            orders.add(tuple(prefix))
            return
        for seq in seqs:
            if seq not in placed and before[seq] <= placed:
                prefix.append(seq)
                placed.add(seq)
                extend(prefix, placed)
                placed.discard(seq)
                prefix.pop()

    extend([], set())
    return orders


def respects_row_order(order, records):
    """Fast row-granularity check for long logs: per row, seqs appear in increasing order."""
    key_of = {record.seq: record.key for record in records}
    last = {}
    for seq in order:
        key = key_of[seq]
        if last.get(key, 0) > seq:
            return False
        last[key] = seq
    return True
