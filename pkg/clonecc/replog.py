"""Totally ordered replication log shipped from the primary to a backup.

   Classes
   -------
   LogRecord
     One row write with its position in the total order.
   LogSegment
     Fixed-capacity group of records; transactions never span two segments.
   ThreadLog
     Per-thread commit log of the primary, single writer.
   Coalescer
     Merges thread logs into one totally ordered, segmented log.
"""

import enum
import heapq
import struct
import threading
from dataclasses import dataclass, field, replace

from clonecc import log

DEFAULT_SEGMENT_CAPACITY = 4096
DEFAULT_MAX_ROW_SIZE = 1 << 20

# write_ts = (counter << THREAD_ID_BITS) | thread_id
THREAD_ID_BITS = 8
MAX_THREADS = 1 << THREAD_ID_BITS

# seq, txn_id, table_id, row_id, write_ts, prev_seq, op_kind, last_in_txn, value_len
RECORD_HEADER = struct.Struct('<QQIQQQBBI')
# segment_index, record_count, preprocessed
SEGMENT_HEADER = struct.Struct('<QIB')


class LogError(Exception):
    '''Base class for replication log errors.
    '''


class LogDecodeError(LogError):
    '''Exception raised when a log buffer cannot be decoded.
    '''
    def __init__(self, message, offset):
        super().__init__('%s at byte offset %d' % (message, offset))
        self.offset = offset


class DuplicateCommitError(LogError):
    '''Exception raised when two transactions carry the same commit timestamp.
    '''


class RowSizeError(LogError):
    '''Exception raised when a row payload exceeds the configured maximum row size.
    '''


class OpKind(enum.IntEnum):
    INSERT = 1
    UPDATE = 2
    DELETE = 3


def compose_ts(counter, thread_id):
    """Build a commit timestamp unique across primary threads."""
    if not 0 <= thread_id < MAX_THREADS:
        raise ValueError('thread_id %d out of range' % thread_id)
    return (counter << THREAD_ID_BITS) | thread_id


def split_ts(write_ts):
    """Inverse of compose_ts: returns (counter, thread_id)."""
    return write_ts >> THREAD_ID_BITS, write_ts & (MAX_THREADS - 1)


@dataclass
class LogRecord:
    seq: int
    txn_id: int
    table_id: int
    row_id: int
    op_kind: OpKind
    value: bytes = b''
    write_ts: int = 0
    prev_seq: int = 0
    last_in_txn: bool = False

    @property
    def key(self):
        return (self.table_id, self.row_id)

    @property
    def is_delete(self):
        return self.op_kind == OpKind.DELETE


@dataclass
class LogSegment:
    segment_index: int
    capacity: int = DEFAULT_SEGMENT_CAPACITY
    records: list = field(default_factory=list)
    preprocessed: bool = False

    @property
    def first_seq(self):
        return self.records[0].seq if self.records else 0

    @property
    def last_seq(self):
        return self.records[-1].seq if self.records else 0


@dataclass
class TxnEntry:
    commit_ts: int
    txn_id: int
    records: list


@dataclass
class ThreadLog:
    """Commit log of one primary thread.

    ``lock`` is held by the owning thread while it picks a commit timestamp and
    appends, and by the shipper while it reads the thread's timestamp bound.
    """
    thread_id: int
    entries: list = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def append(self, commit_ts, txn_id, records):
        if self.entries and commit_ts <= self.entries[-1].commit_ts:
            raise LogError('thread %d commit_ts %d not increasing (last %d)'
                           % (self.thread_id, commit_ts, self.entries[-1].commit_ts))
        self.entries.append(TxnEntry(commit_ts, txn_id, list(records)))


def txn_groups(records):
    """Split a seq-ordered record list into per-transaction lists."""
    group = []
    for record in records:
        group.append(record)
        if record.last_in_txn:
            yield group
            group = []
    if group:
        yield group


def iter_records(segments):
    for segment in segments:
        yield from segment.records


class Coalescer:
    """Merges thread logs into one totally ordered log of segments.

    ``ship`` can be called repeatedly while the primary runs. Each call takes
    every not yet shipped entry with ``commit_ts <= upto_ts`` from every thread
    log, so callers must pass a bound below any timestamp still to be committed.

    Parameters
    ----------
    capacity : int
        Maximum number of records per segment. A transaction larger than the
        capacity gets a segment of its own.
    sink : callable, optional
        Called with every completed LogSegment. Without a sink, segments are
        collected in ``self.segments``.
    """

    def __init__(self, capacity=DEFAULT_SEGMENT_CAPACITY, sink=None):
        if capacity < 1:
            raise ValueError('segment capacity must be >= 1')
        self.capacity = capacity
        self.sink = sink
        self.segments = []
        self.next_seq = 1
        self.next_index = 0
        self.txn_count = 0
        self._open = None
        self._cursors = {}
        self._last_ts = None

    def ship(self, thread_logs, upto_ts=None, flush=True):
        """Coalesce entries up to *upto_ts* (everything when None).

        Returns
        -------
        int
            Number of transactions appended.
        """
        batches = []
        for tlog in thread_logs:
            start = self._cursors.get(tlog.thread_id, 0)
            entries = tlog.entries
            end = start
            while end < len(entries) and (upto_ts is None or entries[end].commit_ts <= upto_ts):
                if end > 0 and entries[end].commit_ts <= entries[end - 1].commit_ts:
                    raise LogError('thread %d log is not ordered by commit_ts' % tlog.thread_id)
                end += 1
            self._cursors[tlog.thread_id] = end
            batches.append(entries[start:end])

        count = 0
        for entry in heapq.merge(*batches, key=lambda e: e.commit_ts):
            if self._last_ts is not None and entry.commit_ts <= self._last_ts:
                if entry.commit_ts == self._last_ts:
                    raise DuplicateCommitError('commit_ts %d used by two transactions' % entry.commit_ts)
                raise LogError('commit_ts %d shipped after %d' % (entry.commit_ts, self._last_ts))
            self._last_ts = entry.commit_ts
            if entry.records:
                self._append_txn(entry)
                count += 1
        if flush:
            self.flush()
        return count

    def flush(self):
        """Close the open segment if it holds any record."""
        if self._open is not None and self._open.records:
            self._close()

    def _append_txn(self, entry):
        size = len(entry.records)
        if self._open is not None and len(self._open.records) + size > self.capacity:
            self._close()
        if self._open is None:
            self._open = LogSegment(self.next_index, self.capacity)
            self.next_index += 1
        if size > self.capacity:
            log.warning('txn %d has %d writes, more than the segment capacity %d',
                        entry.txn_id, size, self.capacity)
        for k, record in enumerate(entry.records):
            self._open.records.append(replace(record, seq=self.next_seq, txn_id=entry.txn_id,
                                              write_ts=entry.commit_ts, prev_seq=0,
                                              last_in_txn=(k == size - 1)))
            self.next_seq += 1
        self.txn_count += 1
        if len(self._open.records) >= self.capacity:
            self._close()

    def _close(self):
        segment = self._open
        self._open = None
        if self.sink is None:
            self.segments.append(segment)
        else:
            self.sink(segment)


def coalesce(thread_logs, capacity=DEFAULT_SEGMENT_CAPACITY):
    """Merge quiesced thread logs into a list of segments in commit_ts order.

    Raises
    ------
    DuplicateCommitError
        If two transactions share a commit timestamp.
    """
    coalescer = Coalescer(capacity)
    coalescer.ship(thread_logs)
    return coalescer.segments


def encode_record(record, max_row_size=DEFAULT_MAX_ROW_SIZE):
    value = record.value or b''
    if len(value) > max_row_size:
        raise RowSizeError('row payload of %d bytes exceeds %d' % (len(value), max_row_size))
    header = RECORD_HEADER.pack(record.seq, record.txn_id, record.table_id, record.row_id,
                                record.write_ts, record.prev_seq, int(record.op_kind),
                                int(record.last_in_txn), len(value))
    return header + value


def decode_record_at(buf, offset=0):
    """Decode one record starting at *offset*; returns (record, next offset)."""
    end = offset + RECORD_HEADER.size
    if len(buf) < end:
        raise LogDecodeError('truncated record header (%d of %d bytes)'
                             % (len(buf) - offset, RECORD_HEADER.size), offset)
    (seq, txn_id, table_id, row_id, write_ts, prev_seq,
     op_kind, last_in_txn, value_len) = RECORD_HEADER.unpack_from(buf, offset)
    try:
        op_kind = OpKind(op_kind)
    except ValueError:
        raise LogDecodeError('unknown op_kind %d' % op_kind, offset) from None
    if len(buf) < end + value_len:
        raise LogDecodeError('truncated row payload (%d of %d bytes)'
                             % (len(buf) - end, value_len), end)
    value = bytes(buf[end:end + value_len])
    record = LogRecord(seq=seq, txn_id=txn_id, table_id=table_id, row_id=row_id,
                       op_kind=op_kind, value=value, write_ts=write_ts,
                       prev_seq=prev_seq, last_in_txn=bool(last_in_txn))
    return record, end + value_len


def decode_record(buf, offset=0):
    return decode_record_at(buf, offset)[0]


def encode_segments(segments, max_row_size=DEFAULT_MAX_ROW_SIZE):
    out = bytearray()
    for segment in segments:
        out += SEGMENT_HEADER.pack(segment.segment_index, len(segment.records), int(segment.preprocessed))
        for record in segment.records:
            out += encode_record(record, max_row_size)
    return bytes(out)


def decode_segments(buf, capacity=DEFAULT_SEGMENT_CAPACITY):
    segments = []
    offset = 0
    while offset < len(buf):
        if len(buf) < offset + SEGMENT_HEADER.size:
            raise LogDecodeError('truncated segment header', offset)
        index, count, preprocessed = SEGMENT_HEADER.unpack_from(buf, offset)
        offset += SEGMENT_HEADER.size
        segment = LogSegment(index, max(capacity, count), preprocessed=bool(preprocessed))
        for _ in range(count):
            record, offset = decode_record_at(buf, offset)
            segment.records.append(record)
        segments.append(segment)
    return segments


def dump_log(segments, path):
    """Write *segments* to *path* in the segment-framed record layout."""
    data = encode_segments(segments)
    with open(path, 'wb') as f:
        f.write(data)
    log.info('dumped %d segments (%d bytes) to %s', len(segments), len(data), path)


def load_log(path, capacity=DEFAULT_SEGMENT_CAPACITY):
    with open(path, 'rb') as f:
        data = f.read()
    segments = decode_segments(data, capacity)
    log.info('loaded %d segments from %s', len(segments), path)
    return segments
