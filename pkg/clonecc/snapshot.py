"""Snapshot cursor, worker watermarks, snapshotters and read-only transactions.

   Classes
   -------
   SnapshotCursor
     The (c, n) pair delimiting the current, next and future snapshots.
   WorkerWatermark
     Per-worker c' register, single writer.
   Snapshotter
     Base class of the snapshotter thread.
   WatermarkSnapshotter, PrefixSnapshotter, BlockingSnapshotter
     Derived classes, one per way of choosing n.
   ReadSession
     Closed-loop read-only client recording observations.
"""

import bisect
import math
import random
import threading
import time

from clonecc import log
from clonecc.mpc import Observation
from clonecc.mvstore import merge_snapshots
from clonecc.util import ConfigurationError

DEFAULT_INTERVAL_S = 0.010


class SnapshotCursor():
    """Sequence numbers c (current snapshot end) and n (next snapshot end).

    Both only move forward and n is always a transaction boundary. Every
    advance of c is appended to ``history`` as (clock(), c) so the lag of a
    transaction can be computed after the run.
    """

    def __init__(self, clock=time.monotonic_ns):
        self.c = 0
        self.n = 0
        self.clock = clock
        self.history = []
        self.n_history = []
        self._lock = threading.Lock()

    def set_next(self, n):
        with self._lock:
            if n < self.n or n < self.c:
                raise ValueError('n cannot move back from %d to %d' % (self.n, n))
            if n != self.n:
                self.n = n
                self.n_history.append(n)

    def advance_c(self, n):
        with self._lock:
            if n < self.c or n > self.n:
                raise ValueError('c=%d cannot move to %d with n=%d' % (self.c, n, self.n))
            if n > self.c:
                self.c = n
                self.history.append((self.clock(), n))


class WorkerWatermark():
    __slots__ = ('worker_id', 'c_prime')

    def __init__(self, worker_id):
        self.worker_id = worker_id
        self.c_prime = 0

    def publish(self, value):
        # an int store is atomic; only the owning worker calls this
        if value > self.c_prime:
            self.c_prime = value


def align_to_boundary(boundaries, candidate):
    """Largest transaction boundary <= candidate, 0 if none."""
    i = bisect.bisect_right(boundaries, candidate)
    return boundaries[i - 1] if i > 0 else 0


def snapshotter_advance_watermark(cursor, watermarks, boundaries, store=None, verify=True):
    """Advance c to the largest boundary at or below the minimum watermark.

    Watermark reads may be stale; a stale value is only ever too low.

    Returns
    -------
    int
        The new c.
    """
    if not watermarks:
        return cursor.c
    candidate = min(w.c_prime for w in watermarks)
    n = align_to_boundary(boundaries, candidate)
    if n > cursor.c:
        cursor.set_next(n)
        if store is None:
            cursor.advance_c(n)
        else:
            merge_snapshots(store, cursor, verify=verify)
    return cursor.c


def snapshotter_advance_prefix(cursor, store, boundaries):
    """Advance c to the largest boundary inside the contiguous installed prefix."""
    n = align_to_boundary(boundaries, store.installed_prefix)
    if n > cursor.c:
        cursor.set_next(n)
        merge_snapshots(store, cursor)
    return cursor.c


class Snapshotter():
    """ Base class for the snapshotter thread of a backup

    Parameters
    ----------
    backup : Backup
        The backup whose cursor, store and transaction boundaries are used.
    interval_s : float
        Time between two ticks.
    """

    def __init__(self, backup, interval_s=DEFAULT_INTERVAL_S):
        self.backup = backup
        self.cursor = backup.cursor
        self.interval_s = interval_s
        # (time, c before, c after, writes received but not in c)
        self.ticks = []
        self.stop_event = threading.Event()
        self.thread = None

    def start(self):
        # an error in a tick is recorded on the backup and stops the replay
        self.thread = threading.Thread(target=self.backup.guarded, args=(self.run,), daemon=True)
        self.thread.start()

    def stop(self):
        self.stop_event.set()
        if self.thread is not None:
            self.thread.join()

    def run(self):
        log.debug('snapshotter %s started', type(self).__name__)
        while not self.stop_event.wait(self.interval_s):
            self.tick()
        log.debug('snapshotter %s stopped', type(self).__name__)

    def tick(self):
        c_before = self.cursor.c
        pending = self.backup.received_upto - c_before
        self.advance()
        self.ticks.append((self.cursor.clock(), c_before, self.cursor.c, pending))

    def advance(self):
        raise NotImplementedError

    def admit(self, first_seq):
        """Block a worker before a transaction the next snapshot may not include."""
        return True


class WatermarkSnapshotter(Snapshotter):
    """c follows the minimum of the workers' c' registers.

    With ``verify`` False (chaos mode) the merge skips the installed-prefix check.
    """

    def __init__(self, backup, interval_s=DEFAULT_INTERVAL_S, verify=True):
        super().__init__(backup, interval_s)
        self.verify = verify

    def advance(self):
        snapshotter_advance_watermark(self.cursor, self.backup.watermarks, self.backup.boundaries,
                                      self.backup.store, verify=self.verify)


class PrefixSnapshotter(Snapshotter):
    """c follows the contiguous prefix of installed writes."""

    def advance(self):
        snapshotter_advance_prefix(self.cursor, self.backup.store, self.backup.boundaries)


class BlockingSnapshotter(Snapshotter):
    """Snapshots taken every interval by blocking workers at a chosen n.

    A worker may start a transaction only if its first seq is at or below
    ``target``. At a tick, the snapshot end n is the boundary of the
    transaction containing ``target`` (the target first shrinks to the log
    received so far). The tick waits until (c, n] is installed, merges, and
    opens admission up to ``n + estimate``, where the estimate is an
    exponentially weighted moving average of the writes per interval, at
    least one transaction.

    Parameters
    ----------
    initial_estimate : int
        Writes admitted before the first tick.
    smoothing : float
        Weight of the newest sample in the moving average.

    Raises
    ------
    ConfigurationError
        If initial_estimate is not positive.
    """

    def __init__(self, backup, interval_s=DEFAULT_INTERVAL_S, initial_estimate=64, smoothing=0.5):
        super().__init__(backup, interval_s)
        if initial_estimate <= 0:
            raise ConfigurationError('snapshot rate estimate must be positive, got %r' % initial_estimate)
        if not 0.0 < smoothing <= 1.0:
            raise ConfigurationError('smoothing must be in (0, 1], got %r' % smoothing)
        self.estimate = float(initial_estimate)
        self.smoothing = smoothing
        self.target = int(initial_estimate)
        self.cond = threading.Condition()
        self._received_at_tick = 0

    def admit(self, first_seq):
        with self.cond:
            while first_seq > self.target:
                if self.stop_event.is_set() or self.backup.stop_event.is_set():
                    return False
                self.cond.wait(self.interval_s)
        return True

    def stop(self):
        super().stop()
        with self.cond:
            self.cond.notify_all()

    def advance(self):
        backup = self.backup
        c = self.cursor.c
        with self.cond:
            received = backup.received_upto
            self.target = min(self.target, received)
            target = self.target
        if target > c:
            i = bisect.bisect_left(backup.boundaries, target)
            n = backup.boundaries[i]
            self.cursor.set_next(n)
            if not backup.wait_installed(n, self.stop_event):
                return
            merge_snapshots(backup.store, self.cursor)
        n = self.cursor.c
        sample = max(n - c, received - self._received_at_tick)
        self._received_at_tick = received
        self.estimate = self.smoothing * sample + (1.0 - self.smoothing) * self.estimate
        with self.cond:
            self.target = max(self.target, n + max(1, math.ceil(self.estimate)))
            self.cond.notify_all()


def read_only_txn(store, cursor, rows):
    """Read *rows* at c sampled once at transaction start.

    Returns
    -------
    tuple
        (sampled c, list of payload or None)
    """
    c = cursor.c
    return c, [store.read_at(table_id, row_id, c) for table_id, row_id in rows]


class ReadSession():
    """Closed-loop client issuing read-only transactions against a backup.

    Parameters
    ----------
    session_id : int
    store : Store
    cursor : SnapshotCursor
    keys : sequence of (table_id, row_id)
        Candidate keys, may include keys never written.
    reads_per_txn : int
        Rows read by one transaction, all at the same c.
    hot_keys : sequence of (table_id, row_id), optional
        Keys read in every transaction in addition to the random ones.
    record : bool
        Keep observations for offline checking.
    """

    def __init__(self, session_id, store, cursor, keys, reads_per_txn=1, hot_keys=(),
                 seed=0, record=True):
        self.session_id = session_id
        self.store = store
        self.cursor = cursor
        self.keys = list(keys)
        self.hot_keys = list(hot_keys)
        self.reads_per_txn = reads_per_txn
        self.rng = random.Random(seed)
        self.record = record
        self.observations = []
        self.txn_count = 0
        self.stop_event = threading.Event()
        self.thread = None

    def start(self):
        self.thread = threading.Thread(target=self.run, args=(), daemon=True)
        self.thread.start()

    def stop(self):
        self.stop_event.set()
        if self.thread is not None:
            self.thread.join()

    def run(self):
        while not self.stop_event.is_set():
            self.run_once()
            # yield the interpreter lock to the workers
            time.sleep(0)

    def run_once(self):
        rows = self.hot_keys + [self.rng.choice(self.keys) for _ in range(self.reads_per_txn)]
        c, values = read_only_txn(self.store, self.cursor, rows)
        self.txn_count += 1
        if self.record:
            self.observations.append(Observation(self.session_id, c, list(zip(rows, values)),
                                                 time.monotonic_ns()))
        return c, values
