"""Log replay on a backup.

   Classes
   -------
   Backup
     Base class for replaying the log with a scheduler thread, a pool of
     worker threads and a snapshotter thread.
"""

import queue
import threading
import time

from clonecc import log
from clonecc.mvstore import TOMBSTONE, OrderingViolationError, Store
from clonecc.ordering import link_last_writers, row_key
from clonecc.snapshot import DEFAULT_INTERVAL_S, PrefixSnapshotter, SnapshotCursor
from clonecc.util import ConfigurationError


class ReplayError(Exception):
    '''Base class for replay errors.
    '''


class ReplayTimeoutError(ReplayError):
    '''Exception raised when the backup does not finish the log within the timeout.
    '''
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


def preprocess_segment(segment, last_writer_map):
    """Link every record to the previous write of its row and mark the segment preprocessed.

    Parameters
    ----------
    segment : LogSegment
        Must be preprocessed in segment_index order.
    last_writer_map : dict
        (table_id, row_id) -> seq of the last write seen, updated in place.
    """
    for record, prev_seq in link_last_writers(segment.records, row_key, last_writer_map):
        record.prev_seq = prev_seq
    segment.preprocessed = True


def is_safe(record, store):
    """True if the previous write of the record's row is the row's head.

    Raises
    ------
    OrderingViolationError
        If a later write of the row is already installed.
    """
    head = store.head_seq(record.table_id, record.row_id)
    if head == record.prev_seq:
        return True
    if head < record.prev_seq:
        return False
    raise OrderingViolationError('seq %d (prev %d) found head %d on row %s'
                                 % (record.seq, record.prev_seq, head, record.key))


class Backup():
    """ Base class used for replaying a replication log

    A scheduler thread takes segments from ``inbox`` and hands work to
    ``workers`` worker threads through ``schedule_segment``; the snapshotter
    thread advances the snapshot cursor. Derived classes implement
    ``schedule_segment`` and ``worker_loop`` and may replace the snapshotter.

    Parameters
    ----------
    workers : int
        Number of worker threads.
    op_cost_us : float
        Time spent per installed write, in microseconds.
    snapshot_interval_s : float
        Snapshotter tick interval.
    idle_wait_s : float
        How long idle threads block before rechecking for work or shutdown.
    store : Store, optional
        Store to install into; a fresh one that tracks installs by default.
    """

    protocol = None

    def __init__(self, workers=1, op_cost_us=0, snapshot_interval_s=DEFAULT_INTERVAL_S,
                 idle_wait_s=0.001, store=None):
        if workers < 1:
            raise ConfigurationError('workers must be >= 1, got %r' % workers)
        self.workers = workers
        self.op_cost_s = op_cost_us / 1e6
        self.snapshot_interval_s = snapshot_interval_s
        self.idle_wait_s = idle_wait_s
        self.store = store if store is not None else Store(track_installs=True, record_order=True)
        self.cursor = SnapshotCursor()
        self.inbox = queue.Queue()
        self.last_writer = {}
        self.boundaries = []
        self.received_upto = 0
        self.segments_received = 0
        self.replay_is_running = False
        self.stop_event = threading.Event()
        self.scheduler_done = threading.Event()
        self.installed_cond = threading.Condition()
        self.snapshotter = None
        self.threads = []
        self.error = None

    def make_snapshotter(self):
        return PrefixSnapshotter(self, self.snapshot_interval_s)

    def feed(self, segment):
        """Hand one shipped segment to the backup. Used as the primary's log sink."""
        self.inbox.put(segment)

    def finish(self):
        """No more segments will be fed."""
        self.inbox.put(None)

    def begin_replay(self):
        """Starts the scheduler, the workers and the snapshotter.

        Derived classes that need more threads should call this base class
        method and then start their own.
        """
        self.replay_is_running = True
        self.snapshotter = self.make_snapshotter()
        self.start_thread(self.scheduler_loop)
        for worker_id in range(self.workers):
            self.start_thread(self.worker_loop, worker_id)
        self.snapshotter.start()
        log.info('%s: replay started with %d workers', self.protocol, self.workers)

    def start_thread(self, target, *args):
        thread = threading.Thread(target=self.guarded, args=(target,) + args, daemon=True)
        thread.start()
        self.threads.append(thread)

    def guarded(self, target, *args):
        """Run *target*, record its first error and stop the replay on failure."""
        try:
            target(*args)
        except Exception as error:
            log.error('%s: %s in %s: %s', self.protocol, type(error).__name__, target.__name__, error)
            if self.error is None:
                self.error = error
            self.stop_event.set()

    def scheduler_loop(self):
        while not self.stop_event.is_set():
            try:
                segment = self.inbox.get(timeout=self.idle_wait_s)
            except queue.Empty:
                continue
            if segment is None:
                break
            self.segments_received += 1
            self.schedule_segment(segment)
        self.scheduler_done.set()
        self.end_of_log()

    def add_boundaries(self, records):
        """Record the transaction boundaries among *records*, then publish them as received."""
        for record in records:
            if record.last_in_txn:
                self.boundaries.append(record.seq)
                self.received_upto = record.seq

    def schedule_segment(self, segment):
        raise NotImplementedError

    def end_of_log(self):
        """Called on the scheduler thread once the last segment is scheduled."""

    def worker_loop(self, worker_id):
        raise NotImplementedError

    def install(self, record, strict=True):
        if self.op_cost_s > 0:
            time.sleep(self.op_cost_s)
        payload = TOMBSTONE if record.is_delete else record.value
        self.store.install(record.table_id, record.row_id, record.seq, payload, strict=strict)
        with self.installed_cond:
            self.installed_cond.notify_all()

    def wait_safe(self, record):
        """Block until the record is safe. False if the replay is stopping."""
        with self.installed_cond:
            while not is_safe(record, self.store):
                if self.stop_event.is_set():
                    return False
                self.installed_cond.wait(self.idle_wait_s)
        return True

    def wait_installed(self, seq, stop_event=None):
        """Block until every write up to *seq* is installed. False if stopped first."""
        with self.installed_cond:
            while self.store.installed_prefix < seq:
                if self.stop_event.is_set() or (stop_event is not None and stop_event.is_set()):
                    return False
                self.installed_cond.wait(self.idle_wait_s)
        return True

    def queue_depths(self):
        """Protocol specific queue depths for divergence diagnostics."""
        return {}

    def diagnostics(self):
        info = {'inbox': self.inbox.qsize(),
                'received_upto': self.received_upto,
                'installed_prefix': self.store.installed_prefix,
                'install_count': self.store.install_count,
                'c': self.cursor.c}
        info.update(self.queue_depths())
        return info

    def end_replay(self, timeout=60.0):
        """Waits for the whole log to be installed and stops all threads.

        The snapshotter gets a final round of ticks so that c reaches the last
        transaction boundary. Threads are always stopped, also on error.

        Raises
        ------
        ReplayTimeoutError
            If the log is not installed within *timeout* seconds.
        Exception
            The first error raised by a replay thread.
        """
        deadline = time.monotonic() + timeout
        complete = False
        try:
            while not self.scheduler_done.wait(self.idle_wait_s):
                if self.error is not None:
                    raise self.error
                if time.monotonic() > deadline:
                    raise ReplayTimeoutError('%s: scheduler did not finish' % self.protocol,
                                             self.diagnostics())
            last = self.received_upto
            with self.installed_cond:
                while self.store.installed_prefix < last:
                    if self.error is not None:
                        raise self.error
                    if time.monotonic() > deadline:
                        raise ReplayTimeoutError('%s: %d of %d writes installed after %.1f s'
                                                 % (self.protocol, self.store.installed_prefix, last, timeout),
                                                 self.diagnostics())
                    self.installed_cond.wait(self.idle_wait_s)
            if self.error is not None:
                raise self.error
            complete = True
        finally:
            self.abort()
        if self.error is not None:
            raise self.error
        self._final_ticks()
        log.info('%s: replay complete, %d writes, c=%d', self.protocol, self.store.install_count,
                 self.cursor.c)
        return complete

    def abort(self):
        """Stops and joins all replay threads, whatever state they are in."""
        self.stop_event.set()
        if self.snapshotter is not None:
            self.snapshotter.stop()
        for thread in self.threads:
            thread.join()
        self.replay_is_running = False

    def _final_ticks(self):
        last = self.boundaries[-1] if self.boundaries else 0
        while self.cursor.c < last:
            before = self.cursor.c
            self.snapshotter.tick()
            if self.cursor.c == before:
                log.warning('%s: snapshotter stuck at c=%d of %d', self.protocol, before, last)
                break

    def replay(self, segments, timeout=60.0):
        """Replay a complete log offline and return the store."""
        self.begin_replay()
        for segment in segments:
            self.feed(segment)
        self.finish()
        self.end_replay(timeout)
        return self.store
