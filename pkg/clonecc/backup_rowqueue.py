"""Replay through keyed FIFO queues and a central scheduler queue.

   Classes
   -------
   PerRowQueue
     Pending writes of one key in log order, at most one executing.
   SchedulerQueue
     FIFO of keyed queues whose head is safe to execute.
   BackupRowQueue
     Derived class: row-granularity replay, one FIFO per row.
   BackupPageGranularity
     Derived class: the same machinery keyed by page.
"""

import collections
import threading

from clonecc.backup import Backup
from clonecc.ordering import PageMap, row_key


class PerRowQueue():
    __slots__ = ('key', 'pending', 'executing', 'enqueued')

    def __init__(self, key):
        self.key = key
        self.pending = collections.deque()
        self.executing = None
        self.enqueued = False


class SchedulerQueue():
    """FIFO of PerRowQueue references guarded by one condition."""

    def __init__(self):
        self.cond = threading.Condition()
        self.queues = collections.deque()

    def __len__(self):
        return len(self.queues)

    def push(self, row_queue):
        # caller holds self.cond
        row_queue.enqueued = True
        self.queues.append(row_queue)
        self.cond.notify()

    def pop(self, timeout, stop_event):
        """Pop the next ready queue and mark its head executing; None on timeout or stop."""
        with self.cond:
            if not self.queues:
                if stop_event.is_set():
                    return None, None
                self.cond.wait(timeout)
                if not self.queues:
                    return None, None
            row_queue = self.queues.popleft()
            row_queue.enqueued = False
            record = row_queue.pending.popleft()
            row_queue.executing = record.seq
            return row_queue, record


class BackupRowQueue(Backup):
    """Derived class used for replay through per-key FIFO queues

    The scheduler appends each write to the FIFO of its key and puts the
    FIFO on the scheduler queue when nothing of that key is executing. A
    worker pops a FIFO, executes its head, and re-inserts the FIFO at the
    tail of the scheduler queue if more writes are pending.
    """

    protocol = 'c5-rowqueue'

    def __init__(self, workers=1, **kwargs):
        super().__init__(workers, **kwargs)
        self.row_queues = {}
        self.scheduler_queue = SchedulerQueue()

    def key_of(self, record):
        return row_key(record)

    def schedule_segment(self, segment):
        sq = self.scheduler_queue
        with sq.cond:
            for record in segment.records:
                key = self.key_of(record)
                row_queue = self.row_queues.get(key)
                if row_queue is None:
                    row_queue = PerRowQueue(key)
                    self.row_queues[key] = row_queue
                row_queue.pending.append(record)
                if row_queue.executing is None and not row_queue.enqueued:
                    sq.push(row_queue)
        self.add_boundaries(segment.records)

    def queue_depths(self):
        with self.scheduler_queue.cond:
            return {'scheduler_queue': len(self.scheduler_queue),
                    'pending_writes': sum(len(q.pending) for q in self.row_queues.values())}

    def worker_loop(self, worker_id):
        sq = self.scheduler_queue
        while not self.stop_event.is_set():
            row_queue, record = sq.pop(self.idle_wait_s, self.stop_event)
            if row_queue is None:
                continue
            self.install(record)
            with sq.cond:
                row_queue.executing = None
                if row_queue.pending:
                    sq.push(row_queue)
                elif self.row_queues.get(row_queue.key) is row_queue:
                    del self.row_queues[row_queue.key]


class BackupPageGranularity(BackupRowQueue):
    """Derived class used for page-granularity replay

    Parameters
    ----------
    rows_per_page : int
        Rows of one table sharing a page; 1 degenerates to row granularity.
    """

    protocol = 'page-gran'

    def __init__(self, workers=1, rows_per_page=64, **kwargs):
        super().__init__(workers, **kwargs)
        self.page_map = PageMap(rows_per_page)

    def key_of(self, record):
        return self.page_map.page_of(record)


def replay_page_granularity(segments, workers=1, rows_per_page=64, timeout=60.0, **kwargs):
    """Replay a complete log at page granularity; returns the store."""
    backup = BackupPageGranularity(workers, rows_per_page=rows_per_page, **kwargs)
    return backup.replay(segments, timeout)
