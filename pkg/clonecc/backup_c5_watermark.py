"""Row-granularity replay with per-row queues embedded in the log.

   Classes
   -------
   BackupC5Watermark
     Derived class: segments assigned to workers round robin, unsafe writes
     deferred per worker, snapshots advanced from per-worker watermarks.
"""

import collections
import queue

from clonecc import log
from clonecc.backup import Backup, is_safe, preprocess_segment
from clonecc.snapshot import WatermarkSnapshotter, WorkerWatermark


class BackupC5Watermark(Backup):
    """Derived class used for row-granularity replay with worker watermarks

    Every record carries the seq of the previous write to its row, so a
    worker knows a write is safe when that write is the row's head. Unsafe
    writes go to the worker's deferred FIFO, which is rechecked at the end of
    each segment and whenever the worker is idle. A worker's watermark is one
    less than the seq of the write it is about to execute, held back by its
    oldest deferred write; the snapshotter advances c to the minimum.

    Parameters
    ----------
    chaos : bool
        Publish watermarks on segment receipt and install without safety
        checks. Only useful to show that the consistency checker catches it.
    """

    protocol = 'c5-watermark'

    def __init__(self, workers=1, chaos=False, **kwargs):
        super().__init__(workers, **kwargs)
        self.chaos = chaos
        self.watermarks = [WorkerWatermark(w) for w in range(workers)]
        self.worker_inboxes = [queue.Queue() for _ in range(workers)]
        self.deferred = [collections.deque() for _ in range(workers)]
        self.deferral_counts = [0] * workers
        self.dispatched_upto = 0
        self._next_worker = 0
        if chaos:
            log.warning('%s: chaos mode, safety checks disabled', self.protocol)

    def make_snapshotter(self):
        return WatermarkSnapshotter(self, self.snapshot_interval_s, verify=not self.chaos)

    def schedule_segment(self, segment):
        preprocess_segment(segment, self.last_writer)
        self.add_boundaries(segment.records)
        self.worker_inboxes[self._next_worker].put(segment)
        self._next_worker = (self._next_worker + 1) % self.workers
        self.dispatched_upto = segment.last_seq

    def end_of_log(self):
        for inbox in self.worker_inboxes:
            inbox.put(None)

    def queue_depths(self):
        return {'worker_inboxes': [inbox.qsize() for inbox in self.worker_inboxes],
                'deferred': [len(d) for d in self.deferred],
                'watermarks': [w.c_prime for w in self.watermarks]}

    def worker_loop(self, worker_id):
        inbox = self.worker_inboxes[worker_id]
        watermark = self.watermarks[worker_id]
        deferred = self.deferred[worker_id]
        while True:
            # read before polling: everything dispatched so far is in our inbox or done
            dispatched = self.dispatched_upto
            try:
                segment = inbox.get(timeout=self.idle_wait_s)
            except queue.Empty:
                self.recheck_deferred(worker_id)
                if not deferred:
                    watermark.publish(dispatched)
                if self.stop_event.is_set():
                    return
                continue
            if segment is None:
                self.drain_deferred(worker_id)
                return
            if self.chaos:
                self.run_segment_unchecked(watermark, segment)
            else:
                self.run_segment(worker_id, segment)

    def run_segment(self, worker_id, segment):
        watermark = self.watermarks[worker_id]
        deferred = self.deferred[worker_id]
        for record in segment.records:
            if is_safe(record, self.store):
                watermark.publish(min(record.seq, deferred[0].seq if deferred else record.seq) - 1)
                self.install(record)
            else:
                deferred.append(record)
                self.deferral_counts[worker_id] += 1
        self.recheck_deferred(worker_id)
        if deferred:
            watermark.publish(deferred[0].seq - 1)
        else:
            watermark.publish(segment.last_seq)

    def run_segment_unchecked(self, watermark, segment):
        watermark.publish(segment.last_seq)
        for record in segment.records:
            self.install(record, strict=False)

    def recheck_deferred(self, worker_id):
        """Install deferred writes that became safe, keeping the FIFO order of the rest."""
        deferred = self.deferred[worker_id]
        watermark = self.watermarks[worker_id]
        progressed = True
        while deferred and progressed:
            progressed = False
            for _ in range(len(deferred)):
                record = deferred.popleft()
                if is_safe(record, self.store):
                    self.install(record)
                    progressed = True
                else:
                    deferred.append(record)
        if deferred:
            watermark.publish(deferred[0].seq - 1)

    def drain_deferred(self, worker_id):
        deferred = self.deferred[worker_id]
        while deferred:
            if self.stop_event.is_set():
                return
            self.recheck_deferred(worker_id)
            if deferred:
                with self.installed_cond:
                    self.installed_cond.wait(self.idle_wait_s)
        self.watermarks[worker_id].publish(self.dispatched_upto)


def replay_watermark(segments, workers=1, timeout=60.0, **kwargs):
    """Replay a complete log with the watermark variant; returns the backup."""
    backup = BackupC5Watermark(workers, **kwargs)
    backup.replay(segments, timeout)
    return backup
