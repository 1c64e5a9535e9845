"""Single-threaded replay.

   Classes
   -------
   BackupSingle
     Derived class: one worker installs every record in seq order.
"""

import queue

from clonecc.backup import Backup


class BackupSingle(Backup):
    """Derived class used for single-threaded replay"""

    protocol = 'single'

    def __init__(self, workers=1, **kwargs):
        super().__init__(1, **kwargs)
        self.records = queue.Queue()

    def schedule_segment(self, segment):
        self.add_boundaries(segment.records)
        self.records.put(segment.records)

    def end_of_log(self):
        self.records.put(None)

    def queue_depths(self):
        return {'segments_queued': self.records.qsize()}

    def worker_loop(self, worker_id):
        while not self.stop_event.is_set():
            try:
                records = self.records.get(timeout=self.idle_wait_s)
            except queue.Empty:
                continue
            if records is None:
                return
            for record in records:
                self.install(record)


def replay_single_threaded(segments, store=None, timeout=60.0, **kwargs):
    """Install every record of the log in seq order on one thread; returns the store."""
    backup = BackupSingle(store=store, **kwargs)
    return backup.replay(segments, timeout)
