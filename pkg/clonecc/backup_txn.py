"""Transaction-granularity replay.

   Classes
   -------
   BackupTxnGranularity
     Derived class: a transaction starts only after every earlier transaction
     with an intersecting write set has finished.
"""

import queue
import threading

from clonecc.backup import Backup
from clonecc.ordering import TxnDependencyGraph
from clonecc.replog import txn_groups


class BackupTxnGranularity(Backup):
    """Derived class used for transaction-granularity replay

    Parameters
    ----------
    prune_edges : bool
        Depend only on the last writer of each key (True) or on every earlier
        unfinished writer (False).
    """

    protocol = 'txn-gran'

    def __init__(self, workers=1, prune_edges=True, **kwargs):
        super().__init__(workers, **kwargs)
        self.graph = TxnDependencyGraph(prune_edges)
        self.graph_lock = threading.Lock()
        self.ready = queue.Queue()
        self.remaining = []
        self.successors = []
        self.done = []

    def schedule_segment(self, segment):
        for records in txn_groups(segment.records):
            with self.graph_lock:
                index, preds = self.graph.add(records)
                pending = [p for p in preds if not self.done[p]]
                self.remaining.append(len(pending))
                self.successors.append([])
                self.done.append(False)
                for p in pending:
                    self.successors[p].append(index)
            self.add_boundaries(records)
            if not pending:
                self.ready.put(index)

    def queue_depths(self):
        with self.graph_lock:
            blocked = sum(1 for i, r in enumerate(self.remaining) if r > 0 and not self.done[i])
        return {'ready': self.ready.qsize(), 'blocked_txns': blocked}

    def worker_loop(self, worker_id):
        while not self.stop_event.is_set():
            try:
                index = self.ready.get(timeout=self.idle_wait_s)
            except queue.Empty:
                continue
            for record in self.graph.txns[index]:
                self.install(record)
            with self.graph_lock:
                self.done[index] = True
                self.graph.complete(index)
                for succ in self.successors[index]:
                    self.remaining[succ] -= 1
                    if self.remaining[succ] == 0:
                        self.ready.put(succ)


def replay_txn_granularity(segments, workers=1, prune_edges=True, timeout=60.0, **kwargs):
    """Replay a complete log at transaction granularity; returns the store."""
    backup = BackupTxnGranularity(workers, prune_edges=prune_edges, **kwargs)
    return backup.replay(segments, timeout)
