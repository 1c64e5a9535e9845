"""Row-granularity replay with one worker per transaction and blocking snapshots.

   Classes
   -------
   TxnChain
     The writes of one transaction in log order.
   BackupC5TxnChain
     Derived class: transactions handed out in commit order, each write waits
     until its row's previous write is installed.
"""

import queue

from clonecc.backup import Backup, preprocess_segment
from clonecc.replog import txn_groups
from clonecc.snapshot import BlockingSnapshotter


class TxnChain():
    __slots__ = ('records', 'first_seq', 'last_seq')

    def __init__(self, records):
        self.records = records
        self.first_seq = records[0].seq
        self.last_seq = records[-1].seq


class BackupC5TxnChain(Backup):
    """Derived class used for row-granularity replay of whole transactions

    The scheduler chains each transaction's writes and queues the chains in
    commit order. A worker takes the next chain and executes its writes in
    order, blocking on each until it is safe. It does not pick up other work
    while blocked. Snapshots are taken by the BlockingSnapshotter.

    Parameters
    ----------
    initial_estimate : int
        Writes admitted before the snapshotter's first tick.
    """

    protocol = 'c5-txnchain'

    def __init__(self, workers=1, initial_estimate=64, **kwargs):
        super().__init__(workers, **kwargs)
        self.initial_estimate = initial_estimate
        self.scheduler_queue = queue.Queue()

    def make_snapshotter(self):
        return BlockingSnapshotter(self, self.snapshot_interval_s, self.initial_estimate)

    def schedule_segment(self, segment):
        preprocess_segment(segment, self.last_writer)
        for records in txn_groups(segment.records):
            chain = TxnChain(records)
            self.add_boundaries(records)
            self.scheduler_queue.put(chain)

    def end_of_log(self):
        for _ in range(self.workers):
            self.scheduler_queue.put(None)

    def queue_depths(self):
        return {'scheduler_queue': self.scheduler_queue.qsize(),
                'target': self.snapshotter.target if self.snapshotter else 0}

    def worker_loop(self, worker_id):
        while not self.stop_event.is_set():
            try:
                chain = self.scheduler_queue.get(timeout=self.idle_wait_s)
            except queue.Empty:
                continue
            if chain is None:
                return
            if not self.snapshotter.admit(chain.first_seq):
                return
            for record in chain.records:
                if not self.wait_safe(record):
                    return
                self.install(record)


def replay_txnchain(segments, workers=1, timeout=60.0, **kwargs):
    """Replay a complete log with the txn-chain variant; returns the backup."""
    backup = BackupC5TxnChain(workers, **kwargs)
    backup.replay(segments, timeout)
    return backup
