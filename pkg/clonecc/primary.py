"""Primary transaction engine.

   Read-write transactions run under strict two-phase locking, either on m
   real threads or in a discrete-event simulation of m cores. Both modes emit
   the totally ordered log and f_p, the instant each transaction becomes
   readable on the primary.

   Classes
   -------
   Op, TxnSpec
     A transaction as an ordered list of operations.
   SimParams
     Core count m and per-operation costs e (primary) and d (backup).
   LockTable
     Exclusive row locks with FIFO waiters and wait-for cycle detection.
   PrimaryEngine
     Runs a workload in real or discrete-event mode.
"""

import collections
import itertools
import queue
import threading
import time
from dataclasses import dataclass, field

import simpy

from clonecc import log
from clonecc.mvstore import TOMBSTONE, Store
from clonecc.replog import (DEFAULT_SEGMENT_CAPACITY, MAX_THREADS, Coalescer, LogRecord, OpKind,
                            ThreadLog, compose_ts, iter_records, txn_groups)
from clonecc.util import ConfigurationError

READ = 'read'
INSERT = 'insert'
UPDATE = 'update'
DELETE = 'delete'
OP_KINDS = {INSERT: OpKind.INSERT, UPDATE: OpKind.UPDATE, DELETE: OpKind.DELETE}

REAL = 'real'
DISCRETE = 'discrete'
MODES = (REAL, DISCRETE)


class PrimaryError(Exception):
    '''Base class for primary engine errors.
    '''


class DeadlockError(PrimaryError):
    '''Exception raised when transactions wait for each other in a cycle.
    '''


@dataclass
class Op:
    kind: str
    table_id: int
    row_id: int
    # bytes, or a callable mapping the current payload (None if absent) to bytes
    value: object = None

    def payload(self, current):
        if callable(self.value):
            return self.value(current)
        return self.value if self.value is not None else b''


@dataclass
class TxnSpec:
    """One transaction. ``arrival_time`` None means closed loop: start as soon as a thread is free."""
    txn_id: int
    ops: list
    arrival_time: object = None

    def __post_init__(self):
        if not self.ops:
            raise ValueError('txn %d has no operations' % self.txn_id)

    @property
    def write_count(self):
        return sum(1 for op in self.ops if op.kind != READ)


@dataclass
class SimParams:
    m: int = 4
    e: int = 2
    d: int = 1

    def validate(self, discrete=True):
        if self.m < 1:
            raise ConfigurationError('m (primary threads) must be >= 1, got %r' % self.m)
        if self.m >= MAX_THREADS:
            raise ConfigurationError('m (primary threads) must be < %d, got %r' % (MAX_THREADS, self.m))
        if discrete:
            if self.e <= 0:
                raise ConfigurationError('e (primary op cost) must be > 0, got %r' % self.e)
            if not 0 < self.d <= self.e:
                raise ConfigurationError('d (backup op cost) must satisfy 0 < d <= e, got %r' % self.d)
        elif self.e < 0 or self.d < 0:
            raise ConfigurationError('op costs must not be negative')
        return self


@dataclass
class PrimaryResult:
    store: Store
    segments: list
    f_p: dict
    trace: list = field(default_factory=list)
    mode: str = DISCRETE
    start_time: int = 0

    def __iter__(self):
        return iter((self.store, self.segments, self.f_p))

    def records(self):
        return list(iter_records(self.segments))

    def execution_order(self):
        """Log seqs of the primary's writes in the order they executed."""
        ordinal_to_seq = {}
        for group in txn_groups(iter_records(self.segments)):
            for k, record in enumerate(group):
                ordinal_to_seq[(record.txn_id, k)] = record.seq
        return [ordinal_to_seq[entry] for entry in self.trace]


class LockTable():
    """Exclusive per-row locks held to commit, granted in request order.

    ``acquire`` returns the release stamp left on the row by its previous
    owner; committing after that stamp keeps commit timestamps in conflict order.
    """

    def __init__(self):
        self._cond = threading.Condition()
        self._owner = {}
        self._waiters = {}
        self._waiting_for = {}
        self._held = {}
        self._stamps = {}
        self.aborted = False

    def acquire(self, txn_id, table_id, row_id):
        """Take the lock on (table_id, row_id) for *txn_id*, waiting in FIFO order.

        Re-acquiring a lock the transaction owns is a no-op.

        Raises
        ------
        DeadlockError
            If waiting would close a wait-for cycle, or the run was aborted.
        """
        key = (table_id, row_id)
        with self._cond:
            owner = self._owner.get(key)
            if owner == txn_id:
                return self._stamps.get(key, 0)
            if owner is None and not self._waiters.get(key):
                return self._grant(txn_id, key)
            self._waiters.setdefault(key, collections.deque()).append(txn_id)
            self._waiting_for[txn_id] = key
            if self._closes_cycle(txn_id):
                self._waiters[key].remove(txn_id)
                del self._waiting_for[txn_id]
                self.aborted = True
                self._cond.notify_all()
                raise DeadlockError('txn %d waiting for row %s closes a wait-for cycle' % (txn_id, key))
            while not (self._owner.get(key) is None and self._waiters[key][0] == txn_id):
                if self.aborted:
                    raise DeadlockError('run aborted while txn %d waited for row %s' % (txn_id, key))
                self._cond.wait()
            self._waiters[key].popleft()
            del self._waiting_for[txn_id]
            return self._grant(txn_id, key)

    def _grant(self, txn_id, key):
        self._owner[key] = txn_id
        self._held.setdefault(txn_id, []).append(key)
        return self._stamps.get(key, 0)

    def _closes_cycle(self, txn_id):
        seen = set()
        current = txn_id
        while True:
            key = self._waiting_for.get(current)
            if key is None:
                return False
            holder = self._owner.get(key)
            if holder is None:
                waiters = self._waiters.get(key)
                holder = waiters[0] if waiters and waiters[0] != current else None
                if holder is None:
                    return False
            if holder == txn_id:
                return True
            if holder in seen:
                return False
            seen.add(holder)
            current = holder

    def release_all(self, txn_id, stamp=0):
        with self._cond:
            for key in self._held.pop(txn_id, ()):
                del self._owner[key]
                self._stamps[key] = stamp
                if key in self._waiters and not self._waiters[key]:
                    del self._waiters[key]
            self._cond.notify_all()

    def owner(self, table_id, row_id):
        with self._cond:
            return self._owner.get((table_id, row_id))

    def waiters(self, table_id, row_id):
        with self._cond:
            return list(self._waiters.get((table_id, row_id), ()))

    def abort(self):
        with self._cond:
            self.aborted = True
            self._cond.notify_all()


class PrimaryEngine():
    """Executes a workload and produces the log.

    Parameters
    ----------
    params : SimParams
        m threads or simulated cores; e is the per-operation cost, in time
        units of the simulation or in ``time_unit_s`` seconds in real mode.
    segment_size : int
        Segment capacity of the emitted log.
    sink : callable, optional
        Receives every LogSegment as soon as it is shipped (real mode streams
        while transactions run).
    ship_interval_s : float
        Real mode: how often the shipper coalesces committed transactions.
    duration_s : float
        Real mode: stop starting new transactions after this many seconds (0 = no limit).
    time_unit_s : float
        Real mode: seconds per time unit for e and arrival times.
    """

    def __init__(self, params, segment_size=DEFAULT_SEGMENT_CAPACITY, sink=None,
                 ship_interval_s=0.001, duration_s=0, time_unit_s=1e-6):
        self.params = params
        self.segment_size = segment_size
        self.sink = sink
        self.ship_interval_s = ship_interval_s
        self.duration_s = duration_s
        self.time_unit_s = time_unit_s
        self.segments = []
        self.coalescer = Coalescer(segment_size, sink=self._ship_segment)
        self.store = Store()
        self.f_p = {}
        self.trace = []
        self.error = None
        self.stop_event = threading.Event()
        self.lock_table = None
        self.thread_logs = []
        self._counters = []
        self._trace_lock = threading.Lock()

    def _ship_segment(self, segment):
        self.segments.append(segment)
        if self.sink is not None:
            self.sink(segment)

    def run(self, workload, mode=DISCRETE):
        if mode not in MODES:
            raise ConfigurationError('mode must be one of %s, got %r' % (MODES, mode))
        self.params.validate(discrete=(mode == DISCRETE))
        log.info('primary: %d txns, m=%d, mode %s', len(workload), self.params.m, mode)
        if mode == DISCRETE:
            return self._run_discrete(workload)
        return self._run_real(workload)

    def _write(self, spec, op, buffer, writes):
        key = (op.table_id, op.row_id)
        if op.kind == READ:
            return
        if op.kind == DELETE:
            payload = None
        else:
            current = buffer[key] if key in buffer else self.store.read_latest(*key)
            payload = op.payload(current)
        buffer[key] = payload
        writes.append(LogRecord(seq=0, txn_id=spec.txn_id, table_id=op.table_id, row_id=op.row_id,
                                op_kind=OP_KINDS[op.kind], value=payload if payload is not None else b''))
        with self._trace_lock:
            self.trace.append((spec.txn_id, len(writes) - 1))

    def _install(self, buffer, write_ts):
        for (table_id, row_id), payload in buffer.items():
            self.store.install(table_id, row_id, write_ts, TOMBSTONE if payload is None else payload)

    def _result(self, mode, start_time):
        return PrimaryResult(self.store, list(self.segments), dict(self.f_p), list(self.trace),
                             mode, start_time)

    # real mode

    def _run_real(self, workload):
        m = self.params.m
        self.lock_table = LockTable()
        self.thread_logs = [ThreadLog(t) for t in range(m)]
        self._counters = [0] * m
        self.op_cost_s = self.params.e * self.time_unit_s
        pending = queue.Queue()
        for spec in sorted(workload, key=lambda s: s.arrival_time or 0):
            pending.put(spec)
        self.start_ns = time.monotonic_ns()
        executors = []
        for thread_id in range(m):
            thread = threading.Thread(target=self._executor, args=(thread_id, pending), daemon=True)
            thread.start()
            executors.append(thread)
        shipper = threading.Thread(target=self._shipper, args=(), daemon=True)
        shipper.start()
        try:
            for thread in executors:
                thread.join()
        finally:
            self.stop_event.set()
            shipper.join()
            self.coalescer.ship(self.thread_logs)
        if self.error is not None:
            raise self.error
        log.info('primary: committed %d txns, %d log records',
                 len(self.f_p), self.coalescer.next_seq - 1)
        return self._result(REAL, self.start_ns)

    def _executor(self, thread_id, pending):
        deadline = self.start_ns + int(self.duration_s * 1e9) if self.duration_s else None
        while not self.stop_event.is_set():
            try:
                spec = pending.get_nowait()
            except queue.Empty:
                return
            now = time.monotonic_ns()
            if deadline is not None and now >= deadline:
                return
            if spec.arrival_time is not None:
                start = self.start_ns + int(spec.arrival_time * self.time_unit_s * 1e9)
                if start > now:
                    time.sleep((start - now) / 1e9)
            try:
                self._execute(thread_id, spec)
            except DeadlockError as error:
                log.error('primary: %s', error)
                if self.error is None:
                    self.error = error
                self.stop_event.set()
                self.lock_table.abort()
                return

    def _execute(self, thread_id, spec):
        buffer = {}
        writes = []
        stamp = 0
        try:
            for op in spec.ops:
                stamp = max(stamp, self.lock_table.acquire(spec.txn_id, op.table_id, op.row_id))
                if self.op_cost_s > 0:
                    time.sleep(self.op_cost_s)
                self._write(spec, op, buffer, writes)
            self._commit(thread_id, spec, buffer, writes, stamp)
        finally:
            self.lock_table.release_all(spec.txn_id, self._counters[thread_id])

    def _commit(self, thread_id, spec, buffer, writes, stamp):
        tlog = self.thread_logs[thread_id]
        with tlog.lock:
            counter = max(time.monotonic_ns(), self._counters[thread_id] + 1, stamp + 1)
            self._counters[thread_id] = counter
            write_ts = compose_ts(counter, thread_id)
            if writes:
                tlog.append(write_ts, spec.txn_id, writes)
                self.f_p[spec.txn_id] = time.monotonic_ns()
            self._install(buffer, write_ts)

    def ship_bound(self):
        """Largest commit timestamp below anything not committed yet."""
        bounds = []
        for thread_id, tlog in enumerate(self.thread_logs):
            with tlog.lock:
                counter = max(time.monotonic_ns(), self._counters[thread_id] + 1)
            bounds.append(compose_ts(counter, 0) - 1)
        return min(bounds)

    def _shipper(self):
        while not self.stop_event.wait(self.ship_interval_s):
            self.coalescer.ship(self.thread_logs, self.ship_bound())

    # discrete-event mode

    def _run_discrete(self, workload):
        env = simpy.Environment()
        cores = simpy.Resource(env, capacity=self.params.m)
        locks = {}
        tlog = ThreadLog(0)
        self.thread_logs = [tlog]
        counter = itertools.count(1)
        committed = []

        def lock_of(key):
            if key not in locks:
                locks[key] = simpy.Resource(env, capacity=1)
            return locks[key]

        def transaction(spec):
            if spec.arrival_time is not None and spec.arrival_time > env.now:
                yield env.timeout(spec.arrival_time - env.now)
            held = {}
            buffer = {}
            writes = []
            for op in spec.ops:
                key = (op.table_id, op.row_id)
                if key not in held:
                    request = lock_of(key).request()
                    yield request
                    held[key] = request
                with cores.request() as core:
                    yield core
                    yield env.timeout(self.params.e)
                self._write(spec, op, buffer, writes)
            write_ts = compose_ts(next(counter), 0)
            if writes:
                tlog.append(write_ts, spec.txn_id, writes)
                self.f_p[spec.txn_id] = env.now
            self._install(buffer, write_ts)
            for key, request in held.items():
                locks[key].release(request)
            committed.append(spec.txn_id)

        closed = [spec for spec in workload if spec.arrival_time is None]
        for spec in workload:
            if spec.arrival_time is not None:
                env.process(transaction(spec))
        if closed:
            specs = iter(closed)

            def client():
                for spec in specs:
                    yield env.process(transaction(spec))

            for _ in range(self.params.m):
                env.process(client())
        env.run()

        if len(committed) < len(workload):
            raise DeadlockError('%d transactions never committed' % (len(workload) - len(committed)))
        self.coalescer.ship(self.thread_logs)
        return self._result(DISCRETE, 0)


def run_primary(workload, params, mode=DISCRETE, segment_size=DEFAULT_SEGMENT_CAPACITY, sink=None,
                **kwargs):
    """Run *workload* on a fresh primary.

    Returns
    -------
    PrimaryResult
        Unpacks as (store, segments, f_p).
    """
    engine = PrimaryEngine(params, segment_size=segment_size, sink=sink, **kwargs)
    return engine.run(workload, mode)
