"""Replication lag of the coarse-grained protocols on constructed workloads.

Two closed forms give f_p and f_b for every transaction of a workload built
to make transaction-granularity (resp. page-granularity) replay fall further
behind the primary with each transaction. ``simulate_backup`` is an
independent discrete-event oracle for any protocol, driven by the log and
f_p of the discrete-event primary, so the closed forms can be checked
against it and the row-granularity protocol can be shown to keep a flat lag
on the same workloads.

All times are integers in simulation time units.
"""

import csv
from dataclasses import dataclass, field
from fractions import Fraction

import simpy

from clonecc import log
from clonecc.ordering import PAGE, ROW, SINGLE, PageMap, TxnDependencyGraph, chain_predecessors, key_function
from clonecc.primary import INSERT, UPDATE, Op, SimParams, TxnSpec, run_primary
from clonecc.replog import iter_records, txn_groups
from clonecc.util import ceil_div, exact_slope

TXN_THEOREM = 'txn'
PAGE_THEOREM = 'page'

# simulator protocols
SIM_ROW = 'row'
SIM_TXNCHAIN = 'txnchain'
SIM_TXN = 'txn'
SIM_PAGE = 'page'
SIM_SINGLE = 'single'
SIM_UNCONSTRAINED = 'unconstrained'
SIM_PROTOCOLS = (SIM_ROW, SIM_TXNCHAIN, SIM_TXN, SIM_PAGE, SIM_SINGLE, SIM_UNCONSTRAINED)

# bench protocol -> simulator protocol
SIM_PROTOCOL_OF = {
    'c5-watermark': SIM_ROW,
    'c5-rowqueue': SIM_ROW,
    'c5-txnchain': SIM_TXNCHAIN,
    'txn-gran': SIM_TXN,
    'page-gran': SIM_PAGE,
    'single': SIM_SINGLE,
}

HOT_TABLE = 0
INSERT_TABLE = 1


class PreconditionError(ValueError):
    '''Exception raised when the parameters violate an assumption of a lag theorem.
    '''


@dataclass
class TheoremParams:
    """Parameters of the constructed workloads.

    n is the writes per transaction for the transaction theorem; for the
    page theorem the batch width is min(m, hot_page_size) and n is ignored.
    """
    m: int = 4
    e: int = 2
    d: int = 1
    n: int = 3
    L: int = 10
    hot_page_size: int = 4

    @property
    def k(self):
        return ceil_div(self.e, self.d)

    @property
    def batch_width(self):
        return min(self.m, self.hot_page_size)

    def sim_params(self):
        return SimParams(m=self.m, e=self.e, d=self.d)

    def check(self, theorem=TXN_THEOREM):
        """Raise PreconditionError naming the first assumption that fails."""
        if self.e <= 0 or self.d <= 0 or self.d > self.e:
            raise PreconditionError('0 < d <= e fails: d=%r, e=%r' % (self.d, self.e))
        if self.L < 0:
            raise PreconditionError('L must not be negative, got %r' % self.L)
        k = self.k
        if self.m <= k:
            raise PreconditionError('m > ceil(e/d) fails: m=%d, ceil(e/d)=%d; the backup can '
                                    'keep up with a primary this narrow' % (self.m, k))
        if theorem == TXN_THEOREM:
            n = self.n
            if n <= k:
                raise PreconditionError('n > ceil(e/d) fails: n=%d, ceil(e/d)=%d' % (n, k))
            if self.m < n:
                raise PreconditionError('m >= n fails: m=%d, n=%d; the primary is bottlenecked '
                                        'and cannot keep n transactions in flight' % (self.m, n))
        elif theorem == PAGE_THEOREM:
            if self.hot_page_size <= k:
                raise PreconditionError('|S| > ceil(e/d) fails: |S|=%d, ceil(e/d)=%d'
                                        % (self.hot_page_size, k))
            n = self.batch_width
        else:
            raise ValueError('unknown theorem %r' % theorem)
        if n * self.d <= self.e:
            raise PreconditionError('nd > e fails: n=%d, d=%d, e=%d' % (n, self.d, self.e))
        return self


@dataclass(frozen=True)
class LagPoint:
    i: int
    f_p: int
    f_b: int

    @property
    def lag(self):
        return self.f_b - self.f_p


@dataclass
class LagCurve:
    points: list = field(default_factory=list)
    label: str = ''

    def __len__(self):
        return len(self.points)

    def lags(self):
        return [p.lag for p in self.points]

    def slope(self):
        """Exact least-squares slope of lag over i."""
        return exact_slope([p.i for p in self.points], self.lags())

    def final_lag(self):
        return self.points[-1].lag if self.points else 0

    def mismatches(self, other):
        """Indices where the two curves disagree on f_p or f_b."""
        if len(self) != len(other):
            return list(range(min(len(self), len(other)), max(len(self), len(other))))
        return [a.i for a, b in zip(self.points, other.points) if (a.f_p, a.f_b) != (b.f_p, b.f_b)]

    def to_csv(self, path):
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(['i', 'f_p', 'f_b', 'lag'])
            for p in self.points:
                writer.writerow([p.i, p.f_p, p.f_b, p.lag])


def required_txn_count(params, theorem=TXN_THEOREM):
    """Index of the first transaction whose lag exceeds L, by the closed form."""
    params.check(theorem)
    if theorem == TXN_THEOREM:
        return ceil_div(params.L, params.n * params.d - params.e)
    n = params.batch_width
    return ceil_div(n * params.L, n * params.d - params.e)


def txn_granularity_curve(params, count=None):
    """Closed-form f_p and f_b of transaction-granularity replay on ``proof_txn_workload``.

    Parameters
    ----------
    params : TheoremParams
    count : int, optional
        Number of transactions; by default one past the required count, so
        the last transaction's lag exceeds L.

    Raises
    ------
    PreconditionError
    """
    params.check(TXN_THEOREM)
    n, e, d = params.n, params.e, params.d
    if count is None:
        count = required_txn_count(params, TXN_THEOREM) + 1
    points = [LagPoint(i, (n + i) * e, n * e + (i + 1) * n * d) for i in range(count)]
    return LagCurve(points, 'txn closed form')


def page_granularity_curve(params, count=None):
    """Closed-form f_p and f_b of page-granularity replay on ``proof_page_workload``."""
    params.check(PAGE_THEOREM)
    n, e, d = params.batch_width, params.e, params.d
    if count is None:
        count = required_txn_count(params, PAGE_THEOREM) + 1
    points = [LagPoint(i, ((i + n) // n) * e, e + (i + 1) * d) for i in range(count)]
    return LagCurve(points, 'page closed form')


def page_lag_lower_bound(params, i):
    """Lower bound i(nd - e)/n on the page-granularity lag of transaction i, exact."""
    n = params.batch_width
    return Fraction(i * (n * params.d - params.e), n)


def proof_txn_workload(params, count=None):
    """Transactions of n-1 unique inserts followed by an update of one hot row, one every e."""
    params.check(TXN_THEOREM)
    if count is None:
        count = required_txn_count(params, TXN_THEOREM) + 1
    n, e = params.n, params.e
    workload = []
    for i in range(count):
        ops = [Op(INSERT, INSERT_TABLE, i * (n - 1) + j, b'i') for j in range(n - 1)]
        ops.append(Op(UPDATE, HOT_TABLE, 0, i.to_bytes(8, 'little')))
        workload.append(TxnSpec(i, ops, arrival_time=i * e))
    return workload


def proof_page_workload(params, count=None):
    """Batches of min(m, |S|) single-write transactions to distinct rows of one page, one batch every e."""
    params.check(PAGE_THEOREM)
    if count is None:
        count = required_txn_count(params, PAGE_THEOREM) + 1
    n, e = params.batch_width, params.e
    return [TxnSpec(i, [Op(UPDATE, HOT_TABLE, i % n, i.to_bytes(8, 'little'))], arrival_time=(i // n) * e)
            for i in range(count)]


def _unit_process(env, workers, ready_at, preds, cost, priority):
    if ready_at > env.now:
        yield env.timeout(ready_at - env.now)
    for pred in preds:
        yield pred
    with workers.request(priority=priority) as request:
        yield request
        yield env.timeout(cost)
    return env.now


def _simulate_units(env, records, f_p, workers, d, protocol, rows_per_page):
    """One process per scheduling unit: a record, or a whole transaction for txn granularity."""
    pool = simpy.PriorityResource(env, capacity=workers)
    finish_of = {}
    if protocol == SIM_TXN:
        groups = list(txn_groups(records))
        graph = TxnDependencyGraph.from_records(records)
        procs = []
        for index, group in enumerate(groups):
            preds = [procs[p] for p in sorted(graph.preds[index])]
            proc = env.process(_unit_process(env, pool, f_p[group[0].txn_id], preds,
                                             len(group) * d, group[0].seq))
            procs.append(proc)
            for record in group:
                finish_of[record.seq] = proc
        return finish_of
    if protocol == SIM_UNCONSTRAINED:
        preds = {record.seq: 0 for record in records}
    else:
        granularity = {SIM_ROW: ROW, SIM_PAGE: PAGE, SIM_SINGLE: SINGLE}[protocol]
        preds = chain_predecessors(records, key_function(granularity, PageMap(rows_per_page)))
    for record in records:
        pred = preds[record.seq]
        finish_of[record.seq] = env.process(
            _unit_process(env, pool, f_p[record.txn_id], [finish_of[pred]] if pred else [], d, record.seq))
    return finish_of


def _simulate_txnchain(env, records, f_p, workers, d):
    """Transactions handed out in log order to the first free worker, writes waiting on their row."""
    row_preds = chain_predecessors(records, key_function(ROW))
    done = {record.seq: env.event() for record in records}
    finish = {}
    chains = simpy.Store(env)

    def feeder():
        for group in txn_groups(records):
            ready_at = f_p[group[0].txn_id]
            if ready_at > env.now:
                yield env.timeout(ready_at - env.now)
            yield chains.put(group)

    def worker():
        while True:
            group = yield chains.get()
            for record in group:
                pred = row_preds[record.seq]
                if pred:
                    yield done[pred]
                yield env.timeout(d)
                finish[record.seq] = env.now
                done[record.seq].succeed()

    env.process(feeder())
    for _ in range(workers):
        env.process(worker())
    return finish


def simulate_backup(records, f_p, protocol, workers, d, rows_per_page=1):
    """Discrete-event replay of a log under one protocol's ordering constraints.

    Every write costs d. A transaction's writes become available at its f_p
    and the transaction is included in the snapshot once every write up to
    its last is finished.

    Parameters
    ----------
    records : list of LogRecord
        The log in seq order.
    f_p : dict
        txn_id -> time the transaction became readable on the primary.
    protocol : str
        One of SIM_PROTOCOLS.
    workers : int
    d : int
    rows_per_page : int
        Page size for the page protocol.

    Returns
    -------
    LagCurve
        One point per transaction in log order.
    """
    if protocol not in SIM_PROTOCOLS:
        raise ValueError('protocol must be one of %s, got %r' % (SIM_PROTOCOLS, protocol))
    records = sorted(records, key=lambda r: r.seq)
    env = simpy.Environment()
    if protocol == SIM_TXNCHAIN:
        finish = _simulate_txnchain(env, records, f_p, workers, d)
        env.run()
    else:
        procs = _simulate_units(env, records, f_p, workers, d, protocol, rows_per_page)
        env.run()
        finish = {seq: proc.value for seq, proc in procs.items()}
    if len(finish) != len(records):
        raise RuntimeError('%s simulation finished %d of %d writes' % (protocol, len(finish), len(records)))
    points = []
    included = 0
    for i, group in enumerate(txn_groups(records)):
        for record in group:
            included = max(included, finish[record.seq])
        points.append(LagPoint(i, f_p[group[0].txn_id], included))
    return LagCurve(points, '%s simulated' % protocol)


def simulate_theorem(params, theorem=TXN_THEOREM, protocols=(SIM_TXN,), workers=None, count=None):
    """Run the constructed workload on the discrete-event primary and simulate each protocol.

    Returns
    -------
    tuple
        (closed-form LagCurve, dict protocol -> simulated LagCurve)
    """
    if theorem == TXN_THEOREM:
        closed = txn_granularity_curve(params, count)
        workload = proof_txn_workload(params, len(closed))
    else:
        closed = page_granularity_curve(params, count)
        workload = proof_page_workload(params, len(closed))
    workers = workers or params.m
    result = run_primary(workload, params.sim_params())
    records = list(iter_records(result.segments))
    simulated = {}
    for protocol in protocols:
        simulated[protocol] = simulate_backup(records, result.f_p, protocol, workers, params.d,
                                              rows_per_page=params.hot_page_size)
        log.info('lag: %s theorem, %s protocol, %d txns, final lag %d, slope %s', theorem, protocol,
                 len(closed), simulated[protocol].final_lag(), simulated[protocol].slope())
    return closed, simulated
