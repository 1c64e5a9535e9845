"""End-to-end replication experiments.

   Functions
   ---------
   run_experiment
     Primary, log and backup protocol for one workload; returns a RunReport.
   emit_csv, emit_summary
     Per transaction CSV and human readable summary of a RunReport.
   sweep
     Relative throughput over inserts-per-txn or district count, median of repeated runs.
   measure_scheduler_throughput
     Offline replay of a stored log.
"""

import bisect
import csv
import dataclasses
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from clonecc import log
from clonecc.backup import ReplayTimeoutError
from clonecc.backup_c5_txnchain import BackupC5TxnChain
from clonecc.backup_c5_watermark import BackupC5Watermark
from clonecc.backup_rowqueue import BackupPageGranularity, BackupRowQueue
from clonecc.backup_single import BackupSingle
from clonecc.backup_txn import BackupTxnGranularity
from clonecc.lag_model import SIM_PROTOCOL_OF, TheoremParams, simulate_backup
from clonecc.mpc import PrefixOracle, check_final_convergence, check_run
from clonecc.mvstore import Store
from clonecc.primary import DISCRETE, MODES, REAL, PrimaryEngine, SimParams
from clonecc.replog import DEFAULT_SEGMENT_CAPACITY, iter_records, txn_groups
from clonecc.snapshot import ReadSession
from clonecc.util import ConfigurationError, summarize
from clonecc.workload import WorkloadConfig, gen_workload, hot_keys, written_keys

BACKUPS = {
    'c5-watermark': BackupC5Watermark,
    'c5-txnchain': BackupC5TxnChain,
    'c5-rowqueue': BackupRowQueue,
    'single': BackupSingle,
    'txn-gran': BackupTxnGranularity,
    'page-gran': BackupPageGranularity,
}

CSV_HEADER = ['txn_index', 'f_p_ns', 'f_b_ns', 'lag_ns']

# keys no transaction writes; point queries on them must read nothing
MISSING_TABLE = 99

LAG_CEILING_TICKS = 50

INSERTS_AXIS = 'inserts'
DISTRICTS_AXIS = 'districts'
SWEEP_AXES = {INSERTS_AXIS: 'inserts_per_txn', DISTRICTS_AXIS: 'hot_rows'}


@dataclass
class ExperimentSettings:
    """Everything about a run that is not the workload or the cost model."""
    mode: str = DISCRETE
    workers: int = 4
    segment_size: int = DEFAULT_SEGMENT_CAPACITY
    snapshot_interval_s: float = 0.010
    rows_per_page: int = 64
    initial_estimate: int = 64
    prune_edges: bool = True
    chaos: bool = False
    read_clients: int = 0
    reads_per_txn: int = 1
    duration_s: float = 0
    trim: float = 0.1
    periods: int = 3
    replay_timeout_s: float = 120.0
    time_unit_s: float = 1e-6
    lag_ceiling_s: float = 0
    ramp_interval_s: float = 0

    def validate(self):
        if self.mode not in MODES:
            raise ConfigurationError('mode must be one of %s, got %r' % (MODES, self.mode))
        if self.workers < 1:
            raise ConfigurationError('workers must be >= 1, got %r' % self.workers)
        if not 0.0 <= self.trim < 0.5:
            raise ConfigurationError('trim must be in [0, 0.5), got %r' % self.trim)
        if self.periods < 1:
            raise ConfigurationError('periods must be >= 1, got %r' % self.periods)
        if self.lag_ceiling_s < 0 or self.ramp_interval_s < 0:
            raise ConfigurationError('lag ceiling and ramp interval must be >= 0')
        if self.snapshot_interval_s <= 0:
            raise ConfigurationError('snapshot interval must be > 0, got %r' % self.snapshot_interval_s)
        return self

    def lag_ceiling(self):
        """Largest acceptable lag in seconds, LAG_CEILING_TICKS snapshot intervals unless set."""
        return self.lag_ceiling_s or LAG_CEILING_TICKS * self.snapshot_interval_s


@dataclass
class RunReport:
    protocol: str
    workload: str
    mode: str
    workers: int = 0
    run_id: str = ''
    txn_count: int = 0
    write_count: int = 0
    primary_throughput: float = 0.0
    backup_throughput: float = 0.0
    relative_throughput: float = 0.0
    read_throughput: float = 0.0
    read_txns: int = 0
    lag: dict = field(default_factory=dict)
    lag_periods: list = field(default_factory=list)
    # (txn_index, f_p, f_b) for every transaction in log order
    points: list = field(default_factory=list)
    window: tuple = (0, 0)
    mpc_passed: bool = True
    violations: int = 0
    converged: bool = True
    diverged: bool = False
    divergent_rows: int = 0
    diagnostics: dict = field(default_factory=dict)
    ticks: int = 0
    stalled_ticks: int = 0
    time_unit: str = 'ns'
    lag_ceiling: float = 0.0
    lag_bounded: bool = True

    @property
    def lags(self):
        return [f_b - f_p for _, f_p, f_b in self.points]

    @property
    def window_lags(self):
        lo, hi = self.window
        return self.lags[lo:hi]

    @property
    def passed(self):
        return self.converged and self.mpc_passed and not self.diverged


def make_backup(protocol, workers, settings=None, op_cost_us=0, record_order=True):
    """Instantiate the backup class of *protocol* with the settings it understands.

    Streaming runs pass record_order False so the store keeps no per-install list.
    """
    settings = settings or ExperimentSettings()
    try:
        cls = BACKUPS[protocol]
    except KeyError:
        raise ConfigurationError('protocol must be one of %s, got %r'
                                 % (', '.join(BACKUPS), protocol)) from None
    kwargs = dict(op_cost_us=op_cost_us, snapshot_interval_s=settings.snapshot_interval_s,
                  store=Store(track_installs=True, record_order=record_order))
    if cls is BackupC5Watermark:
        kwargs['chaos'] = settings.chaos
    elif cls is BackupC5TxnChain:
        kwargs['initial_estimate'] = settings.initial_estimate
    elif cls is BackupTxnGranularity:
        kwargs['prune_edges'] = settings.prune_edges
    elif cls is BackupPageGranularity:
        kwargs['rows_per_page'] = settings.rows_per_page
    return cls(workers, **kwargs)


def _clamp_workers(settings, params):
    if settings.workers > params.m:
        log.warning('workers=%d exceeds primary threads m=%d, using %d', settings.workers, params.m, params.m)
        return params.m
    return settings.workers


def _read_sessions(config, workload, backup, settings):
    keys = written_keys(workload) + [(MISSING_TABLE, r) for r in range(4)]
    hot = hot_keys(config)
    return [ReadSession(s, backup.store, backup.cursor, keys, settings.reads_per_txn, hot,
                        seed=config.seed * 1009 + s)
            for s in range(settings.read_clients)]


class SessionRamp():
    """Starts read sessions one at a time, one every *interval_s*.

    With interval_s 0 every session starts at once. ``stop`` stops the ramp
    and then every session it started.
    """

    def __init__(self, sessions, interval_s=0):
        self.sessions = sessions
        self.interval_s = interval_s
        self.stop_event = threading.Event()
        self.thread = None

    def start(self):
        if self.interval_s <= 0:
            for session in self.sessions:
                session.start()
            return
        self.thread = threading.Thread(target=self.run, args=(), daemon=True)
        self.thread.start()

    def run(self):
        for session in self.sessions:
            if self.stop_event.wait(self.interval_s):
                return
            session.start()
            log.debug('read client %d started', session.session_id)

    @property
    def started(self):
        return sum(1 for session in self.sessions if session.thread is not None)

    def stop(self):
        self.stop_event.set()
        if self.thread is not None:
            self.thread.join()
        for session in self.sessions:
            session.stop()


def _f_b_times(history, last_seqs):
    """Time of the first c advance covering each seq.

    Raises
    ------
    ValueError
        If some seq is above the last c of *history*.
    """
    times = [t for t, _ in history]
    cs = [c for _, c in history]
    result = []
    for seq in last_seqs:
        i = bisect.bisect_left(cs, seq)
        if i == len(cs):
            raise ValueError('seq %d is not covered by any snapshot, c reached %d' % (seq, cs[-1] if cs else 0))
        result.append(times[i])
    return result


def _window(count, trim):
    cut = int(count * trim)
    if count - 2 * cut < 2:
        return 0, count
    return cut, count - cut


def _throughput(writes, start, end, unit_s):
    span = (end - start) * unit_s
    return writes / span if span > 0 else 0.0


def _fill_measurements(report, groups, points, settings, unit_s):
    report.points = points
    report.txn_count = len(points)
    report.write_count = sum(len(g) for g in groups)
    lo, hi = _window(len(points), settings.trim)
    report.window = (lo, hi)
    if hi - lo >= 2:
        writes = sum(len(g) for g in groups[lo + 1:hi])
        report.primary_throughput = _throughput(writes, points[lo][1], points[hi - 1][1], unit_s)
        report.backup_throughput = _throughput(writes, points[lo][2], points[hi - 1][2], unit_s)
        if report.primary_throughput > 0:
            report.relative_throughput = report.backup_throughput / report.primary_throughput
    lags = report.window_lags
    report.lag = summarize(lags)
    report.lag_bounded = not lags or max(lags) <= report.lag_ceiling
    report.lag_periods = [summarize(list(chunk)) for chunk in np.array_split(np.asarray(lags), settings.periods)
                          if len(chunk)]


def _check(report, backup, segments, sessions, run_id):
    oracle = PrefixOracle.from_segments(segments)
    observations = [o for session in sessions for o in session.observations]
    result = check_run(observations, oracle, run_id)
    report.mpc_passed = result.passed
    report.violations = len(result.violations)
    if not report.diverged:
        diff = check_final_convergence(backup.store, oracle)
        report.divergent_rows = len(diff)
        report.converged = not diff
        for table_id, row_id, expected, got in diff[:5]:
            log.error('run=%s diverged table=%d row=%d expected=%r got=%r', run_id, table_id, row_id,
                      expected, got)
    else:
        report.converged = False


def _replay(backup, segments, sessions, settings, feed=True):
    """Run sessions while *backup* replays; True if the replay finished in time."""
    for session in sessions:
        session.start()
    start = time.monotonic()
    try:
        if feed:
            for segment in segments:
                backup.feed(segment)
            backup.finish()
        backup.end_replay(settings.replay_timeout_s)
        return True, {}
    except ReplayTimeoutError as error:
        log.error('%s: diverged: %s', backup.protocol, error)
        for key, value in error.diagnostics.items():
            log.error('  %-18s %s', key, value)
        return False, error.diagnostics
    finally:
        for session in sessions:
            session.stop()
        elapsed = time.monotonic() - start
        log.debug('%s: replay phase took %.3f s', backup.protocol, elapsed)


def _tick_stats(backup, report):
    ticks = backup.snapshotter.ticks if backup.snapshotter else []
    report.ticks = len(ticks)
    report.stalled_ticks = sum(1 for _, before, after, pending in ticks if pending > 0 and after == before)


def run_experiment(config, protocol, params=None, settings=None, run_id=''):
    """Run one workload through the primary and one backup protocol.

    In real mode the primary runs on threads and streams its log into the
    backup while read-only sessions query the backup; f_b of a transaction
    is the first snapshot advance covering its last write. In discrete mode
    the primary is simulated, f_b comes from the backup simulator, and the
    log is replayed by the real backup afterwards for the safety checks.

    Parameters
    ----------
    config : WorkloadConfig
    protocol : str
        Key of BACKUPS.
    params : SimParams
        m, e and d. In real mode e and d are in ``settings.time_unit_s``.
    settings : ExperimentSettings

    Returns
    -------
    RunReport
        Marked diverged when the backup does not finish within the timeout.
    """
    params = params or SimParams()
    settings = (settings or ExperimentSettings()).validate()
    if protocol not in BACKUPS:
        raise ConfigurationError('protocol must be one of %s, got %r' % (', '.join(BACKUPS), protocol))
    params.validate(discrete=(settings.mode == DISCRETE))
    workers = _clamp_workers(settings, params)
    workload = gen_workload(config, params)
    run_id = run_id or '%s-%s-%d' % (protocol, config.kind, config.seed)
    report = RunReport(protocol, config.kind, settings.mode, workers, run_id)
    log.info('run=%s: %d txns, m=%d, workers=%d, mode %s', run_id, len(workload), params.m, workers,
             settings.mode)

    if settings.mode == REAL:
        op_cost_us = params.d * settings.time_unit_s * 1e6
        backup = make_backup(protocol, workers, settings, op_cost_us, record_order=False)
        sessions = _read_sessions(config, workload, backup, settings)
        backup.begin_replay()
        engine = PrimaryEngine(params, settings.segment_size, sink=backup.feed,
                               duration_s=settings.duration_s, time_unit_s=settings.time_unit_s)
        ramp = SessionRamp(sessions, settings.ramp_interval_s)
        ramp.start()
        try:
            result = engine.run(workload, REAL)
            backup.finish()
            replay_start = time.monotonic()
            finished, diagnostics = _replay(backup, result.segments, [], settings, feed=False)
            replay_s = time.monotonic() - replay_start
        except Exception:
            backup.abort()
            raise
        finally:
            ramp.stop()
        groups = list(txn_groups(iter_records(result.segments)))
        if not finished:
            groups = [g for g in groups if g[-1].seq <= backup.cursor.c]
            log.warning('run=%s: measuring the %d transactions inside c=%d', run_id, len(groups),
                        backup.cursor.c)
        f_b = _f_b_times(backup.cursor.history, [g[-1].seq for g in groups])
        points = [(i, result.f_p[g[0].txn_id], t) for i, (g, t) in enumerate(zip(groups, f_b))]
        report.lag_ceiling = settings.lag_ceiling() * 1e9
        _fill_measurements(report, groups, points, settings, 1e-9)
        _tick_stats(backup, report)
        elapsed_s = (time.monotonic_ns() - engine.start_ns) / 1e9
    else:
        engine = PrimaryEngine(params, settings.segment_size)
        result = engine.run(workload, DISCRETE)
        groups = list(txn_groups(iter_records(result.segments)))
        records = [r for g in groups for r in g]
        curve = simulate_backup(records, result.f_p, SIM_PROTOCOL_OF[protocol], workers, params.d,
                                settings.rows_per_page)
        points = [(p.i, p.f_p, p.f_b) for p in curve.points]
        report.time_unit = 'units'
        report.lag_ceiling = settings.lag_ceiling() / settings.time_unit_s
        _fill_measurements(report, groups, points, settings, 1.0)
        backup = make_backup(protocol, workers, settings)
        sessions = _read_sessions(config, workload, backup, settings)
        backup.begin_replay()
        replay_start = time.monotonic()
        finished, diagnostics = _replay(backup, result.segments, sessions, settings)
        replay_s = elapsed_s = time.monotonic() - replay_start
        _tick_stats(backup, report)

    report.diverged = not finished
    report.diagnostics = diagnostics
    report.read_txns = sum(session.txn_count for session in sessions)
    report.read_throughput = report.read_txns / elapsed_s if elapsed_s > 0 else 0.0
    _check(report, backup, result.segments, sessions, run_id)
    log.info('run=%s: relative throughput %.3f, replay %.3f s, mpc %s, converged %s', run_id,
             report.relative_throughput, replay_s, 'pass' if report.mpc_passed else 'FAIL',
             report.converged)
    return report


def emit_csv(report, path):
    """Write txn_index, f_p, f_b and lag of every transaction; header only for an empty report."""
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(CSV_HEADER)
        for i, f_p, f_b in report.points:
            writer.writerow([i, f_p, f_b, f_b - f_p])
    log.info('wrote %d transactions to %s', len(report.points), path)


def _format_stats(stats, unit):
    if not stats:
        return 'n/a'
    return 'min {min:.0f}  q1 {q1:.1f}  median {median:.1f}  q3 {q3:.1f}  max {max:.0f} '.format(**stats) + unit


def emit_summary(report):
    """Log a summary of *report* and return it as text."""
    unit = 'ns' if report.time_unit == 'ns' else 'time units'
    rate = 'writes/s' if report.time_unit == 'ns' else 'writes/unit'
    lines = [
        'protocol             %s' % report.protocol,
        'workload             %s (%s mode, %d workers)' % (report.workload, report.mode, report.workers),
        'transactions         %d (%d writes), window %d..%d' % (report.txn_count, report.write_count,
                                                                report.window[0], report.window[1]),
        'primary throughput   %.4g %s' % (report.primary_throughput, rate),
        'backup throughput    %.4g %s' % (report.backup_throughput, rate),
        'relative throughput  %.3f' % report.relative_throughput,
        'read-only txns       %d (%.4g txn/s)' % (report.read_txns, report.read_throughput),
        'lag                  %s' % _format_stats(report.lag, unit),
    ]
    for k, stats in enumerate(report.lag_periods):
        lines.append('  period %d           %s' % (k + 1, _format_stats(stats, unit)))
    lines.append('lag ceiling          %.4g %s (%s)' % (report.lag_ceiling, unit,
                                                     'held' if report.lag_bounded else 'EXCEEDED'))
    lines.append('snapshot ticks       %d (%d stalled)' % (report.ticks, report.stalled_ticks))
    lines.append('mpc                  %s (%d violations)' % ('pass' if report.mpc_passed else 'FAIL',
                                                           report.violations))
    if report.diverged:
        lines.append('convergence          DIVERGED %s' % report.diagnostics)
    else:
        lines.append('convergence          %s' % ('pass' if report.converged
                                                  else 'FAIL (%d rows)' % report.divergent_rows))
    for line in lines:
        log.info(line)
    return '\n'.join(lines)


def sweep(config, protocol, params=None, settings=None, values=(1, 4, 8, 16, 64), runs=5, axis=INSERTS_AXIS):
    """Relative throughput along one workload axis, median of *runs* runs per point.

    The ``inserts`` axis varies inserts_per_txn; the ``districts`` axis
    varies hot_rows, the district count of micro_orderentry, so fewer values
    mean more contention. txn-gran is run with and without edge pruning and
    the better of the two medians is reported.

    Returns
    -------
    list of tuple
        (axis value, median relative throughput, list of RunReport)

    Raises
    ------
    ConfigurationError
        For an unknown axis or a point that is not a valid workload.
    """
    try:
        field_name = SWEEP_AXES[axis]
    except KeyError:
        raise ConfigurationError('sweep axis must be one of %s, got %r' % (', '.join(SWEEP_AXES), axis)) from None
    settings = settings or ExperimentSettings()
    variants = [True, False] if protocol == 'txn-gran' else [settings.prune_edges]
    results = []
    for value in values:
        point_config = dataclasses.replace(config, **{field_name: value}).validate()
        best = None
        for prune in variants:
            reports = []
            for run in range(runs):
                point = dataclasses.replace(point_config, seed=config.seed + run)
                variant = dataclasses.replace(settings, prune_edges=prune)
                reports.append(run_experiment(point, protocol, params, variant,
                                              run_id='%s-%s%d-r%d' % (protocol, axis, value, run)))
            median = float(np.median([r.relative_throughput for r in reports]))
            if best is None or median > best[1]:
                best = (value, median, reports)
        log.info('sweep %s: %s=%d relative throughput %.3f', protocol, field_name, value, best[1])
        results.append(best)
    return results


def measure_scheduler_throughput(segments, protocol, workers=1, settings=None):
    """Replay a complete log offline and return installed writes per second."""
    backup = make_backup(protocol, workers, settings)
    writes = sum(len(segment.records) for segment in segments)
    start = time.monotonic()
    backup.replay(segments, (settings or ExperimentSettings()).replay_timeout_s)
    elapsed = time.monotonic() - start
    throughput = writes / elapsed if elapsed > 0 else 0.0
    log.info('%s: %d writes replayed offline in %.3f s, %.0f writes/s', protocol, writes, elapsed, throughput)
    return throughput, backup


def workload_config_from_args(args):
    return WorkloadConfig(kind=args.workload, inserts_per_txn=args.inserts_per_txn, hot_rows=args.hot_rows,
                          optimized=args.optimized, txn_count=args.txn_count,
                          arrival_interval=args.arrival_interval, seed=args.seed,
                          neworder_fraction=args.neworder_fraction, value_size=args.value_size).validate()


def sim_params_from_args(args):
    return SimParams(m=args.primary_threads, e=args.primary_op_cost, d=args.backup_op_cost)


def settings_from_args(args):
    return ExperimentSettings(mode=args.mode, workers=args.workers, segment_size=args.segment_size,
                              snapshot_interval_s=args.snapshot_interval_ms / 1000.0,
                              rows_per_page=args.rows_per_page, initial_estimate=args.initial_estimate,
                              prune_edges=not args.full_graph, chaos=args.chaos,
                              read_clients=args.read_clients, reads_per_txn=args.reads_per_txn,
                              duration_s=args.duration, trim=args.trim, periods=args.periods,
                              replay_timeout_s=args.replay_timeout,
                              lag_ceiling_s=args.lag_ceiling_ms / 1000.0,
                              ramp_interval_s=args.ramp_interval_ms / 1000.0).validate()


def theorem_params_from_args(args):
    return TheoremParams(m=args.primary_threads, e=args.primary_op_cost, d=args.backup_op_cost,
                         n=args.writes_per_txn, L=args.lag_bound, hot_page_size=args.hot_page_size)
