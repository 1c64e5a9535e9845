import random

import pytest

from clonecc.backup import ReplayTimeoutError, is_safe, preprocess_segment
from clonecc.backup_c5_txnchain import BackupC5TxnChain, replay_txnchain
from clonecc.backup_c5_watermark import BackupC5Watermark, replay_watermark
from clonecc.backup_rowqueue import BackupRowQueue
from clonecc.backup_single import BackupSingle
from clonecc.lag_model import SIM_PROTOCOL_OF, simulate_backup
from clonecc.mpc import Observation, PrefixOracle, check_final_convergence, check_run, serial_replay
from clonecc.mvstore import MergeTooEarlyError, OrderingViolationError, Store
from clonecc.ordering import chain_predecessors, row_key
from clonecc.primary import SimParams, run_primary
from clonecc.replog import LogRecord, OpKind
from clonecc.snapshot import (BlockingSnapshotter, PrefixSnapshotter, ReadSession, SnapshotCursor,
                              WatermarkSnapshotter, align_to_boundary, read_only_txn,
                              snapshotter_advance_watermark)
from clonecc.util import ConfigurationError
from clonecc.workload import WorkloadConfig, gen_workload

from conftest import FAST, make_log, random_log, records_of

C5_BACKUPS = [BackupC5Watermark, BackupC5TxnChain, BackupRowQueue]


def last_boundary(records):
    return records[-1].seq if records else 0


@pytest.mark.parametrize('backup_class', C5_BACKUPS)
@pytest.mark.parametrize('workers', [1, 3])
@pytest.mark.parametrize('seed', range(12))
def test_c5_replay_converges(backup_class, workers, seed):
    segments = random_log(seed)
    records = records_of(segments)
    backup = backup_class(workers, **FAST)
    store = backup.replay(segments, timeout=30)
    assert store.latest_state() == serial_replay(records)
    assert store.installed_prefix == last_boundary(records)
    assert backup.cursor.c == last_boundary(records)


@pytest.mark.parametrize('seed', range(10))
def test_both_c5_variants_produce_identical_stores(seed):
    segments = random_log(seed, hot_share=0.8)
    watermark = replay_watermark(segments, workers=4, **FAST)
    txnchain = replay_txnchain(segments, workers=4, **FAST)
    assert watermark.store.latest_state() == txnchain.store.latest_state()
    for key in watermark.store.keys():
        assert watermark.store.chain_seqs(*key) == txnchain.store.chain_seqs(*key)


def test_empty_log(empty_log):
    for backup_class in C5_BACKUPS:
        backup = backup_class(2, **FAST)
        assert backup.replay(empty_log, timeout=5).latest_state() == {}
        assert backup.cursor.c == 0


def replay_with_readers(backup, segments, sessions, timeout=30):
    """Replay *segments* while *sessions* read, then check the observations against the serial order."""
    backup.begin_replay()
    for session in sessions:
        session.start()
    try:
        for segment in segments:
            backup.feed(segment)
        backup.finish()
        backup.end_replay(timeout=timeout)
    finally:
        for session in sessions:
            session.stop()
    oracle = PrefixOracle(records_of(segments))
    observations = [o for session in sessions for o in session.observations]
    assert observations
    assert check_final_convergence(backup.store, oracle) == []
    return check_run(observations, oracle)


@pytest.mark.parametrize('backup_class', C5_BACKUPS)
def test_reads_during_replay_are_prefix_consistent(backup_class):
    segments = random_log(7, capacity=4, max_txns=200, hot_share=0.7)
    keys = sorted({r.key for r in records_of(segments)})
    backup = backup_class(3, **FAST)
    sessions = [ReadSession(i, backup.store, backup.cursor, keys, reads_per_txn=2, seed=i) for i in range(2)]
    assert replay_with_readers(backup, segments, sessions).passed


def test_preprocess_links_previous_row_write(three_txn_log):
    last_writer = {}
    for segment in three_txn_log:
        preprocess_segment(segment, last_writer)
        assert segment.preprocessed
    assert [r.prev_seq for r in records_of(three_txn_log)] == [0, 0, 1, 2]
    assert last_writer == {(0, 1): 3, (0, 2): 4}


@pytest.mark.parametrize('seed', range(6))
def test_preprocess_agrees_with_row_chains(seed):
    segments = random_log(seed)
    records = records_of(segments)
    expected = chain_predecessors(records, row_key)
    last_writer = {}
    for segment in segments:
        preprocess_segment(segment, last_writer)
    assert {r.seq: r.prev_seq for r in records} == expected


def test_snapshotter_error_stops_the_replay(monkeypatch):
    def broken_advance(self):
        raise RuntimeError('snapshotter broke')

    monkeypatch.setattr(PrefixSnapshotter, 'advance', broken_advance)
    backup = BackupSingle(snapshot_interval_s=0.001, idle_wait_s=0.0005)
    backup.begin_replay()
    assert backup.stop_event.wait(5)
    assert isinstance(backup.error, RuntimeError)
    backup.finish()
    with pytest.raises(RuntimeError, match='snapshotter broke'):
        backup.end_replay(timeout=5)
    assert not backup.replay_is_running


@pytest.mark.parametrize('inserts_per_txn', [8, 16])
def test_workers_shorten_the_adversarial_makespan(inserts_per_txn):
    config = WorkloadConfig(kind='adversarial', inserts_per_txn=inserts_per_txn, txn_count=40)
    result = run_primary(gen_workload(config), SimParams(m=4, e=2, d=1))
    records = records_of(result.segments)
    protocol = SIM_PROTOCOL_OF['c5-watermark']
    makespan = {workers: simulate_backup(records, result.f_p, protocol, workers, d=1).points[-1].f_b
                for workers in (1, 4)}
    # one worker installs every write back to back
    assert makespan[1] >= len(records)
    assert makespan[4] < makespan[1]


def test_is_safe():
    store = Store()
    store.install(0, 1, 3, b'a')
    record = LogRecord(5, 1, 0, 1, OpKind.UPDATE, b'b', prev_seq=3)
    assert is_safe(record, store)
    assert not is_safe(LogRecord(6, 1, 0, 1, OpKind.UPDATE, b'c', prev_seq=5), store)
    store.install(0, 1, 7, b'd')
    with pytest.raises(OrderingViolationError):
        is_safe(record, store)


def test_cursor_only_moves_forward():
    ticks = iter(range(100))
    cursor = SnapshotCursor(clock=lambda: next(ticks))
    cursor.set_next(4)
    cursor.advance_c(4)
    assert cursor.history == [(0, 4)]
    with pytest.raises(ValueError):
        cursor.set_next(3)
    with pytest.raises(ValueError):
        cursor.advance_c(5)
    with pytest.raises(ValueError):
        cursor.advance_c(2)


def test_align_to_boundary():
    assert align_to_boundary([2, 5, 9], 1) == 0
    assert align_to_boundary([2, 5, 9], 5) == 5
    assert align_to_boundary([2, 5, 9], 8) == 5
    assert align_to_boundary([], 8) == 0


def test_watermark_snapshot_follows_slowest_worker():
    backup = BackupC5Watermark(2)
    backup.boundaries = [2, 5, 9]
    backup.watermarks[0].publish(8)
    backup.watermarks[1].publish(4)
    assert snapshotter_advance_watermark(backup.cursor, backup.watermarks, backup.boundaries) == 2
    backup.watermarks[1].publish(3)
    assert backup.watermarks[1].c_prime == 4
    backup.watermarks[1].publish(20)
    assert snapshotter_advance_watermark(backup.cursor, backup.watermarks, backup.boundaries) == 5


def test_blocking_snapshotter_needs_positive_estimate():
    with pytest.raises(ConfigurationError):
        BlockingSnapshotter(BackupC5TxnChain(), initial_estimate=0)
    with pytest.raises(ConfigurationError):
        BlockingSnapshotter(BackupC5TxnChain(), smoothing=0)


def test_blocking_snapshotter_admits_up_to_target():
    backup = BackupC5TxnChain(1, initial_estimate=3)
    snapshotter = backup.make_snapshotter()
    assert snapshotter.target == 3
    assert snapshotter.admit(3)
    snapshotter.stop()
    assert not snapshotter.admit(4)


def test_blocking_snapshots_stay_bounded():
    segments = random_log(11, capacity=8, max_txns=300, hot_share=0.5)
    records = records_of(segments)
    backup = replay_txnchain(segments, workers=4, initial_estimate=8, **FAST)
    assert backup.cursor.c == last_boundary(records)
    # every snapshot end is a transaction boundary
    boundaries = {r.seq for r in records if r.last_in_txn}
    assert set(backup.cursor.n_history) <= boundaries
    assert all(after >= before for _, before, after, _ in backup.snapshotter.ticks)


def test_unsafe_merge_is_refused():
    segments = make_log([[(0, 1)], [(0, 2)]], capacity=1)
    backup = BackupC5Watermark(1)
    for segment in segments:
        backup.schedule_segment(segment)
    backup.watermarks[0].publish(2)
    with pytest.raises(MergeTooEarlyError):
        WatermarkSnapshotter(backup).tick()
    assert backup.cursor.c == 0


def test_chaos_snapshot_is_caught_by_the_checker():
    segments = make_log([[(0, 1, b'a')], [(0, 1, b'b'), (0, 2, b'c')]], capacity=1)
    records = records_of(segments)
    backup = BackupC5Watermark(1, chaos=True)
    for segment in segments:
        backup.schedule_segment(segment)
    # chaos publishes on receipt, before anything is installed
    backup.watermarks[0].publish(backup.dispatched_upto)
    WatermarkSnapshotter(backup, verify=False).tick()
    assert backup.cursor.c == 3
    backup.install(records[0], strict=False)
    c, values = read_only_txn(backup.store, backup.cursor, [(0, 1), (0, 2)])
    observation = Observation(0, c, list(zip([(0, 1), (0, 2)], values)))
    result = check_run([observation], PrefixOracle(records))
    assert not result.passed
    assert {v.kind for v in result.violations} == {'state'}


@pytest.mark.slow
def test_chaos_replay_still_installs_everything():
    segments = random_log(5, capacity=3, max_txns=300, hot_share=0.9)
    backup = replay_watermark(segments, workers=4, chaos=True, **FAST)
    assert backup.store.install_count == len(records_of(segments))


def test_replay_timeout_reports_diagnostics():
    segments = make_log([[(0, 1)], [(0, 1)]], capacity=1)
    backup = BackupC5TxnChain(1, initial_estimate=1, snapshot_interval_s=60, idle_wait_s=0.001)
    backup.begin_replay()
    for segment in segments:
        backup.feed(segment)
    backup.finish()
    with pytest.raises(ReplayTimeoutError) as excinfo:
        backup.end_replay(timeout=0.2)
    assert excinfo.value.diagnostics['installed_prefix'] == 1
    assert not backup.replay_is_running


@pytest.mark.slow
@pytest.mark.parametrize('seed', range(3))
def test_long_logs_converge(seed):
    segments = random_log(seed, capacity=64, max_txns=1000, max_writes=16, hot_share=0.3)
    records = records_of(segments)
    expected = serial_replay(records)
    for backup_class in C5_BACKUPS:
        assert backup_class(8, **FAST).replay(segments, timeout=120).latest_state() == expected


def contended_log(seed, txn_count):
    """Transactions of 1 to 8 writes, half of them to one of four hot rows."""
    rng = random.Random(seed)
    txns = [[(0, rng.randrange(4)) if rng.random() < 0.5 else (1, txn_id * 8 + k)
             for k in range(rng.randint(1, 8))]
            for txn_id in range(txn_count)]
    return make_log(txns, capacity=256)


def readers(backup, segments, clients, seed):
    hot = [(0, row_id) for row_id in range(4)]
    cold = sorted({r.key for r in records_of(segments) if r.table_id == 1})
    return [ReadSession(i, backup.store, backup.cursor, cold, hot_keys=hot, seed=seed * 100 + i)
            for i in range(clients)]


@pytest.mark.slow
@pytest.mark.parametrize('backup_class', [BackupC5Watermark, BackupC5TxnChain])
def test_large_runs_with_many_readers_have_no_violations(backup_class):
    for seed in range(20):
        segments = contended_log(seed, 25000)
        assert len(records_of(segments)) >= 100000
        backup = backup_class(4, **FAST)
        result = replay_with_readers(backup, segments, readers(backup, segments, 16, seed), timeout=300)
        assert result.passed, 'seed %d: %s' % (seed, result.violations[:3])


@pytest.mark.slow
def test_checker_flags_chaos_runs():
    flagged = 0
    for seed in range(20):
        segments = contended_log(seed, 25000)
        # slow installs keep published watermarks ahead of the installed writes
        backup = BackupC5Watermark(4, chaos=True, op_cost_us=20, **FAST)
        if not replay_with_readers(backup, segments, readers(backup, segments, 16, seed), timeout=300).passed:
            flagged += 1
    assert flagged >= 18
