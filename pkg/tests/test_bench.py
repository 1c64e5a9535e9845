import csv

import pytest

from clonecc.backup_rowqueue import BackupPageGranularity
from clonecc.bench import (CSV_HEADER, DISTRICTS_AXIS, ExperimentSettings, RunReport, SessionRamp, _f_b_times, _window,
                           emit_csv, emit_summary, make_backup, measure_scheduler_throughput, run_experiment,
                           sweep)
from clonecc.mpc import serial_replay
from clonecc.mvstore import Store
from clonecc.primary import SimParams, run_primary
from clonecc.snapshot import ReadSession, SnapshotCursor
from clonecc.util import ConfigurationError, quartiles, summarize
from clonecc.workload import WorkloadConfig, gen_workload

from conftest import records_of, wait_until

FAST_SETTINGS = dict(snapshot_interval_s=0.001, replay_timeout_s=60)


def test_quartiles_interpolate():
    assert quartiles([1, 2, 3, 4]) == (1.75, 2.5, 3.25)
    assert summarize([]) == {}
    assert summarize([4, 1, 3, 2])['max'] == 4.0


def test_window_trims_both_ends():
    assert _window(100, 0.1) == (10, 90)
    assert _window(3, 0.4) == (0, 3)
    assert _window(0, 0.1) == (0, 0)


def test_f_b_is_first_snapshot_covering_the_transaction():
    history = [(10, 2), (20, 5)]
    assert _f_b_times(history, [1, 2, 3, 5]) == [10, 10, 20, 20]
    with pytest.raises(ValueError, match='seq 6'):
        _f_b_times(history, [6])
    with pytest.raises(ValueError):
        _f_b_times([], [1])


def test_empty_report_writes_header_only(tmp_path):
    path = tmp_path / 'lag.csv'
    emit_csv(RunReport('single', 'adversarial', 'discrete'), str(path))
    with open(path, newline='') as f:
        assert list(csv.reader(f)) == [CSV_HEADER]


def test_summary_names_the_protocol():
    report = RunReport('c5-txnchain', 'adversarial', 'discrete', points=[(0, 1, 3), (1, 2, 5)])
    text = emit_summary(report)
    assert 'c5-txnchain' in text
    assert report.lags == [2, 3]


def test_make_backup():
    backup = make_backup('page-gran', 2, ExperimentSettings(rows_per_page=8))
    assert isinstance(backup, BackupPageGranularity)
    assert backup.page_map.rows_per_page == 8
    with pytest.raises(ConfigurationError):
        make_backup('quorum', 2)


@pytest.mark.parametrize('settings', [
    ExperimentSettings(mode='warp'),
    ExperimentSettings(workers=0),
    ExperimentSettings(trim=0.5),
    ExperimentSettings(periods=0),
    ExperimentSettings(snapshot_interval_s=0),
])
def test_invalid_settings(settings):
    with pytest.raises(ConfigurationError):
        settings.validate()


def test_discrete_runs_are_deterministic():
    config = WorkloadConfig(kind='adversarial', inserts_per_txn=2, txn_count=40, seed=1)
    settings = ExperimentSettings(workers=4, read_clients=1, **FAST_SETTINGS)
    first = run_experiment(config, 'txn-gran', SimParams(m=4, e=2, d=1), settings)
    second = run_experiment(config, 'txn-gran', SimParams(m=4, e=2, d=1), settings)
    assert first.points == second.points
    assert first.txn_count == 40
    assert first.passed and second.passed


def test_workers_are_clamped_to_primary_threads():
    config = WorkloadConfig(kind='insert_only', inserts_per_txn=2, txn_count=10)
    report = run_experiment(config, 'c5-watermark', SimParams(m=2, e=2, d=1),
                            ExperimentSettings(workers=8, **FAST_SETTINGS))
    assert report.workers == 2
    assert report.passed


def test_discrete_sweep_trend():
    config = WorkloadConfig(kind='adversarial', txn_count=60)
    params = SimParams(m=4, e=2, d=1)
    settings = ExperimentSettings(workers=4, **FAST_SETTINGS)
    txn = sweep(config, 'txn-gran', params, settings, values=(1, 4, 8), runs=1)
    relative = [r for _, r, _ in txn]
    assert relative[0] > 0.85
    for earlier, later in zip(relative, relative[1:]):
        assert later <= earlier + 0.05
    assert relative[-1] < 0.7
    c5 = sweep(config, 'c5-watermark', params, settings, values=(1, 8), runs=1)
    assert all(r > 0.9 for _, r, _ in c5)
    assert all(report.passed for _, _, reports in txn + c5 for report in reports)


@pytest.mark.parametrize('protocol', ['c5-watermark', 'c5-txnchain', 'txn-gran'])
def test_real_run_with_read_clients(protocol):
    config = WorkloadConfig(kind='micro_orderentry', inserts_per_txn=3, hot_rows=2, txn_count=100, seed=2)
    settings = ExperimentSettings(mode='real', workers=3, read_clients=2, reads_per_txn=2, **FAST_SETTINGS)
    report = run_experiment(config, protocol, SimParams(m=4, e=0, d=0), settings)
    assert report.passed
    assert report.txn_count == 100
    assert all(f_b >= f_p for _, f_p, f_b in report.points)


def test_offline_scheduler_throughput():
    result = run_primary(gen_workload(WorkloadConfig(kind='adversarial', inserts_per_txn=4, txn_count=50)),
                         SimParams())
    throughput, backup = measure_scheduler_throughput(result.segments, 'c5-rowqueue', 2,
                                                      ExperimentSettings(**FAST_SETTINGS))
    assert throughput > 0
    assert backup.store.latest_state() == serial_replay(records_of(result.segments))


def test_lag_ceiling_defaults_to_fifty_ticks():
    assert ExperimentSettings(snapshot_interval_s=0.010).lag_ceiling() == pytest.approx(0.5)
    assert ExperimentSettings(lag_ceiling_s=0.2).lag_ceiling() == pytest.approx(0.2)
    with pytest.raises(ConfigurationError):
        ExperimentSettings(lag_ceiling_s=-1).validate()
    with pytest.raises(ConfigurationError):
        ExperimentSettings(ramp_interval_s=-1).validate()


def test_discrete_report_carries_the_lag_ceiling():
    config = WorkloadConfig(kind='insert_only', inserts_per_txn=2, txn_count=20)
    report = run_experiment(config, 'c5-watermark', SimParams(m=4, e=2, d=1), ExperimentSettings(**FAST_SETTINGS))
    # 50 ticks of 1 ms in microsecond units
    assert report.lag_ceiling == pytest.approx(50000)
    assert report.lag_bounded
    assert 'lag ceiling' in emit_summary(report)
    growing = run_experiment(WorkloadConfig(kind='adversarial', inserts_per_txn=8, txn_count=20), 'txn-gran',
                             SimParams(m=4, e=2, d=1), ExperimentSettings(lag_ceiling_s=5e-6, **FAST_SETTINGS))
    assert growing.lag_ceiling == pytest.approx(5)
    assert not growing.lag_bounded
    assert growing.passed


def test_streaming_backups_keep_no_install_order():
    assert make_backup('single', 1).store.record_order
    backup = make_backup('c5-watermark', 2, record_order=False)
    assert not backup.store.record_order
    assert backup.store.track_installs


def test_session_ramp_starts_clients_one_at_a_time():
    store = Store(track_installs=True)
    cursor = SnapshotCursor()
    sessions = [ReadSession(i, store, cursor, [(0, 1)], seed=i) for i in range(3)]
    ramp = SessionRamp(sessions, interval_s=0.02)
    ramp.start()
    try:
        assert ramp.started < 3
        wait_until(lambda: ramp.started == 3)
        wait_until(lambda: all(session.txn_count > 0 for session in sessions))
    finally:
        ramp.stop()
    assert all(not session.thread.is_alive() for session in sessions)
    at_once = SessionRamp([ReadSession(9, store, cursor, [(0, 1)])])
    at_once.start()
    assert at_once.started == 1
    at_once.stop()


def test_district_sweep():
    config = WorkloadConfig(kind='micro_orderentry', inserts_per_txn=2, txn_count=40)
    results = sweep(config, 'c5-watermark', SimParams(m=4, e=2, d=1), ExperimentSettings(**FAST_SETTINGS),
                    values=(10, 1), runs=1, axis=DISTRICTS_AXIS)
    assert [value for value, _, _ in results] == [10, 1]
    assert all(median > 0 for _, median, _ in results)
    assert all(report.passed for _, _, reports in results for report in reports)
    assert results[1][2][0].run_id == 'c5-watermark-districts1-r0'


def test_sweep_rejects_bad_axis_and_values():
    config = WorkloadConfig(kind='micro_orderentry', txn_count=4)
    with pytest.raises(ConfigurationError, match='axis'):
        sweep(config, 'single', values=(1,), runs=1, axis='warehouses')
    with pytest.raises(ConfigurationError, match='hot_rows'):
        sweep(config, 'single', values=(0,), runs=1, axis=DISTRICTS_AXIS)


@pytest.mark.slow
def test_adversarial_sweep_thresholds():
    config = WorkloadConfig(kind='adversarial', txn_count=200)
    params = SimParams(m=4, e=2, d=1)
    settings = ExperimentSettings(workers=4, **FAST_SETTINGS)
    inserts = (1, 4, 8, 16, 64)
    txn = [median for _, median, _ in sweep(config, 'txn-gran', params, settings, values=inserts, runs=5)]
    for earlier, later in zip(txn, txn[1:]):
        assert later <= earlier + 0.02, txn
    assert txn[-1] < 0.6
    c5 = [median for _, median, _ in sweep(config, 'c5-watermark', params, settings, values=inserts, runs=5)]
    assert all(median >= 0.95 for median in c5), c5


@pytest.mark.slow
def test_blocking_snapshotter_keeps_lag_under_the_ceiling():
    config = WorkloadConfig(kind='insert_only', inserts_per_txn=4, txn_count=1500, arrival_interval=2000)
    # 16 read clients join one by one while the primary runs for about 3 s
    settings = ExperimentSettings(mode='real', workers=4, read_clients=16, snapshot_interval_s=0.010,
                                  ramp_interval_s=0.15)
    report = run_experiment(config, 'c5-txnchain', SimParams(m=4, e=2, d=1), settings)
    assert report.passed
    assert report.lag_ceiling == pytest.approx(0.5e9)
    assert report.lag_bounded, report.lag
    assert max(report.window_lags) <= report.lag_ceiling
    assert report.ticks > 0
    assert report.stalled_ticks == 0
