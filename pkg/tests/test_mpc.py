import pytest

from clonecc.mpc import (Observation, PrefixOracle, check_final_convergence, check_monotonic, check_run,
                         check_state, serial_replay, state_digest)
from clonecc.mvstore import Store

from conftest import make_log, random_log, records_of


@pytest.fixture
def oracle():
    # T writes x and y, U writes x and y again
    return PrefixOracle(records_of(make_log([[(0, 1, b'xT'), (0, 2, b'yT')],
                                             [(0, 1, b'xU'), (0, 2, b'yU')]])))


def observe(c, **reads):
    keys = {'x': (0, 1), 'y': (0, 2), 'z': (0, 3)}
    return Observation(0, c, [(keys[name], value) for name, value in reads.items()])


def test_prefix_state_passes(oracle):
    assert check_state(observe(2, x=b'xT', y=b'yT'), oracle).passed
    assert check_state(observe(4, x=b'xU', y=b'yU', z=None), oracle).passed
    assert check_state(observe(0, x=None), oracle).passed


def test_mixed_state_is_an_atomicity_violation(oracle):
    result = check_state(observe(4, x=b'xU', y=b'yT'), oracle)
    assert [(v.kind, v.row_id) for v in result.violations] == [('state', 2)]


def test_future_read_is_a_violation(oracle):
    assert not check_state(observe(2, x=b'xU'), oracle).passed


def test_c_inside_a_transaction_is_a_violation(oracle):
    result = check_state(observe(3), oracle)
    assert [v.kind for v in result.violations] == ['not-boundary']


@pytest.mark.parametrize('cs, passed', [((3, 3, 7), True), ((7, 3), False), ((), True)])
def test_monotonic(cs, passed):
    sessions = {1: [Observation(1, c, []) for c in cs]}
    assert check_monotonic(sessions).passed == passed


def test_check_run_groups_by_session(oracle):
    observations = [Observation(1, 4, []), Observation(2, 2, []), Observation(1, 2, [])]
    result = check_run(observations, oracle, run_id='r1')
    assert [(v.kind, v.session_id) for v in result.violations] == [('monotonic', 1)]
    assert 'run=r1 kind=monotonic session=1' in result.violations[0].line('r1')


def test_final_convergence_reports_divergent_rows(oracle):
    store = Store()
    for record in oracle.records:
        store.install(record.table_id, record.row_id, record.seq, record.value)
    assert check_final_convergence(store, oracle) == []
    store.install(0, 2, 9, b'corrupt')
    assert check_final_convergence(store, oracle) == [(0, 2, b'yU', b'corrupt')]


def test_empty_log():
    oracle = PrefixOracle([])
    assert oracle.final_state == {}
    assert oracle.last_seq == 0
    assert check_final_convergence(Store(), oracle) == []


@pytest.mark.parametrize('seed', range(10))
def test_boundary_digests_match_replayed_states(seed):
    records = records_of(random_log(seed))
    oracle = PrefixOracle(records)
    assert oracle.final_state == serial_replay(records)
    for boundary in oracle.boundaries:
        assert state_digest(oracle.state_at(boundary)) == oracle.digest_at(boundary)
    # replaying again gives the same digests
    assert PrefixOracle(records).boundary_digests == oracle.boundary_digests


def test_deleted_row_reads_absent():
    oracle = PrefixOracle(records_of(make_log([[(0, 1, b'a')], [(0, 1, None)]])))
    assert oracle.value_at(0, 1, 1) == b'a'
    assert oracle.value_at(0, 1, 2) is None
    assert oracle.digest_at(2) == oracle.digest_at(0) == 0
