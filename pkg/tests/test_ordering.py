import random

import pytest

from clonecc.ordering import (PAGE, ROW, SINGLE, TXN, PageMap, TxnDependencyGraph, chain_predecessors,
                              constraint_pairs, is_permitted, key_function, permitted_orders, respects_row_order)
from clonecc.primary import UPDATE, Op, SimParams, TxnSpec, run_primary
from clonecc.replog import txn_groups
from clonecc.util import ConfigurationError

from conftest import make_log, records_of


def small_txns(seed, max_records=8):
    rng = random.Random(seed)
    txns = []
    total = 0
    while total < max_records:
        size = min(rng.randint(1, 3), max_records - total)
        keys = sorted({(0, rng.randrange(4)) for _ in range(size)})
        txns.append(keys)
        total += len(keys)
        if rng.random() < 0.2:
            break
    return txns


def test_known_constraints(three_txn_log):
    records = records_of(three_txn_log)
    assert constraint_pairs(records, ROW) == {(1, 3), (2, 4)}
    assert constraint_pairs(records, TXN) == {(1, 3), (1, 4), (2, 3), (2, 4), (3, 4)}
    assert len(permitted_orders(records, ROW)) == 6
    assert permitted_orders(records, TXN) == {(1, 2, 3, 4), (2, 1, 3, 4)}
    assert permitted_orders(records, SINGLE) == {(1, 2, 3, 4)}


@pytest.mark.parametrize('seed', range(30))
def test_coarser_protocols_permit_a_subset_of_row_orders(seed):
    records = records_of(make_log(small_txns(seed), capacity=4))
    row_orders = permitted_orders(records, ROW)
    assert permitted_orders(records, TXN) <= row_orders
    assert permitted_orders(records, PAGE, PageMap(2)) <= row_orders
    assert permitted_orders(records, SINGLE) <= row_orders
    for order in row_orders:
        assert respects_row_order(order, records)


@pytest.mark.parametrize('seed', range(20))
def test_primary_execution_order_is_row_permitted(seed):
    workload = [TxnSpec(i, [Op(UPDATE, t, r, b'%d' % i) for t, r in keys], arrival_time=0)
                for i, keys in enumerate(small_txns(seed))]
    result = run_primary(workload, SimParams(m=3, e=2, d=1))
    records = result.records()
    order = result.execution_order()
    assert tuple(order) in permitted_orders(records, ROW)
    assert is_permitted(order, records, ROW)


def test_is_permitted_rejects_foreign_or_missing_seqs(three_txn_log):
    records = records_of(three_txn_log)
    assert not is_permitted([1, 2, 3], records, ROW)
    assert not is_permitted([1, 2, 3, 5], records, ROW)
    assert not is_permitted([3, 1, 2, 4], records, ROW)
    assert is_permitted([2, 4, 1, 3], records, ROW)


def test_page_map():
    records = records_of(make_log([[(0, 0), (0, 3), (0, 4)]]))
    page_of = key_function(PAGE, PageMap(4))
    assert [page_of(r) for r in records] == [(0, 0), (0, 0), (0, 1)]
    with pytest.raises(ConfigurationError):
        PageMap(0)
    with pytest.raises(ValueError):
        key_function(TXN)


def test_chain_predecessors_link_equal_keys(three_txn_log):
    records = records_of(three_txn_log)
    assert chain_predecessors(records, key_function(ROW)) == {1: 0, 2: 0, 3: 1, 4: 2}
    assert chain_predecessors(records, key_function(SINGLE)) == {1: 0, 2: 1, 3: 2, 4: 3}


def test_dependency_graph_pruned_and_full():
    segments = make_log([[(0, 1)], [(0, 1)], [(0, 1), (0, 2)], [(0, 2)]])
    records = records_of(segments)
    pruned = TxnDependencyGraph.from_records(records)
    full = TxnDependencyGraph.from_records(records, prune_edges=False)
    assert pruned.preds == [set(), {0}, {1}, {2}]
    assert full.preds == [set(), {0}, {0, 1}, {2}]


def test_completed_transactions_leave_the_full_graph():
    graph = TxnDependencyGraph(prune_edges=False)
    records = records_of(make_log([[(0, 1)], [(0, 1)], [(0, 1)]]))
    groups = list(txn_groups(records))
    graph.add(groups[0])
    graph.add(groups[1])
    graph.complete(0)
    _, preds = graph.add(groups[2])
    assert preds == {1}
