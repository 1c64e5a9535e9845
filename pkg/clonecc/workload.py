"""Workload generation.

   Kinds
   -----
   insert_only
     Transactions of unique inserts.
   adversarial
     Unique inserts followed by one update of a shared hot row.
   micro_orderentry
     NewOrder/Payment mix over one warehouse and ``hot_rows`` districts.
   proof_txn, proof_page
     The constructed workloads of the lag theorems.
"""

import dataclasses
import itertools
import random
from dataclasses import dataclass

from clonecc.lag_model import TheoremParams, proof_page_workload, proof_txn_workload
from clonecc.primary import INSERT, READ, UPDATE, Op, SimParams, TxnSpec
from clonecc.replog import DEFAULT_MAX_ROW_SIZE
from clonecc.util import ConfigurationError

INSERT_ONLY = 'insert_only'
ADVERSARIAL = 'adversarial'
MICRO_ORDERENTRY = 'micro_orderentry'
PROOF_TXN = 'proof_txn'
PROOF_PAGE = 'proof_page'
KINDS = (INSERT_ONLY, ADVERSARIAL, MICRO_ORDERENTRY, PROOF_TXN, PROOF_PAGE)

HOT_TABLE = 0
INSERT_TABLE = 1

WAREHOUSE = 10
DISTRICT = 11
ORDER = 12
ORDER_LINE = 13
HISTORY = 14


@dataclass
class WorkloadConfig:
    """What to generate.

    ``arrival_interval`` 0 means closed loop (every transaction starts as
    soon as a primary thread is free), otherwise transaction i arrives at
    i * arrival_interval time units.
    """
    kind: str = ADVERSARIAL
    inserts_per_txn: int = 16
    hot_rows: int = 1
    optimized: bool = False
    txn_count: int = 1000
    arrival_interval: int = 0
    seed: int = 0
    neworder_fraction: float = 0.5
    value_size: int = 8

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigurationError('kind must be one of %s, got %r' % (', '.join(KINDS), self.kind))
        if self.inserts_per_txn < 0:
            raise ConfigurationError('inserts_per_txn must be >= 0, got %r' % self.inserts_per_txn)
        if self.kind == INSERT_ONLY and self.inserts_per_txn == 0:
            raise ConfigurationError('inserts_per_txn must be >= 1 for insert_only')
        if self.hot_rows < 1:
            raise ConfigurationError('hot_rows must be >= 1, got %r' % self.hot_rows)
        if self.txn_count < 0:
            raise ConfigurationError('txn_count must be >= 0, got %r' % self.txn_count)
        if self.arrival_interval < 0:
            raise ConfigurationError('arrival_interval must be >= 0, got %r' % self.arrival_interval)
        if not 0.0 <= self.neworder_fraction <= 1.0:
            raise ConfigurationError('neworder_fraction must be in [0, 1], got %r' % self.neworder_fraction)
        if not 1 <= self.value_size <= DEFAULT_MAX_ROW_SIZE:
            raise ConfigurationError('value_size must be in [1, %d], got %r'
                                     % (DEFAULT_MAX_ROW_SIZE, self.value_size))
        return self

    @classmethod
    def from_mapping(cls, values):
        """Build from string values such as a key=value file; dashes in keys are accepted."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            name = key.strip().replace('-', '_')
            if name not in types:
                raise ConfigurationError('unknown workload field %r' % key)
            kwargs[name] = _convert(name, types[name], raw)
        return cls(**kwargs)


def _convert(name, kind, raw):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if kind in (bool, 'bool'):
            if raw.lower() in ('1', 'true', 'yes', 'on'):
                return True
            if raw.lower() in ('0', 'false', 'no', 'off'):
                return False
            raise ValueError(raw)
        if kind in (int, 'int'):
            return int(raw)
        if kind in (float, 'float'):
            return float(raw)
    except ValueError:
        raise ConfigurationError('%s: cannot parse %r' % (name, raw)) from None
    return raw


class IncrementValue():
    """Op value adding *delta* to an 8-byte little-endian counter (absent counts as 0)."""

    def __init__(self, delta=1):
        self.delta = delta

    def __call__(self, current):
        base = int.from_bytes(current, 'little', signed=True) if current else 0
        return (base + self.delta).to_bytes(8, 'little', signed=True)

    def __eq__(self, other):
        return isinstance(other, IncrementValue) and other.delta == self.delta

    def __repr__(self):
        return 'IncrementValue(%d)' % self.delta


class _Generator():

    def __init__(self, config):
        self.config = config
        self.rng = random.Random(config.seed)
        self.row_ids = {}

    def next_row(self, table_id):
        if table_id not in self.row_ids:
            self.row_ids[table_id] = itertools.count()
        return next(self.row_ids[table_id])

    def value(self):
        size = self.config.value_size
        return self.rng.getrandbits(8 * size).to_bytes(size, 'little')

    def arrival(self, i):
        interval = self.config.arrival_interval
        return i * interval if interval else None

    def inserts(self, table_id, count):
        return [Op(INSERT, table_id, self.next_row(table_id), self.value()) for _ in range(count)]

    def insert_only(self, i):
        return self.inserts(INSERT_TABLE, self.config.inserts_per_txn)

    def adversarial(self, i):
        ops = self.inserts(INSERT_TABLE, self.config.inserts_per_txn)
        hot_row = self.rng.randrange(self.config.hot_rows)
        ops.append(Op(UPDATE, HOT_TABLE, hot_row, self.rng.getrandbits(63).to_bytes(8, 'little')))
        return ops

    def new_order(self):
        district = self.rng.randrange(self.config.hot_rows)
        hot = [Op(READ, DISTRICT, district), Op(UPDATE, DISTRICT, district, IncrementValue(1))]
        cold = self.inserts(ORDER, 1) + self.inserts(ORDER_LINE, self.config.inserts_per_txn)
        return cold + hot if self.config.optimized else hot + cold

    def payment(self):
        hot = [Op(UPDATE, WAREHOUSE, 0, IncrementValue(self.rng.randint(1, 5000)))]
        cold = self.inserts(HISTORY, 1)
        return cold + hot if self.config.optimized else hot + cold

    def micro_orderentry(self, i):
        if self.rng.random() < self.config.neworder_fraction:
            return self.new_order()
        return self.payment()

    def generate(self):
        make = getattr(self, self.config.kind)
        return [TxnSpec(i, make(i), arrival_time=self.arrival(i)) for i in range(self.config.txn_count)]


def theorem_params(config, params=None):
    """TheoremParams of a proof workload: n is one hot write plus inserts_per_txn, |S| is hot_rows."""
    params = params or SimParams()
    return TheoremParams(m=params.m, e=params.e, d=params.d, n=config.inserts_per_txn + 1, L=0,
                         hot_page_size=config.hot_rows)


def gen_workload(config, params=None):
    """Generate the transactions described by *config*; the same seed gives the same list.

    Parameters
    ----------
    config : WorkloadConfig
    params : SimParams, optional
        Costs and core count for the proof workloads, whose arrivals are
        fixed by e rather than by ``arrival_interval``.

    Returns
    -------
    list of TxnSpec

    Raises
    ------
    ConfigurationError
        Naming the first invalid field.
    """
    config.validate()
    if config.kind == PROOF_TXN:
        return proof_txn_workload(theorem_params(config, params), config.txn_count)
    if config.kind == PROOF_PAGE:
        return proof_page_workload(theorem_params(config, params), config.txn_count)
    return _Generator(config).generate()


def written_keys(workload):
    """Every (table_id, row_id) the workload writes, in first-write order."""
    keys = {}
    for spec in workload:
        for op in spec.ops:
            if op.kind != READ:
                keys.setdefault((op.table_id, op.row_id), None)
    return list(keys)


def hot_keys(config):
    """Keys the workload updates repeatedly."""
    if config.kind == MICRO_ORDERENTRY:
        return [(WAREHOUSE, 0)] + [(DISTRICT, d) for d in range(config.hot_rows)]
    if config.kind == ADVERSARIAL:
        return [(HOT_TABLE, r) for r in range(config.hot_rows)]
    return []
