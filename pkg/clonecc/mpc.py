"""Monotonic prefix consistency checking.

Every state a backup exposes must equal the serial replay of some log
prefix ending at a transaction boundary, and the prefixes a session observes
must never shrink. Observations are recorded by the read paths during a run
and checked offline against a ``PrefixOracle`` built from the log.
"""

import bisect
import hashlib
from dataclasses import dataclass, field

from clonecc import log
from clonecc.replog import iter_records

_DIGEST_MOD = 1 << 256


def _payload_digest(payload):
    if payload is None:
        return 'absent'
    return hashlib.blake2b(payload, digest_size=8).hexdigest()


def _row_hash(key, payload):
    h = hashlib.blake2b(digest_size=32)
    h.update(b'%d:%d:' % key)
    h.update(payload)
    return int.from_bytes(h.digest(), 'little')


@dataclass
class Observation:
    session_id: int
    sampled_c: int
    reads: list
    wall_time: int = 0


@dataclass
class Violation:
    kind: str
    session_id: int
    sampled_c: int
    table_id: int = -1
    row_id: int = -1
    expected: str = ''
    got: str = ''

    def line(self, run_id=''):
        return ('run=%s kind=%s session=%d table=%d row=%d c=%d expected=%s got=%s'
                % (run_id, self.kind, self.session_id, self.table_id, self.row_id,
                   self.sampled_c, self.expected, self.got))


@dataclass
class CheckResult:
    violations: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.violations

    def extend(self, other):
        self.violations.extend(other.violations)
        return self


class PrefixOracle():
    """Serial replay of a log, queryable at any sequence number.

    Each row keeps its (seq, payload) history from the replay, so the state at
    a prefix is answered by bisection. A canonical digest of the full state is
    memoized at every transaction boundary; it is an order-independent sum of
    per-row hashes, updated incrementally while replaying, so deletes and
    absent rows compare equal.

    Parameters
    ----------
    records : iterable of LogRecord
        The log in seq order.
    """

    def __init__(self, records):
        self.records = list(records)
        self._history = {}
        self.boundary_digests = {0: 0}
        self.boundaries = [0]
        digest = 0
        current = {}
        for record in self.records:
            key = record.key
            old = current.get(key)
            if old is not None:
                digest = (digest - _row_hash(key, old)) % _DIGEST_MOD
            payload = None if record.is_delete else record.value
            if payload is None:
                current.pop(key, None)
            else:
                current[key] = payload
                digest = (digest + _row_hash(key, payload)) % _DIGEST_MOD
            seqs, payloads = self._history.setdefault(key, ([], []))
            seqs.append(record.seq)
            payloads.append(payload)
            if record.last_in_txn:
                self.boundary_digests[record.seq] = digest
                self.boundaries.append(record.seq)
        self.final_state = current
        self.last_seq = self.records[-1].seq if self.records else 0

    @classmethod
    def from_segments(cls, segments):
        return cls(iter_records(segments))

    def value_at(self, table_id, row_id, seq):
        """Payload of the row after replaying records 1..seq, None when absent."""
        history = self._history.get((table_id, row_id))
        if history is None:
            return None
        seqs, payloads = history
        i = bisect.bisect_right(seqs, seq)
        return payloads[i - 1] if i > 0 else None

    def state_at(self, seq):
        state = {}
        for key in self._history:
            payload = self.value_at(key[0], key[1], seq)
            if payload is not None:
                state[key] = payload
        return state

    def digest_at(self, boundary):
        return self.boundary_digests[boundary]

    def is_boundary(self, seq):
        return seq in self.boundary_digests


def state_digest(state):
    """Canonical digest of a {(table_id, row_id): payload} map, comparable to the oracle's."""
    digest = 0
    for key, payload in state.items():
        if payload is not None:
            digest = (digest + _row_hash(key, payload)) % _DIGEST_MOD
    return digest


def serial_replay(records):
    """Final state of applying *records* one at a time in order."""
    state = {}
    for record in records:
        if record.is_delete:
            state.pop(record.key, None)
        else:
            state[record.key] = record.value
    return state


def check_state(observation, oracle):
    """Every value read must equal the oracle's state at the sampled c."""
    result = CheckResult()
    c = observation.sampled_c
    if not oracle.is_boundary(c):
        result.violations.append(Violation('not-boundary', observation.session_id, c))
    for (table_id, row_id), got in observation.reads:
        expected = oracle.value_at(table_id, row_id, c)
        if expected != got:
            result.violations.append(Violation('state', observation.session_id, c, table_id, row_id,
                                               _payload_digest(expected), _payload_digest(got)))
    return result


def check_monotonic(sessions):
    """Sampled c must be nondecreasing within each session.

    Parameters
    ----------
    sessions : dict
        session_id -> list of Observation in session order.
    """
    result = CheckResult()
    for session_id, observations in sessions.items():
        last = 0
        for observation in observations:
            if observation.sampled_c < last:
                result.violations.append(Violation('monotonic', session_id, observation.sampled_c,
                                                   expected='>=%d' % last,
                                                   got=str(observation.sampled_c)))
            last = max(last, observation.sampled_c)
    return result


def check_final_convergence(store, oracle):
    """Compare the newest state of *store* to the oracle at the full log.

    Returns
    -------
    list of tuple
        (table_id, row_id, expected, got) for every divergent row; empty on pass.
    """
    got = store.latest_state()
    expected = oracle.final_state
    diff = []
    for key in sorted(set(got) | set(expected)):
        if got.get(key) != expected.get(key):
            diff.append((key[0], key[1], expected.get(key), got.get(key)))
    return diff


def check_run(observations, oracle, run_id='', max_report=20):
    """Run check_state over every observation plus check_monotonic, logging violations."""
    sessions = {}
    result = CheckResult()
    for observation in observations:
        sessions.setdefault(observation.session_id, []).append(observation)
        result.extend(check_state(observation, oracle))
    result.extend(check_monotonic(sessions))
    for violation in result.violations[:max_report]:
        log.error(violation.line(run_id))
    if len(result.violations) > max_report:
        log.error('run=%s %d more violations not shown', run_id, len(result.violations) - max_report)
    return result
