"""In-memory multi-version row store shared by the primary and the backups.

Snapshots are timestamp cursors over one store: reading the current snapshot
is reading at sequence number c, installing into the next snapshot is an
install with a sequence number above c.
"""

import threading

from clonecc import log


class StoreError(Exception):
    '''Base class for store errors.
    '''


class OrderingViolationError(StoreError):
    '''Exception raised when a write would be installed out of per-row order, or twice.
    '''


class MergeTooEarlyError(StoreError):
    '''Exception raised when merging a snapshot whose writes are not all installed.
    '''


class _Tombstone():
    __slots__ = ()

    def __repr__(self):
        return 'TOMBSTONE'

TOMBSTONE = _Tombstone()


class RowVersion():
    __slots__ = ('write_seq', 'payload', 'next')

    def __init__(self, write_seq, payload, next=None):
        self.write_seq = write_seq
        self.payload = payload
        self.next = next


class VersionChain():
    """Row versions in strictly descending write_seq order, newest at ``head``."""
    __slots__ = ('head',)

    def __init__(self):
        self.head = None

    def read_at(self, at_seq):
        version = self.head
        while version is not None and version.write_seq > at_seq:
            version = version.next
        return version

    def splice(self, write_seq, payload):
        """Insert an older version below the head. Only the chaos mode installs this way."""
        prev = self.head
        version = prev.next
        while version is not None and version.write_seq > write_seq:
            prev = version
            version = version.next
        if version is not None and version.write_seq == write_seq:
            raise OrderingViolationError('version %d already installed' % write_seq)
        prev.next = RowVersion(write_seq, payload, version)

    def seqs(self):
        out = []
        version = self.head
        while version is not None:
            out.append(version.write_seq)
            version = version.next
        return out


class Store():
    """Multi-version store: table_id -> row_id -> VersionChain.

    Parameters
    ----------
    track_installs : bool
        Keep the set of installed sequence numbers and the contiguous
        installed prefix. Backups track installs, the primary (which
        installs commit timestamps) does not.
    record_order : bool
        Also keep every installed seq in ``install_order``. It grows with the
        log, so only offline replays of a bounded log turn it on.
    """

    def __init__(self, track_installs=False, record_order=False):
        self.tables = {}
        self.track_installs = track_installs
        self.record_order = record_order
        self.installed_prefix = 0
        self.install_count = 0
        self.install_order = []
        self._installed_beyond = set()
        self._tables_lock = threading.Lock()
        self._book_lock = threading.Lock()

    def _chain(self, table_id, row_id, create=False):
        rows = self.tables.get(table_id)
        chain = rows.get(row_id) if rows is not None else None
        if chain is None and create:
            with self._tables_lock:
                rows = self.tables.setdefault(table_id, {})
                chain = rows.get(row_id)
                if chain is None:
                    chain = VersionChain()
                    rows[row_id] = chain
        return chain

    def install(self, table_id, row_id, write_seq, payload, strict=True):
        """Make (write_seq, payload) the newest version of the row.

        Parameters
        ----------
        payload : bytes or TOMBSTONE
        strict : bool
            When False an out-of-order write is spliced into its position
            instead of raising.

        Raises
        ------
        OrderingViolationError
            If write_seq is not above the current head, or was already installed.
        """
        chain = self._chain(table_id, row_id, create=True)
        head = chain.head
        if head is not None and write_seq <= head.write_seq:
            if strict or write_seq == head.write_seq:
                raise OrderingViolationError('install of seq %d on row (%d, %d) below head %d'
                                             % (write_seq, table_id, row_id, head.write_seq))
            chain.splice(write_seq, payload)
        else:
            # single reference store, readers see the old or the new head
            chain.head = RowVersion(write_seq, payload, head)
        if self.track_installs:
            self._record_install(write_seq)

    def _record_install(self, seq):
        with self._book_lock:
            if seq <= self.installed_prefix or seq in self._installed_beyond:
                raise OrderingViolationError('seq %d installed twice' % seq)
            if self.record_order:
                self.install_order.append(seq)
            self.install_count += 1
            if seq == self.installed_prefix + 1:
                prefix = seq
                while prefix + 1 in self._installed_beyond:
                    prefix += 1
                    self._installed_beyond.discard(prefix)
                self.installed_prefix = prefix
            else:
                self._installed_beyond.add(seq)

    def is_installed(self, seq):
        with self._book_lock:
            return seq <= self.installed_prefix or seq in self._installed_beyond

    def read_at(self, table_id, row_id, at_seq):
        """Payload of the newest version with write_seq <= at_seq, None when not found."""
        chain = self._chain(table_id, row_id)
        if chain is None:
            return None
        version = chain.read_at(at_seq)
        if version is None or version.payload is TOMBSTONE:
            return None
        return version.payload

    def read_latest(self, table_id, row_id):
        chain = self._chain(table_id, row_id)
        if chain is None or chain.head is None or chain.head.payload is TOMBSTONE:
            return None
        return chain.head.payload

    def head_seq(self, table_id, row_id):
        chain = self._chain(table_id, row_id)
        if chain is None or chain.head is None:
            return 0
        return chain.head.write_seq

    def chain_seqs(self, table_id, row_id):
        chain = self._chain(table_id, row_id)
        return chain.seqs() if chain is not None else []

    def keys(self):
        for table_id, rows in list(self.tables.items()):
            for row_id in list(rows):
                yield table_id, row_id

    def latest_state(self):
        """Map (table_id, row_id) -> newest payload; deleted rows are absent."""
        state = {}
        for table_id, row_id in self.keys():
            payload = self.read_latest(table_id, row_id)
            if payload is not None:
                state[(table_id, row_id)] = payload
        return state


def merge_snapshots(store, cursor, verify=True):
    """Fold the next snapshot into the current one: c := n.

    Raises
    ------
    MergeTooEarlyError
        If some write with seq in (c, n] is not installed yet.
    """
    n = cursor.n
    if verify:
        if not store.track_installs:
            raise StoreError('merge verification needs a store that tracks installs')
        if store.installed_prefix < n:
            raise MergeTooEarlyError('cannot merge up to %d: seq %d pending'
                                     % (n, store.installed_prefix + 1))
    cursor.advance_c(n)
    log.debug('merged snapshot, c=%d', n)
