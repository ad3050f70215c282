"""Transactional execution on top of the cache simulator.

A transaction declares its read and write byte ranges up front.  Ranges
are normalized to whole lines; the write set must fit in L1 and the
union of read and write sets must fit in the LLC, otherwise the
transaction is rejected before touching the cache (a capacity abort).

With prefetching enabled (the default) each attempt begins by touching
every declared line in ascending line order: reads first, then writes.
All touches pin their lines, so a successfully prefetched body runs
entirely out of cache and emits no events; the prefetch block itself is a
fixed function of the declaration, never of the data.  On commit, dirty
lines are written back in the order they were first dirtied (for a
prefetched transaction that is ascending line order by construction) and
all pins are released; the lines stay resident and clean.

Aborts roll everything back: every line the attempt touched is
invalidated without events, the declared write range is restored from a
snapshot taken at transaction start, pins are cleared, and the attempt
counter advances.  Retries repeat from the prefetch step up to
``retry_cap`` times.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .cache import READ, WRITE, WORD_BYTES, CacheSim, PinViolationError

ByteRange = tuple[int, int]  # (start, size_bytes)


class AbortCause(enum.Enum):
    EVICTION = "ac2"  # pin rules left no evictable way
    CAPACITY = "ac3"  # declared footprint exceeds a cache level
    INTERRUPT = "ac4"  # external interrupt hit the attempt

    def __str__(self) -> str:
        return self.value


class TxnError(Exception):
    pass


class CapacityError(TxnError):
    """Declared footprint cannot fit; raised before any cache traffic."""

    def __init__(self, level: str, need: int, cap: int, stats: "TxnStats"):
        super().__init__(
            f"declared footprint {need} bytes exceeds {level} capacity {cap}"
        )
        self.level = level
        self.need = need
        self.cap = cap
        self.stats = stats


class RetryCapExceededError(TxnError):
    def __init__(self, stats: "TxnStats"):
        super().__init__(f"transaction aborted {stats.attempts} times")
        self.stats = stats


class UndeclaredAccessError(TxnError):
    def __init__(self, addr: int, kind: str):
        super().__init__(f"{kind} of address {addr} outside declared ranges")
        self.addr = addr
        self.kind = kind


class HitGuaranteeError(TxnError):
    """A prefetched transaction produced body events; this is a bug in the
    caller's layout or declaration, never expected in normal operation."""


class NestedTxnError(TxnError):
    pass


class _Interrupted(Exception):
    pass


def _normalize(ranges: Sequence[ByteRange], line_size: int) -> tuple[int, ...]:
    lines: set[int] = set()
    for start, size in ranges:
        if size <= 0:
            raise ValueError(f"range size must be positive, got {size}")
        if start < 0:
            raise ValueError(f"range start must be non-negative, got {start}")
        first = start // line_size
        last = (start + size - 1) // line_size
        lines.update(range(first, last + 1))
    return tuple(sorted(lines))


@dataclass(frozen=True)
class TxnDeclaration:
    """Declared byte ranges, normalized to line sets at a given line size."""

    read_ranges: tuple[ByteRange, ...]
    write_ranges: tuple[ByteRange, ...]
    line_size: int = 64
    read_lines: tuple[int, ...] = field(init=False)
    write_lines: tuple[int, ...] = field(init=False)

    def __post_init__(self) -> None:
        wl = _normalize(self.write_ranges, self.line_size)
        rl = _normalize(self.read_ranges, self.line_size)
        wset = set(wl)
        # a line in both sets counts once, as writable
        object.__setattr__(
            self, "read_lines", tuple(l for l in rl if l not in wset)
        )
        object.__setattr__(self, "write_lines", wl)

    @classmethod
    def of(
        cls,
        reads: Iterable[ByteRange] = (),
        writes: Iterable[ByteRange] = (),
        line_size: int = 64,
    ) -> "TxnDeclaration":
        return cls(tuple(reads), tuple(writes), line_size)

    @property
    def all_lines(self) -> tuple[int, ...]:
        return tuple(sorted(self.read_lines + self.write_lines))

    def footprint_bytes(self) -> int:
        return len(self.all_lines) * self.line_size

    def write_bytes(self) -> int:
        return len(self.write_lines) * self.line_size


@dataclass
class TxnStats:
    attempts: int = 0
    ac2: int = 0
    ac3: int = 0
    ac4: int = 0
    prefetch_events: int = 0
    body_events: int = 0
    committed: bool = False
    prefetch_enabled: bool = True
    trace_body_start: int = -1  # trace index where the final body began
    last_fault_line: int | None = None

    def export_line(self) -> str:
        return (
            f"{self.attempts},{self.ac2},{self.ac3},{self.ac4},"
            f"{self.prefetch_events},{self.body_events}"
        )

    @staticmethod
    def export_header() -> str:
        return "attempts,ac2,ac3,ac4,prefetch_events,body_events"

    def count(self, cause: AbortCause) -> None:
        if cause is AbortCause.EVICTION:
            self.ac2 += 1
        elif cause is AbortCause.CAPACITY:
            self.ac3 += 1
        else:
            self.ac4 += 1


# -- interrupt models ------------------------------------------------------


class NoInterrupts:
    consultations = 0

    def fires_on_attempt(self, attempt: int) -> bool:
        return False

    def fires_on_access(self) -> bool:
        return False


class FixedSchedule:
    """Fires at body entry of the listed attempt numbers (1-based)."""

    def __init__(self, attempts: Iterable[int]):
        self.attempts = frozenset(attempts)
        self.consultations = 0

    def fires_on_attempt(self, attempt: int) -> bool:
        return attempt in self.attempts

    def fires_on_access(self) -> bool:
        return False


class AccessProbability:
    """Independent per-access firing with fixed probability.

    The generator persists across attempts and transactions, so retried
    work re-rolls fresh randomness.  ``consultations`` counts every draw,
    which makes the total number of interrupts exactly
    Binomial(consultations, rate) by construction.
    """

    _BUF = 4096

    def __init__(self, rate: float, seed: int):
        if not 0.0 <= rate <= 1.0:
            raise ValueError(f"rate must be in [0, 1], got {rate}")
        self.rate = rate
        self.seed = seed
        self.consultations = 0
        self._rng = np.random.Generator(np.random.Philox(key=seed))
        self._buf: np.ndarray = self._rng.random(self._BUF)
        self._pos = 0

    def fires_on_attempt(self, attempt: int) -> bool:
        return False

    def fires_on_access(self) -> bool:
        self.consultations += 1
        if self._pos >= self._BUF:
            self._buf = self._rng.random(self._BUF)
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return bool(u < self.rate)


# -- execution -------------------------------------------------------------


class TxnContext:
    """Handle passed to the transaction body.

    Reads and writes go through the cache with pinning and are checked
    against the declaration.  ``tick`` models a unit of computation that
    touches no memory but can still be interrupted.
    """

    __slots__ = (
        "_sim",
        "_read_ok",
        "_write_ok",
        "_model",
        "_touched",
        "_dirtied",
        "_dirtied_set",
        "_shift",
    )

    def __init__(self, sim: CacheSim, decl: TxnDeclaration, model) -> None:
        self._sim = sim
        self._write_ok = frozenset(decl.write_lines)
        self._read_ok = frozenset(decl.read_lines) | self._write_ok
        self._model = model
        self._touched: set[int] = set()
        self._dirtied: list[int] = []
        self._dirtied_set: set[int] = set()
        self._shift = sim.config.line_shift

    def _consult(self) -> None:
        if self._model is not None and self._model.fires_on_access():
            raise _Interrupted()

    def read(self, addr: int) -> int:
        line = addr >> self._shift
        if line not in self._read_ok:
            raise UndeclaredAccessError(addr, READ)
        self._consult()
        self._touched.add(line)
        return self._sim.read_word(addr, pin=True)

    def write(self, addr: int, value: int) -> None:
        line = addr >> self._shift
        if line not in self._write_ok:
            raise UndeclaredAccessError(addr, WRITE)
        self._consult()
        self._touched.add(line)
        if line not in self._dirtied_set:
            self._dirtied_set.add(line)
            self._dirtied.append(line)
        self._sim.write_word(addr, value, pin=True)

    def tick(self) -> None:
        self._consult()


def run_txn(
    sim: CacheSim,
    decl: TxnDeclaration,
    body: Callable[[TxnContext], None] | None = None,
    interrupt_model=None,
    *,
    prefetch: bool = True,
    retry_cap: int = 1024,
) -> TxnStats:
    """Execute one transaction to commit, raising on capacity rejection or
    retry exhaustion.  Returns the accumulated statistics."""
    if sim.txn_open:
        raise NestedTxnError("a transaction is already open on this simulator")
    cfg = sim.config
    if decl.line_size != cfg.line_size:
        raise ValueError("declaration line size does not match the cache")
    stats = TxnStats(prefetch_enabled=prefetch)

    need_w = decl.write_bytes()
    if need_w > cfg.l1_capacity:
        stats.ac3 = 1
        raise CapacityError("l1", need_w, cfg.l1_capacity, stats)
    need_all = decl.footprint_bytes()
    if need_all > cfg.llc_capacity:
        stats.ac3 = 1
        raise CapacityError("llc", need_all, cfg.llc_capacity, stats)
    if retry_cap < 1:
        raise ValueError("retry_cap must be at least 1")

    shift = cfg.line_shift
    line_size = cfg.line_size
    words_per_line = line_size // WORD_BYTES
    # line-granular snapshot of the declared write range, for abort rollback
    snapshot: dict[int, int] = {}
    mem = sim.memory
    for line in decl.write_lines:
        base = (line << shift) >> 3
        for i in range(words_per_line):
            w = base + i
            if w in mem:
                snapshot[w] = mem[w]

    all_lines = decl.all_lines
    sim.txn_open = True
    try:
        while True:
            stats.attempts += 1
            if stats.attempts > retry_cap:
                stats.attempts = retry_cap
                raise RetryCapExceededError(stats)
            ctx = TxnContext(sim, decl, interrupt_model)

            def rollback() -> None:
                touched = all_lines if prefetch else ctx._touched
                sim.invalidate_lines(touched)
                sim.unpin_lines(touched)
                for w in snapshot:
                    mem[w] = snapshot[w]
                for line in decl.write_lines:
                    base = (line << shift) >> 3
                    for i in range(words_per_line):
                        w = base + i
                        if w not in snapshot:
                            mem.pop(w, None)

            try:
                pf_start = len(sim.trace)
                try:
                    if prefetch:
                        for line in decl.read_lines:
                            sim.access(line << shift, READ, pin=True)
                        for line in decl.write_lines:
                            sim.access(line << shift, WRITE, pin=True)
                            ctx._touched.add(line)
                            ctx._dirtied_set.add(line)
                            ctx._dirtied.append(line)
                        ctx._touched.update(decl.read_lines)
                finally:
                    # count partial blocks too: an abort mid-prefetch has
                    # already emitted its events
                    stats.prefetch_events += len(sim.trace) - pf_start

                stats.trace_body_start = len(sim.trace)
                if interrupt_model is not None and interrupt_model.fires_on_attempt(
                    stats.attempts
                ):
                    raise _Interrupted()
                if body is not None:
                    body(ctx)
                stats.body_events += len(sim.trace) - stats.trace_body_start
            except PinViolationError as exc:
                stats.count(AbortCause.EVICTION)
                stats.last_fault_line = exc.line_address
                rollback()
                continue
            except _Interrupted:
                stats.count(AbortCause.INTERRUPT)
                rollback()
                continue
            except Exception:
                # programming errors leave the simulator consistent
                rollback()
                raise

            for line in ctx._dirtied:
                sim.writeback_line(line)
            sim.unpin_lines(ctx._touched)
            stats.committed = True
            if prefetch and stats.body_events:
                raise HitGuaranteeError(
                    f"prefetched transaction produced {stats.body_events} "
                    "body events"
                )
            return stats
    finally:
        sim.txn_open = False
