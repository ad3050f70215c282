"""Deterministic two-level set-associative cache simulator.

The hierarchy is inclusive: every line resident in L1 is also resident in
the LLC.  Replacement is LRU per set at each level, tracked with a global
monotonic access counter so the victim scan never reorders entries.  Two
things are observable: a read of a line absent from both levels emits an
``llc-miss-read`` event, and dirty data leaving L1 emits a ``write-back``
event.  Dirty state lives in L1 (write-allocate): when a dirty line is
demoted out of L1 its data is written through, so the surviving LLC copy
is clean, and when an LLC eviction removes a line whose L1 copy is dirty
the combined removal writes back once.  Clean evictions at either level
are silent, as are L1 hits and LLC hits themselves.  Within one access,
victim write-backs precede the incoming line's miss event.

Pinning is the protection primitive for transactions.  A pinned line is
never evicted from the LLC.  In L1 the protected resource is *dirty*
pinned data: a pinned clean line may be silently demoted (its LLC copy is
still pinned, so nothing escapes to memory), but a pinned dirty line may
not be displaced.  When an access needs a victim and every candidate is
protected, the behaviour depends on the access kind: a read is served
from the LLC without allocating in L1 (no event, nothing lost), while a
write raises :class:`PinViolationError` because there is nowhere safe to
put the dirty word.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

WORD_BYTES = 8

KIND_MISS = "llc-miss-read"
KIND_WRITEBACK = "write-back"

READ = "read"
WRITE = "write"

# entry layout: mutable 3-slot list per resident line
_DIRTY = 0
_PINNED = 1
_STAMP = 2


class TraceEvent(NamedTuple):
    kind: str
    line_address: int


@dataclass(frozen=True)
class Trace:
    """Immutable sequence of LLC-boundary events.

    Two traces are equal iff they have the same length and agree at every
    position.  There is no tolerance or reordering: positional equality is
    the whole definition.
    """

    events: tuple[TraceEvent, ...]

    def __len__(self) -> int:
        return len(self.events)

    def __getitem__(self, i: int) -> TraceEvent:
        return self.events[i]

    def __iter__(self):
        return iter(self.events)

    def export_csv(self) -> str:
        lines = ["sequence,kind,line_address"]
        for seq, ev in enumerate(self.events):
            lines.append(f"{seq},{ev.kind},{ev.line_address}")
        return "\n".join(lines) + "\n"


class PinViolationError(Exception):
    """An access required evicting a line the pin rules protect.

    ``line_address`` is the line of the *faulting access*, ``level`` the
    cache level whose set had no evictable entry.
    """

    def __init__(self, line_address: int, level: str):
        super().__init__(
            f"no evictable way in {level} set for line {line_address}"
        )
        self.line_address = line_address
        self.level = level


def _require_pow2(name: str, value: int) -> None:
    if value <= 0 or value & (value - 1):
        raise ValueError(f"{name} must be a power of two, got {value}")


@dataclass(frozen=True)
class CacheConfig:
    line_size: int = 64
    l1_sets: int = 64
    l1_ways: int = 8
    llc_sets: int = 8192
    llc_ways: int = 16
    address_space: int = 1 << 30

    def __post_init__(self) -> None:
        _require_pow2("line_size", self.line_size)
        _require_pow2("l1_sets", self.l1_sets)
        _require_pow2("llc_sets", self.llc_sets)
        _require_pow2("address_space", self.address_space)
        if self.l1_ways <= 0 or self.llc_ways <= 0:
            raise ValueError("way counts must be positive")
        if self.line_size % WORD_BYTES:
            raise ValueError("line_size must be a multiple of the word size")
        if self.l1_capacity > self.llc_capacity:
            raise ValueError("L1 capacity must not exceed LLC capacity")
        if self.address_space < self.line_size:
            raise ValueError("address space smaller than one line")

    @property
    def l1_capacity(self) -> int:
        return self.line_size * self.l1_sets * self.l1_ways

    @property
    def llc_capacity(self) -> int:
        return self.line_size * self.llc_sets * self.llc_ways

    @property
    def line_shift(self) -> int:
        return self.line_size.bit_length() - 1

    @classmethod
    def from_text(cls, text: str) -> "CacheConfig":
        """Parse ``key=value`` lines; '#' starts a comment, blanks ignored."""
        allowed = {
            "line_size",
            "l1_sets",
            "l1_ways",
            "llc_sets",
            "llc_ways",
            "address_space",
        }
        fields: dict[str, int] = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            m = re.fullmatch(r"(\w+)\s*=\s*(\d+)", line)
            if not m:
                raise ValueError(f"malformed config line: {raw!r}")
            key = m.group(1)
            if key not in allowed:
                raise ValueError(f"unknown config key: {key}")
            if key in fields:
                raise ValueError(f"duplicate config key: {key}")
            fields[key] = int(m.group(2))
        return cls(**fields)

    @classmethod
    def from_file(cls, path: str) -> "CacheConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read())


@dataclass
class AccessCounters:
    total: int = 0
    l1_hits: int = 0
    llc_hits: int = 0
    llc_misses: int = 0


class CacheSim:
    """Cache hierarchy plus a flat word-addressed backing memory.

    The backing store is sparse: words never written read as zero.  Data
    movement is not modelled at byte level; the hierarchy only tracks
    which lines are resident, dirty, and pinned, while ``peek``/``poke``
    operate on the backing store directly and are invisible to the trace.
    """

    def __init__(self, config: CacheConfig | None = None):
        self.config = config or CacheConfig()
        self.memory: dict[int, int] = {}
        self.trace: list[TraceEvent] = []
        self.counters = AccessCounters()
        self.txn_open = False
        c = self.config
        self._shift = c.line_shift
        self._l1_mask = c.l1_sets - 1
        self._llc_mask = c.llc_sets - 1
        self._l1: list[dict[int, list]] = [dict() for _ in range(c.l1_sets)]
        self._llc: list[dict[int, list]] = [dict() for _ in range(c.llc_sets)]
        self._clock = 0

    # -- observable trace ------------------------------------------------

    def snapshot_trace(self) -> Trace:
        return Trace(tuple(self.trace))

    def reset_trace(self) -> None:
        self.trace.clear()

    # -- raw memory (not traced) -----------------------------------------

    def peek_word(self, addr: int) -> int:
        self._check_word(addr)
        return self.memory.get(addr >> 3, 0)

    def poke_word(self, addr: int, value: int) -> None:
        self._check_word(addr)
        self.memory[addr >> 3] = value

    def peek_words(self, addr: int, count: int) -> list[int]:
        self._check_word(addr)
        base = addr >> 3
        mem = self.memory
        return [mem.get(base + i, 0) for i in range(count)]

    def poke_words(self, addr: int, values: Iterable[int]) -> None:
        self._check_word(addr)
        base = addr >> 3
        mem = self.memory
        for i, v in enumerate(values):
            mem[base + i] = v

    def _check_word(self, addr: int) -> None:
        if addr % WORD_BYTES:
            raise ValueError(f"address {addr} not word aligned")
        if not 0 <= addr < self.config.address_space:
            raise ValueError(f"address {addr} out of range")

    # -- traced accesses ---------------------------------------------------

    def read_word(self, addr: int, pin: bool = False) -> int:
        self._check_word(addr)
        self.access(addr, READ, pin)
        return self.memory.get(addr >> 3, 0)

    def write_word(self, addr: int, value: int, pin: bool = False) -> None:
        self._check_word(addr)
        self.access(addr, WRITE, pin)
        self.memory[addr >> 3] = value

    def access(self, addr: int, kind: str, pin: bool = False) -> str:
        """Touch one byte address; returns "l1-hit", "llc-hit" or "llc-miss".

        Raises PinViolationError when the access cannot be satisfied
        without evicting a protected line (see module docstring).  The
        raise happens before any state change or event, so a rejected
        access leaves the hierarchy exactly as it found it.
        """
        if not 0 <= addr < self.config.address_space:
            raise ValueError(f"address {addr} out of range")
        is_write = kind == WRITE
        if not is_write and kind != READ:
            raise ValueError(f"bad access kind: {kind!r}")
        line = addr >> self._shift
        self._clock += 1
        clock = self._clock
        self.counters.total += 1

        l1_set = self._l1[line & self._l1_mask]
        entry = l1_set.get(line)
        if entry is not None:
            entry[_STAMP] = clock
            if is_write:
                entry[_DIRTY] = True
            if pin:
                entry[_PINNED] = True
                self._llc[line & self._llc_mask][line][_PINNED] = True
            self.counters.l1_hits += 1
            return "l1-hit"

        # decide both victims before touching anything
        install_l1 = True
        l1_victim = None
        if len(l1_set) >= self.config.l1_ways:
            stamp = clock + 1
            for vline, ve in l1_set.items():
                if ve[_PINNED] and ve[_DIRTY]:
                    continue
                if ve[_STAMP] < stamp:
                    stamp = ve[_STAMP]
                    l1_victim = vline
            if l1_victim is None:
                # every way holds protected dirty data: a read is served
                # from the LLC without L1 residency, a write has no home
                if is_write:
                    raise PinViolationError(line, "l1")
                install_l1 = False

        llc_set = self._llc[line & self._llc_mask]
        lentry = llc_set.get(line)
        llc_victim = None
        if lentry is None and len(llc_set) >= self.config.llc_ways:
            stamp = clock + 1
            for vline, ve in llc_set.items():
                if ve[_PINNED]:
                    continue
                if ve[_STAMP] < stamp:
                    stamp = ve[_STAMP]
                    llc_victim = vline
            if llc_victim is None:
                raise PinViolationError(line, "llc")

        if llc_victim is not None:
            ve = llc_set.pop(llc_victim)
            l1e = self._l1[llc_victim & self._l1_mask].pop(llc_victim, None)
            if ve[_DIRTY] or (l1e is not None and l1e[_DIRTY]):
                self.trace.append(TraceEvent(KIND_WRITEBACK, llc_victim))

        if install_l1 and len(l1_set) >= self.config.l1_ways:
            # the inclusion eviction above may have freed this set already
            ve = l1_set.pop(l1_victim, None)
            if ve is not None and ve[_DIRTY]:
                self.trace.append(TraceEvent(KIND_WRITEBACK, l1_victim))

        if lentry is not None:
            lentry[_STAMP] = clock
            if pin:
                lentry[_PINNED] = True
            self.counters.llc_hits += 1
            result = "llc-hit"
        else:
            self.trace.append(TraceEvent(KIND_MISS, line))
            self.counters.llc_misses += 1
            llc_set[line] = [False, pin, clock]
            result = "llc-miss"

        if install_l1:
            l1_set[line] = [is_write, pin, clock]
        return result

    # -- bulk operations ---------------------------------------------------

    def flush_all(self) -> None:
        """Write back every dirty line in ascending line order, then empty
        both levels.  Pins do not survive a flush."""
        dirty_lines = []
        for llc_set in self._llc:
            for line, ve in llc_set.items():
                d = ve[_DIRTY]
                if not d:
                    l1e = self._l1[line & self._l1_mask].get(line)
                    d = l1e is not None and l1e[_DIRTY]
                if d:
                    dirty_lines.append(line)
        for line in sorted(dirty_lines):
            self.trace.append(TraceEvent(KIND_WRITEBACK, line))
        for s in self._l1:
            s.clear()
        for s in self._llc:
            s.clear()

    def invalidate_lines(self, lines: Iterable[int]) -> None:
        """Drop lines from both levels without any trace events.  Dirty
        data is discarded; the caller owns restoring memory."""
        for line in lines:
            self._l1[line & self._l1_mask].pop(line, None)
            self._llc[line & self._llc_mask].pop(line, None)

    def unpin_lines(self, lines: Iterable[int]) -> None:
        for line in lines:
            e = self._l1[line & self._l1_mask].get(line)
            if e is not None:
                e[_PINNED] = False
            e = self._llc[line & self._llc_mask].get(line)
            if e is not None:
                e[_PINNED] = False

    def writeback_line(self, line: int) -> bool:
        """Force a dirty line out to memory, emitting one write-back event.

        The line stays resident (now clean) wherever it was.  Returns True
        if an event was emitted, False if the line was clean or absent.
        """
        dirty = False
        e = self._l1[line & self._l1_mask].get(line)
        if e is not None and e[_DIRTY]:
            e[_DIRTY] = False
            dirty = True
        e = self._llc[line & self._llc_mask].get(line)
        if e is not None and e[_DIRTY]:
            e[_DIRTY] = False
            dirty = True
        if dirty:
            self.trace.append(TraceEvent(KIND_WRITEBACK, line))
        return dirty

    def line_resident(self, line: int, level: str = "llc") -> bool:
        if level == "l1":
            return line in self._l1[line & self._l1_mask]
        return line in self._llc[line & self._llc_mask]

    def line_state(self, line: int, level: str) -> tuple[bool, bool] | None:
        """(dirty, pinned) at that level, or None if not resident."""
        sets = self._l1 if level == "l1" else self._llc
        mask = self._l1_mask if level == "l1" else self._llc_mask
        e = sets[line & mask].get(line)
        if e is None:
            return None
        return (e[_DIRTY], e[_PINNED])

    def check_invariants(self) -> None:
        """Structural sanity for tests: occupancy bounds, set mapping,
        inclusion, and pin agreement between levels."""
        for idx, s in enumerate(self._l1):
            assert len(s) <= self.config.l1_ways, "L1 set over ways"
            for line, e in s.items():
                assert line & self._l1_mask == idx, "L1 set mapping broken"
                le = self._llc[line & self._llc_mask].get(line)
                assert le is not None, "inclusion broken"
                assert le[_PINNED] or not e[_PINNED], "pin levels disagree"
        for idx, s in enumerate(self._llc):
            assert len(s) <= self.config.llc_ways, "LLC set over ways"
            for line, e in s.items():
                assert line & self._llc_mask == idx, "LLC set mapping broken"
