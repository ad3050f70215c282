"""Cache-miss-oblivious shuffling built on pinned transactions.

The goal is to apply a permutation to an array so that the observable
LLC event trace is the same for every input of a given size.  The
approach randomizes first and fixes up after: draw a fresh random
permutation, scatter both the data and the target permutation through a
bucketed intermediate buffer, and compose.  Writing it as array maps
with the convention ``out[pi[k]] = src[k]``:

    data_r = pass(data, pi_r)
    tgt_r  = pass(perm, pi_r)
    out    = pass(data_r, tgt_r)

so ``out[perm[k]] = data[k]`` exactly, while every pass moves elements
according to a permutation that is either freshly random or the image of
one, never raw input order.

Each pass has two phases of sqrt(N) transactions each.  A scatter
transaction reads one contiguous source bucket plus the matching slice
of the routing permutation, and appends each element (packed with its
destination index) to a bounded slice of the destination bucket's row in
the intermediate buffer, padding every slice with dummies to a fixed
length.  A gather transaction reads one full row, drops dummies, orders
the survivors by destination and writes them to their final positions.
With prefetching, both bodies run entirely out of pinned cache: every
event comes from the prefetch and commit phases, which depend only on
declared addresses.  If more than a slice's worth of one source bucket
targets one destination bucket, the scatter aborts the whole shuffle and
it restarts with a new random permutation (vanishingly rare at the
padding factors used here).

Rows of the intermediate buffer sit at a staggered stride: row length
plus a small pad, chosen by search so that no scatter transaction loads
any L1 set with more written lines than it has ways.  Without the
stagger (and without prefetch) the row stride is a multiple of the L1
set count at larger sizes and the per-set pile-up aborts the scatter
until its retry cap.

Two baselines for comparison: a naive single transaction that permutes
in place with no prefetch (its trace follows the permutation), and a
transaction-free bubble sort on (destination, value) pairs whose access
sequence is a fixed function of N at word granularity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import isqrt

import numpy as np

from .cache import READ, WRITE, WORD_BYTES, CacheSim, CacheConfig
from .layout import (
    READ_ONLY,
    READ_WRITE,
    ConflictReport,
    LayoutInfeasibleError,
    LayoutPlan,
    Region,
)
from .txn import (
    CapacityError,
    RetryCapExceededError,
    TxnDeclaration,
    TxnStats,
    run_txn,
)

VALUE_MASK = (1 << 32) - 1
_SEED_STEP = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


class BucketOverflowError(Exception):
    def __init__(self, src_bucket: int, dst_bucket: int, slice_len: int):
        super().__init__(
            f"more than {slice_len} elements from bucket {src_bucket} "
            f"target bucket {dst_bucket}"
        )
        self.src_bucket = src_bucket
        self.dst_bucket = dst_bucket


class MalformedIntermediateError(Exception):
    pass


class OverflowRetriesExceededError(Exception):
    pass


def _ceil_log2(n: int) -> int:
    return (n - 1).bit_length() if n > 1 else 0


@dataclass(frozen=True)
class ShuffleParams:
    """Size and padding knobs.  ``n`` must be a perfect square; the
    bucket side is sqrt(n) and each (source, destination) slice holds
    ``pad_factor * ceil(log2 n)`` elements (at least one)."""

    n: int
    pad_factor: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be positive")
        if isqrt(self.n) ** 2 != self.n:
            raise ValueError(f"n must be a perfect square, got {self.n}")
        if self.n > VALUE_MASK:
            raise ValueError("n too large for packed tags")
        if self.pad_factor < 1:
            raise ValueError("pad_factor must be at least 1")

    @property
    def bucket_count(self) -> int:
        return isqrt(self.n)

    @property
    def slice_len(self) -> int:
        return max(1, self.pad_factor * _ceil_log2(self.n))

    @property
    def bucket_capacity(self) -> int:
        return self.slice_len * self.bucket_count

    @property
    def dummy_tag(self) -> int:
        return self.n


def pack(tag: int, value: int) -> int:
    return (tag << 32) | value


def unpack(word: int) -> tuple[int, int]:
    return word >> 32, word & VALUE_MASK


def gen_perm(n: int, seed: int) -> list[int]:
    """Uniform random permutation of range(n), deterministic in the seed."""
    if n < 0:
        raise ValueError("n must be non-negative")
    if n <= 1:
        return list(range(n))
    rng = np.random.Generator(np.random.Philox(key=seed & _MASK64))
    draws = rng.integers(0, np.arange(n, 1, -1))
    a = list(range(n))
    i = n - 1
    for j in draws.tolist():
        a[i], a[j] = a[j], a[i]
        i -= 1
    return a


def _attempt_seed(seed: int, attempt: int) -> int:
    return (seed + attempt * _SEED_STEP) & _MASK64


def _check_values(data, n: int) -> None:
    if len(data) != n:
        raise ValueError(f"expected {n} values, got {len(data)}")
    for v in data:
        if not 0 <= v <= VALUE_MASK:
            raise ValueError(f"value {v} does not fit in 32 bits")


def _check_perm(perm, n: int) -> None:
    if len(perm) != n:
        raise ValueError(f"expected a permutation of length {n}")
    seen = bytearray(n)
    for p in perm:
        if not 0 <= p < n or seen[p]:
            raise ValueError("perm is not a permutation of range(n)")
        seen[p] = 1


def _round_lines(size: int, line: int) -> int:
    return -(-size // line) * line


class ShuffleEngine:
    """Owns the arena layout and transaction plumbing for one (n, pad)
    configuration on one simulator.

    ``staggered=False`` lays intermediate rows end to end (the conflicting
    layout) and ``prefetch=False`` runs bodies cold; both exist so the
    experiments can show what each protection buys.
    """

    OVERFLOW_CAP = 16

    def __init__(
        self,
        sim: CacheSim | None = None,
        params: ShuffleParams | None = None,
        *,
        n: int | None = None,
        prefetch: bool = True,
        staggered: bool = True,
        interrupt_model=None,
        retry_cap: int = 1024,
        record_plans: bool = False,
    ):
        if params is None:
            if n is None:
                raise ValueError("pass params or n")
            params = ShuffleParams(n)
        self.sim = sim or CacheSim()
        self.params = params
        self.prefetch = prefetch
        self.staggered = staggered
        self.interrupt_model = interrupt_model
        self.retry_cap = retry_cap
        self.record_plans = record_plans
        self.stats: list[TxnStats] = []
        self.plans: list[LayoutPlan] = []
        self.overflow_retries = 0

        cfg = self.sim.config
        line = cfg.line_size
        p = params
        self._bucket_bytes = p.bucket_count * WORD_BYTES
        self._slice_bytes = p.slice_len * WORD_BYTES
        self.row_bytes = _round_lines(p.bucket_capacity * WORD_BYTES, line)

        array_bytes = _round_lines(p.n * WORD_BYTES, line)
        self.data_src = 0
        self.perm_tgt = array_bytes
        self.perm_r = 2 * array_bytes
        self.buf1 = 3 * array_bytes
        self.buf2 = 4 * array_bytes
        self.out = 5 * array_bytes
        self.inter = 6 * array_bytes

        pad = self._find_stagger() if staggered else 0
        self.stride_bytes = self.row_bytes + pad * line
        end = self.inter + p.bucket_count * self.stride_bytes
        if end > cfg.address_space:
            raise ValueError(
                f"arena needs {end} bytes, address space is {cfg.address_space}"
            )

    # -- arena staggering --------------------------------------------------

    def _scatter_line_loads(self, i: int, stride_lines: int):
        """Yield (l1_set, llc_set) for every written line of scatter txn i,
        plus (None, llc_set) for its read lines."""
        cfg = self.sim.config
        line = cfg.line_size
        l1_mask = cfg.l1_sets - 1
        llc_mask = cfg.llc_sets - 1
        base_line = self.inter // line
        for j in range(self.params.bucket_count):
            start = j * stride_lines * line + i * self._slice_bytes
            first = base_line + start // line
            last = base_line + (start + self._slice_bytes - 1) // line
            for l in range(first, last + 1):
                yield l & l1_mask, l & llc_mask
        for src in (self.data_src, self.perm_tgt, self.perm_r, self.buf1, self.buf2):
            start = src + i * self._bucket_bytes
            first = start // line
            last = (start + self._bucket_bytes - 1) // line
            for l in range(first, last + 1):
                yield None, l & llc_mask

    def _stagger_ok(self, stride_lines: int) -> bool:
        cfg = self.sim.config
        for i in range(self.params.bucket_count):
            l1_load: dict[int, int] = {}
            llc_load: dict[int, int] = {}
            for s1, s2 in self._scatter_line_loads(i, stride_lines):
                if s1 is not None:
                    v = l1_load.get(s1, 0) + 1
                    if v > cfg.l1_ways:
                        return False
                    l1_load[s1] = v
                v = llc_load.get(s2, 0) + 1
                if v > cfg.llc_ways:
                    return False
                llc_load[s2] = v
        return True

    def _find_stagger(self) -> int:
        cfg = self.sim.config
        if self.row_bytes > cfg.l1_capacity:
            return 0  # capacity abort will fire at declare time anyway
        row_lines = self.row_bytes // cfg.line_size
        for pad in range(0, 2 * max(cfg.l1_sets, 64) + 1):
            if self._stagger_ok(row_lines + pad):
                return pad
        raise LayoutInfeasibleError(
            "arrangement",
            "l1",
            f"no row stagger avoids set conflicts for n={self.params.n}",
        )

    # -- transaction plumbing ----------------------------------------------

    def _run(self, decl: TxnDeclaration, body) -> TxnStats:
        try:
            st = run_txn(
                self.sim,
                decl,
                body,
                self.interrupt_model,
                prefetch=self.prefetch,
                retry_cap=self.retry_cap,
            )
        except (RetryCapExceededError, CapacityError) as exc:
            self.stats.append(exc.stats)
            raise
        self.stats.append(st)
        return st

    def _record_plan(self, regions_bases: list[tuple[Region, int]]) -> None:
        # widen to line boundaries so the plan states the true line footprint
        if not self.record_plans:
            return
        line = self.sim.config.line_size
        widened = []
        for region, base in regions_bases:
            lo = base - base % line
            hi = _round_lines(base + region.size, line)
            widened.append((Region(region.name, hi - lo, region.kind), lo))
        self.plans.append(LayoutPlan(tuple(widened)))

    def _slice_addr(self, src_bucket: int, dst_bucket: int) -> int:
        return (
            self.inter
            + dst_bucket * self.stride_bytes
            + src_bucket * self._slice_bytes
        )

    def scatter_txn(self, i: int, src: int, pi: int) -> None:
        """Move source bucket i into its per-destination slices."""
        p = self.params
        bc = p.bucket_count
        bb = self._bucket_bytes
        line = self.sim.config.line_size
        src0 = src + i * bb
        pi0 = pi + i * bb
        reads = [(src0, bb), (pi0, bb)]
        writes = [(self._slice_addr(i, j), self._slice_bytes) for j in range(bc)]
        decl = TxnDeclaration.of(reads, writes, line)
        self._record_plan(
            [
                (Region("src_bucket", bb, READ_ONLY), src0),
                (Region("pi_bucket", bb, READ_ONLY), pi0),
            ]
            + [
                (Region(f"slice_{j}", self._slice_bytes, READ_WRITE),
                 self._slice_addr(i, j))
                for j in range(bc)
            ]
        )

        slice_len = p.slice_len
        dummy_word = pack(p.dummy_tag, 0)

        def body(ctx) -> None:
            cursors = [0] * bc
            for k in range(bc):
                dest = ctx.read(pi0 + k * WORD_BYTES)
                val = ctx.read(src0 + k * WORD_BYTES)
                j = dest // bc
                c = cursors[j]
                if c >= slice_len:
                    raise BucketOverflowError(i, j, slice_len)
                ctx.write(
                    self._slice_addr(i, j) + c * WORD_BYTES, pack(dest, val)
                )
                cursors[j] = c + 1
            for j in range(bc):
                base = self._slice_addr(i, j)
                for c in range(cursors[j], slice_len):
                    ctx.write(base + c * WORD_BYTES, dummy_word)

        self._run(decl, body)

    def gather_txn(self, j: int, dst: int) -> None:
        """Drain intermediate row j to its destination bucket, dummy-free
        and ordered by destination index."""
        p = self.params
        bc = p.bucket_count
        row0 = self.inter + j * self.stride_bytes
        dst0 = dst + j * self._bucket_bytes
        line = self.sim.config.line_size
        decl = TxnDeclaration.of(
            [(row0, p.bucket_capacity * WORD_BYTES)],
            [(dst0, self._bucket_bytes)],
            line,
        )
        self._record_plan(
            [
                (Region("row", p.bucket_capacity * WORD_BYTES, READ_ONLY), row0),
                (Region("out_bucket", self._bucket_bytes, READ_WRITE), dst0),
            ]
        )
        lo = j * bc
        hi = lo + bc
        dummy = p.dummy_tag

        def body(ctx) -> None:
            found = []
            for s in range(p.bucket_capacity):
                w = ctx.read(row0 + s * WORD_BYTES)
                tag = w >> 32
                if tag == dummy:
                    continue
                if not lo <= tag < hi:
                    raise MalformedIntermediateError(
                        f"tag {tag} does not belong to bucket {j}"
                    )
                found.append(w)
            if len(found) != bc:
                raise MalformedIntermediateError(
                    f"bucket {j} holds {len(found)} elements, expected {bc}"
                )
            found.sort()
            for w in found:
                ctx.write(dst + (w >> 32) * WORD_BYTES, w & VALUE_MASK)

        self._run(decl, body)

    # -- passes --------------------------------------------------------------

    def distribute(self, src: int, pi: int) -> None:
        for i in range(self.params.bucket_count):
            self.scatter_txn(i, src, pi)

    def cleanup(self, dst: int) -> None:
        for j in range(self.params.bucket_count):
            self.gather_txn(j, dst)

    def run_pass(self, src: int, pi: int, dst: int) -> None:
        """One full oblivious move: dst[pi[k]] = src[k]."""
        self.distribute(src, pi)
        self.cleanup(dst)

    def intermediate_rows(self) -> list[list[int]]:
        p = self.params
        return [
            self.sim.peek_words(
                self.inter + j * self.stride_bytes, p.bucket_capacity
            )
            for j in range(p.bucket_count)
        ]

    # -- entry points ----------------------------------------------------------

    def melbourne(self, data, perm) -> list[int]:
        """Apply perm to data obliviously: returns out with
        out[perm[k]] = data[k]."""
        p = self.params
        _check_values(data, p.n)
        _check_perm(perm, p.n)
        self.sim.poke_words(self.data_src, data)
        self.sim.poke_words(self.perm_tgt, perm)
        for attempt in range(self.OVERFLOW_CAP):
            pi_r = gen_perm(p.n, _attempt_seed(p.seed, attempt))
            self.sim.poke_words(self.perm_r, pi_r)
            try:
                self.run_pass(self.data_src, self.perm_r, self.buf1)
                self.run_pass(self.perm_tgt, self.perm_r, self.buf2)
                self.run_pass(self.buf1, self.buf2, self.out)
            except BucketOverflowError:
                self.overflow_retries += 1
                continue
            return self.sim.peek_words(self.out, p.n)
        raise OverflowRetriesExceededError(
            f"{self.OVERFLOW_CAP} restarts all overflowed a slice"
        )

    def apply_pass(self, src_vals, pi_vals) -> list[int]:
        """One pass as a standalone call, mostly for tests."""
        p = self.params
        _check_values(src_vals, p.n)
        _check_perm(pi_vals, p.n)
        self.sim.poke_words(self.data_src, src_vals)
        self.sim.poke_words(self.perm_r, pi_vals)
        self.run_pass(self.data_src, self.perm_r, self.out)
        return self.sim.peek_words(self.out, p.n)


def melbourne_shuffle(
    data,
    perm,
    *,
    pad_factor: int = 2,
    seed: int = 0,
    sim: CacheSim | None = None,
    config: CacheConfig | None = None,
    interrupt_model=None,
    prefetch: bool = True,
    staggered: bool = True,
    retry_cap: int = 1024,
) -> list[int]:
    params = ShuffleParams(len(data), pad_factor, seed)
    engine = ShuffleEngine(
        sim or CacheSim(config),
        params,
        prefetch=prefetch,
        staggered=staggered,
        interrupt_model=interrupt_model,
        retry_cap=retry_cap,
    )
    return engine.melbourne(data, perm)


def naive_shuffle(
    data,
    perm,
    sim: CacheSim | None = None,
    *,
    interrupt_model=None,
    retry_cap: int = 1024,
) -> tuple[list[int], TxnStats]:
    """Single unprefetched transaction: read each (perm, data) pair, write
    out[perm[k]].  The body's miss pattern and the commit's write-back
    order both follow the permutation, so the trace is input-dependent as
    soon as the arrays span more than one line.  The declared write set
    outgrows L1 at larger n and the declaration is rejected."""
    n = len(data)
    _check_values(data, n)
    _check_perm(perm, n)
    sim = sim or CacheSim()
    line = sim.config.line_size
    abytes = _round_lines(n * WORD_BYTES, line)
    data0, perm0, out0 = 0, abytes, 2 * abytes
    sim.poke_words(data0, data)
    sim.poke_words(perm0, perm)
    decl = TxnDeclaration.of(
        reads=[(data0, n * WORD_BYTES), (perm0, n * WORD_BYTES)],
        writes=[(out0, n * WORD_BYTES)],
        line_size=line,
    )

    def body(ctx) -> None:
        for k in range(n):
            dest = ctx.read(perm0 + k * WORD_BYTES)
            val = ctx.read(data0 + k * WORD_BYTES)
            ctx.write(out0 + dest * WORD_BYTES, val)

    stats = run_txn(
        sim, decl, body, interrupt_model, prefetch=False, retry_cap=retry_cap
    )
    return sim.peek_words(out0, n), stats


def bubble_shuffle(
    data, perm, sim: CacheSim | None = None
) -> tuple[list[int], int]:
    """Transaction-free baseline: pack (destination, value) words and
    bubble sort by destination with unconditional write-back of both
    compared words.  The address sequence is a fixed function of n, so it
    is oblivious at word granularity without any cache management, at the
    price of n(n-1)/2 compare-swaps.  Returns (output, swap count)."""
    n = len(data)
    _check_values(data, n)
    _check_perm(perm, n)
    sim = sim or CacheSim()
    line = sim.config.line_size
    abytes = _round_lines(n * WORD_BYTES, line)
    data0, perm0, w0, out0 = 0, abytes, 2 * abytes, 3 * abytes
    sim.poke_words(data0, data)
    sim.poke_words(perm0, perm)
    for k in range(n):
        dest = sim.read_word(perm0 + k * WORD_BYTES)
        val = sim.read_word(data0 + k * WORD_BYTES)
        sim.write_word(w0 + k * WORD_BYTES, pack(dest, val))
    swaps = 0
    for end in range(n - 1, 0, -1):
        for k in range(end):
            a = sim.read_word(w0 + k * WORD_BYTES)
            b = sim.read_word(w0 + (k + 1) * WORD_BYTES)
            if (a >> 32) > (b >> 32):
                a, b = b, a
            sim.write_word(w0 + k * WORD_BYTES, a)
            sim.write_word(w0 + (k + 1) * WORD_BYTES, b)
            swaps += 1
    for k in range(n):
        w = sim.read_word(w0 + k * WORD_BYTES)
        sim.write_word(out0 + k * WORD_BYTES, w & VALUE_MASK)
    return sim.peek_words(out0, n), swaps
