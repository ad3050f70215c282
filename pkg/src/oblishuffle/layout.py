"""Address layout planning for transaction working sets.

A transaction's declared lines must be simultaneously resident and
protected, so associativity is the binding constraint: at most
``l1_ways`` *written* lines may map to any one L1 set, and at most
``llc_ways`` declared lines to any one LLC set.  The planner places a
list of named regions so both bounds hold.  Read-only regions consume
only LLC ways because clean pinned lines can be demoted out of L1.

Planning is two-phase.  Phase one packs all regions contiguously from
address zero; if the resulting set loads are within bounds (common when
the footprint is small relative to a level) that plan wins.  Otherwise
phase two places regions one at a time, first fit, sliding each
candidate base forward one line at a time to rotate its set mapping
until the region fits.  Both phases are pure functions of their inputs.

``check_conflicts`` recounts every placed line from scratch and is kept
free of the planner's incremental bookkeeping so it can serve as an
independent oracle for it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .cache import CacheConfig
from .txn import TxnDeclaration

READ_ONLY = "read"
READ_WRITE = "write"


@dataclass(frozen=True)
class Region:
    name: str
    size: int
    kind: str  # READ_ONLY or READ_WRITE

    def __post_init__(self) -> None:
        if self.size <= 0:
            raise ValueError(f"region {self.name!r} has non-positive size")
        if self.kind not in (READ_ONLY, READ_WRITE):
            raise ValueError(f"region {self.name!r} has bad kind {self.kind!r}")
        if not self.name:
            raise ValueError("region name must be non-empty")


class LayoutInfeasibleError(Exception):
    """No valid placement exists (capacity) or was found (arrangement).

    ``kind`` is "capacity" when a pigeonhole bound already rules every
    placement out, "arrangement" when placement search was exhausted.
    ``level`` names the binding resource: "l1", "llc" or "address-space".
    """

    def __init__(self, kind: str, level: str, detail: str):
        super().__init__(f"layout infeasible ({kind} at {level}): {detail}")
        self.kind = kind
        self.level = level


@dataclass(frozen=True)
class LayoutPlan:
    placements: tuple[tuple[Region, int], ...]

    def base_of(self, name: str) -> int:
        for region, base in self.placements:
            if region.name == name:
                return base
        raise KeyError(name)

    @property
    def assignments(self) -> dict[str, int]:
        return {r.name: base for r, base in self.placements}

    def export_csv(self) -> str:
        lines = ["region_name,base_address,size_bytes"]
        for region, base in self.placements:
            lines.append(f"{region.name},{base},{region.size}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ConflictReport:
    valid: bool
    l1_load: dict[int, int]
    llc_load: dict[int, int]
    offenders: tuple[tuple[str, int, int], ...]  # (level, set_index, load)


def _region_lines(region: Region, line_size: int) -> int:
    return -(-region.size // line_size)


def plan_layout(
    regions: Sequence[Region], config: CacheConfig | None = None
) -> LayoutPlan:
    """Place regions at line-aligned, non-overlapping bases such that no
    cache set is loaded beyond its way count.  Raises LayoutInfeasibleError
    when impossible (capacity) or when the search gives up (arrangement).
    """
    config = config or CacheConfig()
    names = [r.name for r in regions]
    if len(set(names)) != len(names):
        raise ValueError("region names must be unique")
    line = config.line_size

    write_lines = sum(
        _region_lines(r, line) for r in regions if r.kind == READ_WRITE
    )
    total_lines = sum(_region_lines(r, line) for r in regions)
    if write_lines * line > config.l1_capacity:
        raise LayoutInfeasibleError(
            "capacity",
            "l1",
            f"{write_lines * line} write bytes > {config.l1_capacity}",
        )
    if total_lines * line > config.llc_capacity:
        raise LayoutInfeasibleError(
            "capacity",
            "llc",
            f"{total_lines * line} bytes > {config.llc_capacity}",
        )

    contiguous = _contiguous_plan(regions, config)
    if contiguous is not None:
        return contiguous
    return _first_fit_plan(regions, config)


def _contiguous_plan(
    regions: Sequence[Region], config: CacheConfig
) -> LayoutPlan | None:
    line = config.line_size
    l1_mask = config.l1_sets - 1
    llc_mask = config.llc_sets - 1
    l1_load: dict[int, int] = {}
    llc_load: dict[int, int] = {}
    placements = []
    cursor = 0
    for region in regions:
        nlines = _region_lines(region, line)
        if cursor + nlines * line > config.address_space:
            return None
        base_line = cursor // line
        for l in range(base_line, base_line + nlines):
            s = l & llc_mask
            llc_load[s] = llc_load.get(s, 0) + 1
            if llc_load[s] > config.llc_ways:
                return None
            if region.kind == READ_WRITE:
                s1 = l & l1_mask
                l1_load[s1] = l1_load.get(s1, 0) + 1
                if l1_load[s1] > config.l1_ways:
                    return None
        placements.append((region, cursor))
        cursor += nlines * line
    return LayoutPlan(tuple(placements))


def _first_fit_plan(
    regions: Sequence[Region], config: CacheConfig
) -> LayoutPlan:
    line = config.line_size
    l1_mask = config.l1_sets - 1
    llc_mask = config.llc_sets - 1
    max_shift = max(config.l1_sets, config.llc_sets)
    l1_load: dict[int, int] = {}
    llc_load: dict[int, int] = {}
    placements = []
    cursor = 0
    blocked_level = "llc"

    for region in regions:
        nlines = _region_lines(region, line)
        is_write = region.kind == READ_WRITE
        placed = False
        for k in range(max_shift):
            base = cursor + k * line
            if base + nlines * line > config.address_space:
                raise LayoutInfeasibleError(
                    "arrangement",
                    "address-space",
                    f"region {region.name!r} does not fit below "
                    f"{config.address_space}",
                )
            base_line = base // line
            ok = True
            undo: list[tuple[dict, int]] = []
            for l in range(base_line, base_line + nlines):
                s = l & llc_mask
                v = llc_load.get(s, 0) + 1
                if v > config.llc_ways:
                    ok = False
                    blocked_level = "llc"
                    break
                llc_load[s] = v
                undo.append((llc_load, s))
                if is_write:
                    s1 = l & l1_mask
                    v1 = l1_load.get(s1, 0) + 1
                    if v1 > config.l1_ways:
                        ok = False
                        blocked_level = "l1"
                        break
                    l1_load[s1] = v1
                    undo.append((l1_load, s1))
            if ok:
                placements.append((region, base))
                cursor = base + nlines * line
                placed = True
                break
            for d, s in undo:
                d[s] -= 1
        if not placed:
            raise LayoutInfeasibleError(
                "arrangement",
                blocked_level,
                f"no base found for region {region.name!r} within "
                f"{max_shift} line offsets",
            )
    return LayoutPlan(tuple(placements))


def check_conflicts(
    plan: LayoutPlan, config: CacheConfig | None = None
) -> ConflictReport:
    """Recount set loads of a finished plan from scratch.

    Validates three things: no two regions share a line, no LLC set holds
    more than ``llc_ways`` placed lines, and no L1 set holds more than
    ``l1_ways`` written lines.  Deliberately independent of the planner's
    incremental accounting.
    """
    config = config or CacheConfig()
    line = config.line_size
    owner: dict[int, str] = {}
    l1_load: dict[int, int] = {}
    llc_load: dict[int, int] = {}
    offenders: list[tuple[str, int, int]] = []

    for region, base in plan.placements:
        if base % line:
            raise ValueError(f"region {region.name!r} base not line aligned")
        if base < 0 or base + region.size > config.address_space:
            raise ValueError(f"region {region.name!r} outside address space")
        first = base // line
        last = (base + region.size - 1) // line
        for l in range(first, last + 1):
            if l in owner:
                offenders.append(("overlap", l, 2))
            owner[l] = region.name
            s = l & (config.llc_sets - 1)
            llc_load[s] = llc_load.get(s, 0) + 1
            if region.kind == READ_WRITE:
                s1 = l & (config.l1_sets - 1)
                l1_load[s1] = l1_load.get(s1, 0) + 1

    for s, v in sorted(llc_load.items()):
        if v > config.llc_ways:
            offenders.append(("llc", s, v))
    for s, v in sorted(l1_load.items()):
        if v > config.l1_ways:
            offenders.append(("l1", s, v))
    return ConflictReport(
        valid=not offenders,
        l1_load=l1_load,
        llc_load=llc_load,
        offenders=tuple(offenders),
    )


def decl_from_plan(plan: LayoutPlan, line_size: int = 64) -> TxnDeclaration:
    """Bridge a placed layout to a transaction declaration: every region
    becomes one byte range on the matching side."""
    reads = []
    writes = []
    for region, base in plan.placements:
        if region.kind == READ_WRITE:
            writes.append((base, region.size))
        else:
            reads.append((base, region.size))
    return TxnDeclaration.of(reads=reads, writes=writes, line_size=line_size)
