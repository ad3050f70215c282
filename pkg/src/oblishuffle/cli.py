"""Command line front end.

Subcommands:

- ``shuffle``: run one algorithm on one input, print or save the output,
  optionally exporting the captured event trace.
- ``bench``: event-count comparison across algorithms and sizes, with a
  retry-weighted cost column.
- ``aborts``: abort-cause breakdown of the oblivious shuffle against its
  unprotected variant and an interrupt-only control.
- ``verify``: trace-equality check over freshly generated inputs.
- ``probe``: recover the cache capacities through the transaction
  interface and print them.

Every run is deterministic given its flags: inputs derive from the seed,
tables are emitted in sorted order, and reruns are byte-identical.
Flags can be preloaded from a ``key=value`` file via ``--config``;
explicit flags win.  Exit status: 0 on success, 1 when a check fails
(trace divergence, output mismatch, retry exhaustion), 2 on usage
errors.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from math import isqrt

import numpy as np

from .cache import CacheConfig, CacheSim
from .shuffle import (
    ShuffleEngine,
    ShuffleParams,
    bubble_shuffle,
    gen_perm,
    naive_shuffle,
)
from .txn import (
    AccessProbability,
    CapacityError,
    RetryCapExceededError,
    TxnDeclaration,
    TxnStats,
    run_txn,
)
from .verify import (
    PROGRAMS,
    capture_trace,
    oracle_apply_perm,
    probe_cache_sizes,
    verify_obliviousness,
)

_MASK64 = (1 << 64) - 1

# bubble is word-granular, so it is costed on a minimal hierarchy where
# every word access meets the memory boundary
BUBBLE_BENCH_CONFIG = CacheConfig(
    line_size=8, l1_sets=1, l1_ways=1, llc_sets=1, llc_ways=1
)

ABORT_VARIANTS = ("interrupt-only", "melbourne", "no-prefetch")


def make_inputs(n: int, seed: int) -> tuple[list[int], list[int]]:
    """Deterministic (data, perm) pair for a given size and seed."""
    key = (seed * 1_000_003 + n) & _MASK64
    rng = np.random.Generator(np.random.Philox(key=(2 * key) & _MASK64))
    data = rng.integers(0, 1 << 32, size=n, dtype=np.uint64).tolist()
    perm = gen_perm(n, (2 * key + 1) & _MASK64)
    return data, perm


# -- bench -------------------------------------------------------------------


@dataclass
class BenchCell:
    algo: str
    n: int
    events: int = 0
    txns: int = 0
    attempts: int = 0
    aborts: int = 0
    capacity_abort: bool = False
    stats: tuple[TxnStats, ...] = ()
    plans: tuple = ()

    def cost(self, lam: float):
        if self.capacity_abort:
            return None
        return self.events + lam * self.attempts


def run_bench_cell(
    algo: str,
    n: int,
    *,
    seed: int = 0,
    pad_factor: int = 2,
    retry_cap: int = 1024,
    record_plans: bool = False,
) -> BenchCell:
    """One (algorithm, size) measurement with its output checked against
    the oracle.  A declaration rejected for capacity becomes a cell with
    ``capacity_abort`` set instead of numbers."""
    data, perm = make_inputs(n, seed)
    expected = oracle_apply_perm(data, perm)
    cell = BenchCell(algo=algo, n=n)

    if algo == "melbourne":
        sim = CacheSim()
        engine = ShuffleEngine(
            sim,
            ShuffleParams(n, pad_factor, seed),
            retry_cap=retry_cap,
            record_plans=record_plans,
        )
        try:
            out = engine.melbourne(data, perm)
        except CapacityError:
            cell.capacity_abort = True
            cell.txns = 1
            cell.aborts = 1
            cell.stats = tuple(engine.stats)
            return cell
        sim.flush_all()
        if out != expected:
            raise RuntimeError(f"melbourne output wrong at n={n}")
        cell.events = len(sim.trace)
        cell.stats = tuple(engine.stats)
        cell.plans = tuple(engine.plans)
        cell.txns = len(engine.stats)
        cell.attempts = sum(s.attempts for s in engine.stats)
        cell.aborts = sum(s.ac2 + s.ac3 + s.ac4 for s in engine.stats)
    elif algo == "naive":
        sim = CacheSim()
        try:
            out, st = naive_shuffle(data, perm, sim, retry_cap=retry_cap)
        except CapacityError as exc:
            cell.capacity_abort = True
            cell.txns = 1
            cell.aborts = 1
            cell.stats = (exc.stats,)
            return cell
        sim.flush_all()
        if out != expected:
            raise RuntimeError(f"naive output wrong at n={n}")
        cell.events = len(sim.trace)
        cell.stats = (st,)
        cell.txns = 1
        cell.attempts = st.attempts
        cell.aborts = st.ac2 + st.ac3 + st.ac4
    elif algo == "bubble":
        sim = CacheSim(BUBBLE_BENCH_CONFIG)
        out, _swaps = bubble_shuffle(data, perm, sim)
        sim.flush_all()
        if out != expected:
            raise RuntimeError(f"bubble output wrong at n={n}")
        cell.events = len(sim.trace)
    else:
        raise ValueError(f"unknown algorithm {algo!r}")
    return cell


def _fmt_num(v) -> str:
    if v is None:
        return "AC3"
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return str(v)


def bench_rows(
    algos,
    n_list,
    *,
    seed: int = 0,
    pad_factor: int = 2,
    lam: float = 50.0,
    retry_cap: int = 1024,
    bubble_max: int = 1024,
) -> list[str]:
    rows = ["algo,n,events,txns,aborts,cost"]
    for algo in sorted(algos):
        for n in sorted(n_list):
            if algo == "bubble" and n > bubble_max:
                continue
            cell = run_bench_cell(
                algo, n, seed=seed, pad_factor=pad_factor, retry_cap=retry_cap
            )
            rows.append(
                f"{cell.algo},{cell.n},{cell.events},{cell.txns},"
                f"{cell.aborts},{_fmt_num(cell.cost(lam))}"
            )
    return rows


# -- aborts ------------------------------------------------------------------


def run_aborts_variant(
    variant: str,
    n: int,
    *,
    seed: int = 0,
    rate: float = 0.0,
    pad_factor: int = 2,
    retry_cap: int = 1024,
) -> dict:
    """One row of the abort experiment, plus bookkeeping fields the table
    does not show (consultations, committed txn count)."""
    data, perm = make_inputs(n, seed)
    model = AccessProbability(rate, (seed * 31 + n) & _MASK64) if rate > 0 else None
    flag = "ok"
    stats: list[TxnStats] = []

    if variant == "melbourne":
        engine = ShuffleEngine(
            CacheSim(),
            ShuffleParams(n, pad_factor, seed),
            interrupt_model=model,
            retry_cap=retry_cap,
        )
        try:
            engine.melbourne(data, perm)
        except RetryCapExceededError:
            flag = "retry-cap"
        stats = engine.stats
    elif variant == "no-prefetch":
        engine = ShuffleEngine(
            CacheSim(),
            ShuffleParams(n, pad_factor, seed),
            prefetch=False,
            staggered=False,
            interrupt_model=model,
            retry_cap=retry_cap,
        )
        try:
            engine.melbourne(data, perm)
        except RetryCapExceededError:
            flag = "retry-cap"
        stats = engine.stats
    elif variant == "interrupt-only":
        # same transaction schedule and per-transaction operation counts as
        # the oblivious shuffle, but bodies only tick: no memory at stake,
        # so every abort it sees is an interrupt
        sim = CacheSim()
        decl = TxnDeclaration.of(
            reads=[(0, 8)], line_size=sim.config.line_size
        )
        params = ShuffleParams(n, pad_factor, seed)
        bc = params.bucket_count
        scatter_ops = 2 * bc + params.bucket_capacity
        gather_ops = params.bucket_capacity + bc

        def ticker(k):
            def body(ctx):
                for _ in range(k):
                    ctx.tick()

            return body

        try:
            for _pass in range(3):
                for _i in range(bc):
                    stats.append(
                        run_txn(sim, decl, ticker(scatter_ops), model,
                                retry_cap=retry_cap)
                    )
                for _j in range(bc):
                    stats.append(
                        run_txn(sim, decl, ticker(gather_ops), model,
                                retry_cap=retry_cap)
                    )
        except RetryCapExceededError as exc:
            stats.append(exc.stats)
            flag = "retry-cap"
    else:
        raise ValueError(f"unknown variant {variant!r}")

    return {
        "variant": variant,
        "n": n,
        "ac2": sum(s.ac2 for s in stats),
        "ac4": sum(s.ac4 for s in stats),
        "attempts": sum(s.attempts for s in stats),
        "flag": flag,
        "consultations": model.consultations if model else 0,
        "committed": sum(1 for s in stats if s.committed),
    }


def aborts_rows(
    n_list,
    *,
    seed: int = 0,
    rate: float = 0.001,
    pad_factor: int = 2,
    retry_cap: int = 1024,
    variants=ABORT_VARIANTS,
) -> list[str]:
    rows = ["variant,n,ac2,ac4,attempts,flag"]
    for variant in sorted(variants):
        for n in sorted(n_list):
            r = run_aborts_variant(
                variant,
                n,
                seed=seed,
                rate=rate,
                pad_factor=pad_factor,
                retry_cap=retry_cap,
            )
            rows.append(
                f"{r['variant']},{r['n']},{r['ac2']},{r['ac4']},"
                f"{r['attempts']},{r['flag']}"
            )
    return rows


# -- plumbing ----------------------------------------------------------------


def _csv_ints(text: str, *, squares: bool = False) -> list[int]:
    try:
        values = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))
    if squares:
        for n in values:
            if n < 1 or isqrt(n) ** 2 != n:
                raise argparse.ArgumentTypeError(
                    f"sizes must be perfect squares, got {n}"
                )
    return values


def _emit(lines: list[str], out_path: str | None) -> None:
    text = "\n".join(lines) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load_cache_config(args) -> CacheConfig:
    if getattr(args, "cache_config", None):
        return CacheConfig.from_file(args.cache_config)
    return CacheConfig()


_CONFIG_KEY_TYPES = {
    "n": int,
    "trials": int,
    "seed": int,
    "pad_factor": int,
    "retry_cap": int,
    "bubble_max": int,
    "rate": float,
    "lam": float,
    "n_list": str,
    "algos": str,
    "program": str,
    "algo": str,
    "out": str,
    "input": str,
    "perm": str,
    "trace": str,
    "cache_config": str,
}


def _parse_kv_file(path: str) -> dict:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"malformed config line: {raw!r}")
            key, _, val = line.partition("=")
            key = key.strip().replace("-", "_")
            val = val.strip()
            if key not in _CONFIG_KEY_TYPES:
                raise ValueError(f"unknown config key: {key}")
            values[key] = _CONFIG_KEY_TYPES[key](val)
    return values


def _extract_config_path(argv) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


# -- subcommands -------------------------------------------------------------


def cmd_shuffle(args) -> int:
    config = _load_cache_config(args)
    if args.input:
        with open(args.input, "r", encoding="utf-8") as fh:
            data = [int(tok) for tok in fh.read().split()]
        if not args.perm:
            print("shuffle: --perm is required with --input", file=sys.stderr)
            return 2
        with open(args.perm, "r", encoding="utf-8") as fh:
            perm = [int(tok) for tok in fh.read().split()]
    elif args.n:
        data, perm = make_inputs(args.n, args.seed)
    else:
        print("shuffle: pass --n or --input/--perm", file=sys.stderr)
        return 2

    try:
        trace, out = capture_trace(
            args.algo,
            data,
            perm,
            seed=args.seed,
            pad_factor=args.pad_factor,
            config=config,
        )
    except CapacityError as exc:
        print(f"shuffle: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"shuffle: {exc}", file=sys.stderr)
        return 2
    if out != oracle_apply_perm(data, perm):
        print("shuffle: output does not match the reference", file=sys.stderr)
        return 1
    _emit([str(v) for v in out], args.out)
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            fh.write(trace.export_csv())
    return 0


def cmd_bench(args) -> int:
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    for a in algos:
        if a not in PROGRAMS:
            print(f"bench: unknown algorithm {a!r}", file=sys.stderr)
            return 2
    try:
        n_list = _csv_ints(args.n_list, squares=True)
    except argparse.ArgumentTypeError as exc:
        print(f"bench: bad --n-list: {exc}", file=sys.stderr)
        return 2
    try:
        rows = bench_rows(
            algos,
            n_list,
            seed=args.seed,
            pad_factor=args.pad_factor,
            lam=args.lam,
            retry_cap=args.retry_cap,
            bubble_max=args.bubble_max,
        )
    except RuntimeError as exc:
        print(f"bench: {exc}", file=sys.stderr)
        return 1
    _emit(rows, args.out)
    return 0


def cmd_aborts(args) -> int:
    try:
        n_list = _csv_ints(args.n_list, squares=True)
        rows = aborts_rows(
            n_list,
            seed=args.seed,
            rate=args.rate,
            pad_factor=args.pad_factor,
            retry_cap=args.retry_cap,
        )
    except (argparse.ArgumentTypeError, ValueError) as exc:
        print(f"aborts: {exc}", file=sys.stderr)
        return 2
    _emit(rows, args.out)
    return 0


def cmd_verify(args) -> int:
    config = _load_cache_config(args)
    inputs = [
        make_inputs(args.n, args.seed + 1_000_000_007 * t)
        for t in range(args.trials)
    ]
    factory = None
    if args.rate > 0:
        factory = lambda: AccessProbability(args.rate, args.seed)
    try:
        report = verify_obliviousness(
            args.program,
            inputs,
            seed=args.seed,
            pad_factor=args.pad_factor,
            config=config,
            interrupt_model_factory=factory,
        )
    except ValueError as exc:
        print(f"verify: {exc}", file=sys.stderr)
        return 2
    print(report.summary())
    return 0 if report.all_equal else 1


def cmd_probe(args) -> int:
    config = _load_cache_config(args)
    l1, llc = probe_cache_sizes(
        lambda: CacheSim(config), line_size=config.line_size
    )
    print(f"{l1} {llc}")
    return 0


# -- parser ------------------------------------------------------------------


def build_parser(defaults: dict | None = None) -> argparse.ArgumentParser:
    # subparsers parse into a fresh namespace, so file-provided defaults
    # must be installed on every subparser, not just the root
    parser = argparse.ArgumentParser(
        prog="oblishuffle",
        description="cache-miss-oblivious shuffling on a simulated hierarchy",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = []

    def common(p):
        p.add_argument("--config", help="key=value file of flag defaults")
        p.add_argument("--cache-config", help="key=value cache geometry file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--pad-factor", type=int, default=2)
        p.add_argument("--retry-cap", type=int, default=1024)

    p = sub.add_parser("shuffle", help="run one shuffle")
    subparsers.append(p)
    common(p)
    p.add_argument("--algo", default="melbourne",
                   choices=sorted(PROGRAMS))
    p.add_argument("--n", type=int)
    p.add_argument("--input", help="file of whitespace-separated values")
    p.add_argument("--perm", help="file of whitespace-separated destinations")
    p.add_argument("--out", help="output file (default stdout)")
    p.add_argument("--trace", help="write the captured event trace here")
    p.set_defaults(func=cmd_shuffle)

    p = sub.add_parser("bench", help="event-count comparison table")
    subparsers.append(p)
    common(p)
    p.add_argument("--algos", default="melbourne,naive,bubble")
    p.add_argument("--n-list", default="16,64,256,1024,4096,16384")
    p.add_argument("--lam", type=float, default=50.0,
                   help="cost weight per transaction attempt")
    p.add_argument("--bubble-max", type=int, default=1024,
                   help="skip the quadratic baseline above this size")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("aborts", help="abort-cause breakdown table")
    subparsers.append(p)
    common(p)
    p.add_argument("--n-list", default="256,1024")
    p.add_argument("--rate", type=float, default=0.001,
                   help="per-operation interrupt probability")
    p.add_argument("--out")
    p.set_defaults(func=cmd_aborts)

    p = sub.add_parser("verify", help="trace-equality check")
    subparsers.append(p)
    common(p)
    p.add_argument("--program", default="melbourne",
                   choices=sorted(PROGRAMS))
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--trials", type=int, default=8)
    p.add_argument("--rate", type=float, default=0.0,
                   help="interrupt probability (same seed every trial)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("probe", help="recover cache capacities")
    subparsers.append(p)
    common(p)
    p.set_defaults(func=cmd_probe)

    if defaults:
        for p in subparsers:
            p.set_defaults(**defaults)
    return parser


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    defaults = None
    cfg_path = _extract_config_path(argv)
    if cfg_path:
        try:
            defaults = _parse_kv_file(cfg_path)
        except (OSError, ValueError) as exc:
            print(f"oblishuffle: bad config file: {exc}", file=sys.stderr)
            return 2
    parser = build_parser(defaults)
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
