"""Command-line interface: table formats, exit codes, config files."""

import subprocess
import sys

import pytest

from oblishuffle.cli import main, make_inputs
from oblishuffle.verify import oracle_apply_perm


TOY_GEOMETRY = "line_size=64\nl1_sets=4\nl1_ways=4\nllc_sets=8\nllc_ways=8\n"

# full table for --n-list 16, default seed and cost weight
BENCH_16 = [
    "algo,n,events,txns,aborts,cost",
    "bubble,16,727,0,0,727",
    "melbourne,16,88,24,0,1288",
    "naive,16,8,1,0,58",
]

ABORTS_16 = [
    "variant,n,ac2,ac4,attempts,flag",
    "interrupt-only,16,0,9,33,ok",
    "melbourne,16,0,9,33,ok",
    "no-prefetch,16,0,9,33,ok",
]


def run_cli(capsys, *argv: str) -> tuple[int, str, str]:
    rc = main(list(argv))
    captured = capsys.readouterr()
    return rc, captured.out, captured.err


# -- probe ---------------------------------------------------------------


def test_probe_recovers_default_capacities(capsys):
    rc, out, _ = run_cli(capsys, "probe")
    assert rc == 0
    assert out == "32768 8388608\n"


def test_probe_reads_cache_geometry_file(capsys, tmp_path):
    cfg = tmp_path / "toy.cfg"
    cfg.write_text(TOY_GEOMETRY)
    rc, out, _ = run_cli(capsys, "probe", "--cache-config", str(cfg))
    assert rc == 0
    assert out == "1024 4096\n"  # 64*4*4 and 64*8*8


# -- shuffle -------------------------------------------------------------


def test_shuffle_generated_inputs_print_permuted_values(capsys):
    rc, out, _ = run_cli(capsys, "shuffle", "--n", "16")
    assert rc == 0
    data, perm = make_inputs(16, 0)
    assert out.split() == [str(v) for v in oracle_apply_perm(data, perm)]


def test_shuffle_reads_files_writes_out_and_trace(capsys, tmp_path):
    src = tmp_path / "data.txt"
    src.write_text("5 6 7 8\n")
    pfile = tmp_path / "perm.txt"
    pfile.write_text("2 0 3 1\n")
    dst = tmp_path / "out.txt"
    tr = tmp_path / "trace.csv"
    rc, out, _ = run_cli(
        capsys,
        "shuffle", "--input", str(src), "--perm", str(pfile),
        "--out", str(dst), "--trace", str(tr),
    )
    assert rc == 0
    assert out == ""
    assert dst.read_text().split() == ["6", "8", "5", "7"]
    trace_lines = tr.read_text().splitlines()
    assert trace_lines[0] == "sequence,kind,line_address"
    assert len(trace_lines) > 1


def test_shuffle_input_without_perm_is_usage_error(capsys, tmp_path):
    src = tmp_path / "data.txt"
    src.write_text("1 2 3 4\n")
    rc, _, err = run_cli(capsys, "shuffle", "--input", str(src))
    assert rc == 2
    assert "--perm" in err


def test_shuffle_without_any_input_is_usage_error(capsys):
    rc, _, err = run_cli(capsys, "shuffle")
    assert rc == 2
    assert "--n" in err


def test_shuffle_non_square_size_is_usage_error(capsys):
    rc, _, err = run_cli(capsys, "shuffle", "--n", "10")
    assert rc == 2
    assert "perfect square" in err


def test_shuffle_naive_reports_capacity_abort(capsys):
    # the one-transaction baseline cannot declare 16384-element arrays
    rc, _, err = run_cli(capsys, "shuffle", "--algo", "naive", "--n", "16384")
    assert rc == 1
    assert "shuffle:" in err


# -- bench ---------------------------------------------------------------


def test_bench_small_table_is_frozen(capsys):
    rc, out, _ = run_cli(capsys, "bench", "--n-list", "16")
    assert rc == 0
    assert out.splitlines() == BENCH_16


def test_bench_naive_capacity_wall_row(capsys):
    rc, out, _ = run_cli(capsys, "bench", "--algos", "naive",
                         "--n-list", "16384")
    assert rc == 0
    assert out.splitlines()[1] == "naive,16384,0,1,1,AC3"


def test_bench_output_is_reproducible(capsys):
    argv = ("bench", "--algos", "melbourne,naive", "--n-list", "16,64")
    _, first, _ = run_cli(capsys, *argv)
    _, second, _ = run_cli(capsys, *argv)
    assert first == second


def test_bench_writes_out_file(capsys, tmp_path):
    dst = tmp_path / "table.csv"
    rc, out, _ = run_cli(capsys, "bench", "--n-list", "16",
                         "--out", str(dst))
    assert rc == 0
    assert out == ""
    assert dst.read_text().splitlines() == BENCH_16


def test_bench_unknown_algorithm_is_usage_error(capsys):
    rc, _, err = run_cli(capsys, "bench", "--algos", "quicksort")
    assert rc == 2
    assert "quicksort" in err


def test_bench_bad_n_list_token_is_usage_error(capsys):
    rc, _, err = run_cli(capsys, "bench", "--n-list", "16,x")
    assert rc == 2
    assert "n-list" in err


def test_bench_non_square_n_is_usage_error(capsys):
    rc, _, err = run_cli(capsys, "bench", "--n-list", "12")
    assert rc == 2
    assert "perfect square" in err


# -- aborts --------------------------------------------------------------


def test_aborts_table_is_frozen_and_twins_agree(capsys):
    rc, out, _ = run_cli(capsys, "aborts", "--n-list", "16",
                         "--rate", "0.01")
    assert rc == 0
    lines = out.splitlines()
    assert lines == ABORTS_16
    # same interrupt schedule: the full pipeline and the stripped-down
    # ticker driver must land on identical abort counts
    twin_a = lines[1].split(",")[2:5]
    twin_b = lines[2].split(",")[2:5]
    assert twin_a == twin_b


def test_aborts_reruns_are_identical(capsys):
    argv = ("aborts", "--n-list", "16", "--rate", "0.003", "--seed", "7")
    _, first, _ = run_cli(capsys, *argv)
    _, second, _ = run_cli(capsys, *argv)
    assert first == second


def test_aborts_non_square_n_is_usage_error(capsys):
    rc, _, err = run_cli(capsys, "aborts", "--n-list", "18")
    assert rc == 2
    assert "perfect square" in err


# -- verify --------------------------------------------------------------


def test_verify_melbourne_reports_identical_traces(capsys):
    rc, out, _ = run_cli(capsys, "verify", "--program", "melbourne",
                         "--n", "16", "--trials", "3")
    assert rc == 0
    assert "identical" in out


def test_verify_naive_reports_divergence(capsys):
    rc, out, _ = run_cli(capsys, "verify", "--program", "naive",
                         "--n", "64", "--trials", "3")
    assert rc == 1
    assert "diverge" in out


def test_verify_single_trial_is_usage_error(capsys):
    rc, _, err = run_cli(capsys, "verify", "--trials", "1")
    assert rc == 2
    assert "two inputs" in err


# -- config files ----------------------------------------------------------


@pytest.fixture
def verify_cfg(tmp_path):
    cfg = tmp_path / "verify.cfg"
    cfg.write_text("n=16\ntrials=3\nprogram=melbourne\n")
    return str(cfg)


def test_config_file_supplies_defaults(capsys, verify_cfg):
    rc, out, _ = run_cli(capsys, "verify", "--config", verify_cfg)
    assert rc == 0
    assert "3 trials" in out


def test_explicit_flags_override_config_file(capsys, verify_cfg):
    rc, out, _ = run_cli(capsys, "verify", "--config", verify_cfg,
                         "--program", "naive", "--n", "64")
    assert rc == 1
    assert "naive" in out


def test_unknown_config_key_is_rejected(capsys, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("bogus=1\n")
    rc, _, err = run_cli(capsys, "probe", "--config", str(cfg))
    assert rc == 2
    assert "bogus" in err


def test_config_file_can_zero_cost_weight(capsys, tmp_path):
    cfg = tmp_path / "bench.cfg"
    cfg.write_text("lam=0\nn_list=16\nalgos=melbourne\n")
    rc, out, _ = run_cli(capsys, "bench", "--config", str(cfg))
    assert rc == 0
    assert out.splitlines() == [
        "algo,n,events,txns,aborts,cost",
        "melbourne,16,88,24,0,88",
    ]


# -- entry points ----------------------------------------------------------


def test_unknown_subcommand_exits_two():
    with pytest.raises(SystemExit) as exc_info:
        main(["frobnicate"])
    assert exc_info.value.code == 2


def test_module_entrypoint(tmp_path):
    cfg = tmp_path / "toy.cfg"
    cfg.write_text(TOY_GEOMETRY)
    proc = subprocess.run(
        [sys.executable, "-m", "oblishuffle.cli",
         "probe", "--cache-config", str(cfg)],
        capture_output=True, text=True, timeout=60,
    )
    assert proc.returncode == 0
    assert proc.stdout == "1024 4096\n"
