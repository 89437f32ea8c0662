import csv
import os
import signal
import subprocess
import sys
import time

import numpy as np
import pytest

from fedsvm.cli import main as cli_main
from fedsvm.harness import (
    COMPARE_CSV_COLUMNS,
    ConfigError,
    ROUNDS_CSV_COLUMNS,
    SWEEP_CSV_COLUMNS,
    compare_strategies,
    parse_config,
    run_experiment,
    sv_sweep,
)

BASE = """
[dataset]
kind = synthetic
clients = 6
classes = 3
feature_dim = 4
samples_per_client_mean = 12
samples_per_client_spread = 4
dirichlet_alpha = 0.5
class_separation = 4.0
noise_sigma = 0.8

[model]
embedding_dim = 4
hidden_width = 8

[client]
learning_rate = 0.1

[strategy]
name = {strategy}

[run]
rounds = {rounds}
clients_per_round = 3
target_accuracy = 0.7
seeds = {seeds}
output_dir = {outdir}
{extra_run}
"""


def write_config(tmp_path, name="cfg.ini", strategy="fedavg", rounds=3,
                 seeds="0", extra_run="", extra=""):
    text = BASE.format(strategy=strategy, rounds=rounds, seeds=seeds,
                       outdir=tmp_path / "out", extra_run=extra_run)
    path = tmp_path / name
    path.write_text(text + extra)
    return path


def read_rounds(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def masked(rows):
    # The wall-clock column is the one legitimately nondeterministic field.
    return [row[:-1] for row in rows]


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------

def test_defaults_follow_reference_protocol(tmp_path):
    path = tmp_path / "cfg.ini"
    path.write_text("[dataset]\nclients = 40\n\n[strategy]\nname = svm_margin\n")
    cfg = parse_config(path)
    assert cfg.client.epochs == 1
    assert cfg.clients_per_round == 8
    assert cfg.client.batch_size == 64
    assert cfg.client.learning_rate == 0.1
    assert cfg.build_strategy().server_learning_rate == 1e-2
    assert cfg.svm_penalty_initial == 1.0

    path2 = tmp_path / "cfg2.ini"
    path2.write_text("[dataset]\nclients = 40\n\n[strategy]\nname = fedadam\n")
    assert parse_config(path2).build_strategy().server_learning_rate == 1e-3


def test_unknown_key_is_hard_error(tmp_path):
    path = tmp_path / "typo.ini"
    path.write_text("[dataset]\nclients = 6\n\n[client]\nlearning_rte = 0.1\n")
    with pytest.raises(ConfigError, match="client.learning_rte"):
        parse_config(path)


def test_unknown_section_is_hard_error(tmp_path):
    path = write_config(tmp_path, extra="\n[serverr]\nx = 1\n")
    with pytest.raises(ConfigError, match="serverr"):
        parse_config(path)


def test_too_many_clients_per_round_names_both_fields(tmp_path):
    path = write_config(tmp_path, extra_run="clients_per_round = 50\n")
    # configparser keeps the later duplicate assignment? No: duplicates in
    # one section are an error, so build the config directly instead.
    path = tmp_path / "big.ini"
    path.write_text("[dataset]\nclients = 6\n\n[run]\nclients_per_round = 50\n")
    with pytest.raises(ConfigError) as err:
        parse_config(path)
    assert "clients_per_round" in str(err.value)
    assert "dataset.clients" in str(err.value)


def test_bad_type_reports_field(tmp_path):
    path = tmp_path / "cfg.ini"
    path.write_text("[run]\nrounds = soon\n")
    with pytest.raises(ConfigError, match="run.rounds"):
        parse_config(path)


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "nope.ini")


def test_seed_list_parsing(tmp_path):
    path = write_config(tmp_path, seeds="3, 1 4")
    assert parse_config(path).seeds == (3, 1, 4)


# ---------------------------------------------------------------------------
# run_experiment
# ---------------------------------------------------------------------------

def test_rounds_csv_schema_and_determinism(tmp_path):
    cfg = parse_config(write_config(tmp_path, strategy="svm_margin", rounds=3,
                                    seeds="0 1"))
    out1 = run_experiment(cfg, tmp_path / "a")
    out2 = run_experiment(cfg, tmp_path / "b")
    rows1 = read_rounds(out1.output_dir / "rounds.csv")
    rows2 = read_rounds(out2.output_dir / "rounds.csv")
    # Golden schema: fixed column names in fixed order.
    assert rows1[0] == ["seed", "round", "strategy", "loss", "accuracy",
                        "f1", "mcc", "lambda", "sv_counts", "ms"]
    assert rows1[0] == ROUNDS_CSV_COLUMNS
    assert masked(rows1) == masked(rows2)
    assert not out1.failed_seeds
    # svm_margin rows carry the penalty coefficient and per-class counts.
    first = rows1[1]
    assert first[ROUNDS_CSV_COLUMNS.index("lambda")] != ""
    counts = first[ROUNDS_CSV_COLUMNS.index("sv_counts")].split(";")
    assert len(counts) == 3


def test_summary_aggregates_match_recomputation(tmp_path):
    cfg = parse_config(write_config(tmp_path, rounds=3, seeds="0 1 2"))
    result = run_experiment(cfg, tmp_path / "agg")
    with open(result.output_dir / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    per_seed = [r for r in rows if r["seed"] not in ("mean", "std")]
    mean_row = next(r for r in rows if r["seed"] == "mean")
    std_row = next(r for r in rows if r["seed"] == "std")
    finals = np.array([float(r["final_accuracy"]) for r in per_seed])
    assert float(mean_row["final_accuracy"]) == pytest.approx(finals.mean(), abs=1e-15)
    assert float(std_row["final_accuracy"]) == pytest.approx(finals.std(), abs=1e-15)


def test_eval_stride_limits_rows_but_keeps_final_round(tmp_path):
    cfg = parse_config(write_config(tmp_path, rounds=5,
                                    extra_run="eval_stride = 2\n"))
    result = run_experiment(cfg, tmp_path / "stride")
    rows = read_rounds(result.output_dir / "rounds.csv")[1:]
    rounds = [int(r[1]) for r in rows]
    assert rounds == [1, 3, 5]


def test_failed_seed_does_not_stop_others(tmp_path, monkeypatch):
    cfg = parse_config(write_config(tmp_path, rounds=2, seeds="0 1"))

    import fedsvm.harness as harness

    original = harness._build_dataset

    def flaky(config, seed):
        if seed == 0:
            raise RuntimeError("injected failure")
        return original(config, seed)

    monkeypatch.setattr(harness, "_build_dataset", flaky)
    result = run_experiment(cfg, tmp_path / "flaky")
    assert [s for s, _ in result.failed_seeds] == [0]
    assert [r.seed for r in result.seed_results] == [1]


@pytest.mark.parametrize("strategy,client_extra", [
    ("fedavg", ""),
    ("fedadam", ""),
    ("fedams", ""),
    ("fedaws", ""),
    ("svm_margin", ""),
    ("fedavg", "variant = prox\nprox_mu = 0.01\n"),
    ("fedavg", "variant = moon\nmoon_coeff = 1.0\n"),
])
def test_every_strategy_runs_end_to_end(tmp_path, strategy, client_extra):
    path = tmp_path / "cfg.ini"
    path.write_text(BASE.format(strategy=strategy, rounds=2, seeds="0",
                                outdir=tmp_path / "out", extra_run="")
                    .replace("learning_rate = 0.1",
                             "learning_rate = 0.1\n" + client_extra))
    result = run_experiment(parse_config(path), tmp_path / "run")
    assert not result.failed_seeds
    assert len(result.seed_results[0].rows) == 2


def test_idx_dataset_through_the_harness(tmp_path):
    import struct

    rng = np.random.default_rng(0)
    n, side = 60, 4
    pixels = rng.integers(0, 256, size=(n, side * side), dtype=np.uint8)
    labels = rng.integers(0, 3, size=n, dtype=np.uint8)
    img = tmp_path / "images.idx"
    lab = tmp_path / "labels.idx"
    img.write_bytes(struct.pack(">IIII", 0x803, n, side, side) + pixels.tobytes())
    lab.write_bytes(struct.pack(">II", 0x801, n) + labels.tobytes())

    path = tmp_path / "idx.ini"
    path.write_text(f"""
[dataset]
kind = idx
images = {img}
labels = {lab}
partition_clients = 6
partition_alpha = 0.5

[model]
embedding_dim = 4
hidden_width = 8

[run]
rounds = 2
clients_per_round = 3
target_accuracy = 0.9
seeds = 0
""")
    result = run_experiment(parse_config(path), tmp_path / "idxrun")
    assert not result.failed_seeds
    assert len(result.seed_results[0].rows) == 2


def test_svm_diagnostics_dump(tmp_path):
    path = write_config(tmp_path, strategy="svm_margin", rounds=2)
    text = path.read_text().replace("name = svm_margin",
                                    "name = svm_margin\nsvm_diagnostics = true")
    path.write_text(text)
    result = run_experiment(parse_config(path), tmp_path / "diag")
    diag = (result.output_dir / "svm_diag.txt").read_text()
    assert "duality_gap" in diag
    assert "# seed 0 round 1" in diag


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------

def test_compare_identical_strategies_identical_rows(tmp_path):
    a = parse_config(write_config(tmp_path, "a.ini", rounds=2,
                                  extra_run="label = first\n"))
    b = parse_config(write_config(tmp_path, "b.ini", rounds=2,
                                  extra_run="label = second\n"))
    rows = compare_strategies([a, b], tmp_path / "cmp")
    strip = lambda row: {k: v for k, v in row.items() if k != "strategy"}
    assert strip(rows[0]) == strip(rows[1])
    with open(tmp_path / "cmp" / "compare.csv") as fh:
        header = fh.readline().strip().split(",")
    assert header == COMPARE_CSV_COLUMNS


def test_compare_fedopt_sgd_unit_rate_equals_fedavg(tmp_path):
    a = parse_config(write_config(tmp_path, "a.ini", rounds=3, seeds="0 1"))
    path = tmp_path / "b2.ini"
    path.write_text(BASE.format(strategy="fedopt", rounds=3, seeds="0 1",
                                outdir=tmp_path / "out", extra_run="")
                    .replace("name = fedopt",
                             "name = fedopt\nserver_optimizer = sgd\n"
                             "server_learning_rate = 1.0"))
    b = parse_config(path)
    rows = compare_strategies([a, b], tmp_path / "cmp2")
    strip = lambda row: {k: v for k, v in row.items() if k != "strategy"}
    assert strip(rows[0]) == strip(rows[1])
    assert rows[1]["strategy"] == "fedopt_sgd"


def test_compare_rejects_mismatched_datasets(tmp_path):
    a = parse_config(write_config(tmp_path, "a.ini"))
    big = write_config(tmp_path, "b.ini")
    text = big.read_text().replace("clients = 6", "clients = 8")
    big.write_text(text)
    b = parse_config(big)
    with pytest.raises(ConfigError, match="differ only in strategy"):
        compare_strategies([a, b], tmp_path / "cmp3")


def test_compare_reports_never_reached_as_gt_rounds(tmp_path):
    a = parse_config(write_config(tmp_path, "a.ini", rounds=2, seeds="0",
                                  extra_run="label = okay\n"))
    crippled_path = tmp_path / "crippled.ini"
    crippled_path.write_text(
        BASE.format(strategy="fedavg", rounds=2, seeds="0",
                    outdir=tmp_path / "out", extra_run="label = crippled\n")
        .replace("learning_rate = 0.1", "learning_rate = 1e-6"))
    b = parse_config(crippled_path)
    rows = compare_strategies([a, b], tmp_path / "cmp4")
    assert rows[1]["rounds_mean"] == ">2"
    assert rows[1]["rounds_std"] == ""


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def test_sweep_grid_and_schema(tmp_path):
    cfg = parse_config(write_config(tmp_path, strategy="svm_margin", rounds=2))
    rows = sv_sweep(cfg, [2, 4], [2, 3], tmp_path / "sweep")
    assert [(r["d"], r["C"]) for r in rows] == [(2, 2), (2, 3), (4, 2), (4, 3)]
    assert all(r["round"] == 2 for r in rows)
    assert all(1 <= r["sv_count"] <= r["C"] for r in rows)
    with open(tmp_path / "sweep" / "sweep.csv") as fh:
        header = fh.readline().strip().split(",")
    assert header == SWEEP_CSV_COLUMNS


def test_sweep_requires_svm_margin(tmp_path):
    cfg = parse_config(write_config(tmp_path, strategy="fedavg"))
    with pytest.raises(ConfigError, match="svm_margin"):
        sv_sweep(cfg, [2], [2], tmp_path / "sweepbad")


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def test_cli_run_and_exit_codes(tmp_path, capsys):
    path = write_config(tmp_path, rounds=2)
    assert cli_main(["run", str(path), "--output-dir", str(tmp_path / "cli")]) == 0
    out = capsys.readouterr().out
    assert "aggregate" in out
    assert cli_main(["run", str(tmp_path / "missing.ini")]) == 1


def test_cli_seed_override(tmp_path):
    path = write_config(tmp_path, rounds=2, seeds="0 1 2")
    assert cli_main(["run", str(path), "--seed-override", "5",
                     "--output-dir", str(tmp_path / "ovr")]) == 0
    rows = read_rounds(tmp_path / "ovr" / "rounds.csv")[1:]
    assert {r[0] for r in rows} == {"5"}


def test_cli_config_error_exit_code(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[dataset]\nclients = 6\n\n[run]\nclients_per_round = 50\n")
    assert cli_main(["run", str(path)]) == 1


def test_killed_run_leaves_parseable_csv_prefix(tmp_path):
    path = write_config(tmp_path, rounds=100_000, seeds="0")
    outdir = tmp_path / "killed"
    proc = subprocess.Popen(
        [sys.executable, "-m", "fedsvm.cli", "run", str(path),
         "--output-dir", str(outdir)],
        stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
    deadline = time.time() + 30
    rounds_csv = outdir / "rounds.csv"
    while time.time() < deadline:
        if rounds_csv.exists() and rounds_csv.stat().st_size > 200:
            break
        time.sleep(0.1)
    os.kill(proc.pid, signal.SIGKILL)
    proc.wait()
    rows = read_rounds(rounds_csv)
    assert rows[0] == ROUNDS_CSV_COLUMNS
    assert len(rows) > 1
    for row in rows[1:]:
        if len(row) == len(ROUNDS_CSV_COLUMNS):
            float(row[3])  # loss parses
