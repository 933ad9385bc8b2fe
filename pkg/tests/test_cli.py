import csv
import json

import pytest

from constrained_sampling.cli import (
    EXIT_BUDGET,
    EXIT_CONFIG,
    EXIT_ORACLE,
    EXIT_TOO_LARGE,
    ExperimentConfig,
    main,
)
from constrained_sampling.errors import ConfigError

STRATEGIES = ["unconstrained", "constrained", "asap", "backtrack"]


def read_table(path):
    header, body = {}, []
    for line in path.read_text().splitlines():
        if line.startswith("# "):
            key, _, value = line[2:].partition(": ")
            header[key] = value
        else:
            body.append(line)
    rows = list(csv.DictReader(body, delimiter="\t"))
    return header, rows


def test_sample_writes_four_metric_rows(tmp_path):
    assert main(["sample", "--instance", "binary", "--samples", "200", "--out", str(tmp_path)]) == 0
    header, rows = read_table(tmp_path / "metrics.tsv")
    assert [r["strategy"] for r in rows] == STRATEGIES
    assert header["command"] == "sample" and header["samples"] == "200"
    by = {r["strategy"]: r for r in rows}
    assert float(by["backtrack"]["valid_rate"]) == 1.0
    assert float(by["unconstrained"]["valid_rate"]) < 1.0
    for r in rows:
        assert float(r["calls_min"]) <= float(r["calls_avg"]) <= float(r["calls_max"])
    for s in STRATEGIES:
        assert (tmp_path / f"samples_{s}.tsv").exists()


def test_sample_is_deterministic(tmp_path):
    args = ["sample", "--instance", "heavy-prefix", "--samples", "100", "--seed", "3", "--seed", "4"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ["metrics.tsv"] + [f"samples_{s}.tsv" for s in STRATEGIES]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    _, rows = read_table(tmp_path / "a" / "samples_backtrack.tsv")
    assert len(rows) == 200 and {r["seed"] for r in rows} == {"3", "4"}


def test_identity_reduction_files_are_equal(tmp_path):
    assert main(["sample", "--instance", "binary", "--constraint", "none", "--samples", "300",
                 "--out", str(tmp_path)]) == 0
    blobs = {(tmp_path / f"samples_{s}.tsv").read_bytes() for s in STRATEGIES}
    assert len(blobs) == 1


def test_oracle_metrics_columns(tmp_path):
    assert main(["sample", "--instance", "binary", "--samples", "500", "--oracle",
                 "--strategy", "backtrack", "--strategy", "constrained", "--out", str(tmp_path)]) == 0
    _, rows = read_table(tmp_path / "metrics.tsv")
    by = {r["strategy"]: r for r in rows}
    assert float(by["backtrack"]["tv"]) < float(by["constrained"]["tv"])
    assert float(by["backtrack"]["kl"]) < float(by["constrained"]["kl"])


def test_oracle_check_pass_and_fault_injection(tmp_path):
    args = ["oracle-check", "--instance", "heavy-prefix", "--engine", "kernel", "--samples", "100000"]
    assert main(args + ["--out", str(tmp_path / "ok")]) == 0
    header, rows = read_table(tmp_path / "ok" / "oracle_check.tsv")
    assert header["result"] == "pass" and len(rows) == 3
    assert main(args + ["--skip-rejection", "--out", str(tmp_path / "bad")]) == EXIT_ORACLE
    header, _ = read_table(tmp_path / "bad" / "oracle_check.tsv")
    assert header["result"] == "fail"


def test_kl_series_window(tmp_path):
    assert main(["kl-series", "--instance", "binary", "--samples", "50", "--window", "60",
                 "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["kl-series", "--instance", "binary", "--samples", "200", "--window", "20",
                 "--strategy", "backtrack", "--strategy", "asap", "--out", str(tmp_path)]) == 0
    header, rows = read_table(tmp_path / "kl_series.tsv")
    assert len(rows) == 181
    assert set(rows[0]) == {"start", "kl_backtrack", "kl_asap"}
    assert "mean_kl_backtrack" in header


def test_kl_series_asap_starts_worse_than_backtrack(tmp_path):
    first = {"backtrack": 0.0, "asap": 0.0}
    seeds = [str(s) for s in range(40)]
    for seed in seeds:
        out = tmp_path / seed
        assert main(["kl-series", "--instance", "heavy-prefix", "--samples", "5", "--window", "5", "--seed", seed,
                     "--strategy", "backtrack", "--strategy", "asap", "--out", str(out)]) == 0
        _, rows = read_table(out / "kl_series.tsv")
        for s in first:
            first[s] += float(rows[0][f"kl_{s}"]) / len(seeds)
    # ASAp's first draws follow per-step masking until it has seen the dead branch
    assert first["asap"] > 2 * first["backtrack"]


def test_api_instance_reports_em_at_k(tmp_path):
    cfg = tmp_path / "api.yaml"
    cfg.write_text("instance: api\ninstance_params: {num_apis: 12, seed: 1}\nsamples: 20\n"
                   "strategies: [constrained, backtrack]\n")
    assert main(["sample", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    _, rows = read_table(tmp_path / "out" / "metrics.tsv")
    for r in rows:
        for k in (1, 3, 5, 10, 20):
            assert 0.0 <= float(r[f"em@{k}"]) <= 1.0
    by = {r["strategy"]: r for r in rows}
    assert float(by["backtrack"]["em@1"]) >= float(by["constrained"]["em@1"])


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"instance": "heavy-prefix", "samples": 7, "strategies": ["backtrack"]}))
    assert main(["sample", "--config", str(cfg), "--samples", "9", "--out", str(tmp_path / "o")]) == 0
    _, rows = read_table(tmp_path / "o" / "metrics.tsv")
    assert rows[0]["n"] == "9"
    bad = tmp_path / "bad.yaml"
    bad.write_text("instance: heavy-prefix\nbogus: 1\n")
    assert main(["sample", "--config", str(bad), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert main(["sample", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG


def test_error_exit_codes(tmp_path):
    out = str(tmp_path)
    assert main(["sample", "--instance", "binary", "--top-p", "1.5", "--out", out]) == EXIT_CONFIG
    budget = tmp_path / "b.yaml"
    budget.write_text("instance: binary\nmax_model_calls: 2\nstrategies: [backtrack]\nsamples: 5\n")
    assert main(["sample", "--config", str(budget), "--out", out]) == EXIT_BUDGET
    big = tmp_path / "big.yaml"
    big.write_text("instance: api\ninstance_params: {num_apis: 3}\noracle: true\n"
                   "strategies: [backtrack]\nsamples: 2\noracle_max_len: 12\n")
    assert main(["oracle-check", "--config", str(big), "--out", out]) in (EXIT_CONFIG, EXIT_TOO_LARGE)
    with pytest.raises(SystemExit):
        main(["sample", "--strategy", "beam"])


def test_experiment_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(strategies=["backtrack", "backtrack"])
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping({"samples": 5, "nope": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig(max_backtrack=0)
    assert ExperimentConfig.from_mapping({"samples": 5}).samples == 5
