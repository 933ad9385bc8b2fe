"""Command-line entry point: ``sample``, ``oracle-check`` and ``kl-series``.

Every command reads an optional YAML/JSON config whose keys are exactly the
fields of :class:`ExperimentConfig`; command-line flags override it.  Output
is tab-separated with ``# key: value`` header lines and contains no
timestamps, so equal configs give byte-identical files.

Exit codes: 0 success, 2 bad config, 3 budget exhausted, 4 oracle check
failed, 5 instance too large for the oracle.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import bench
from .constrainers import AcceptAll, ingest_api_list
from .core import Constrainer, SequenceModel
from .decode import STRATEGIES, DecodeConfig, DecodeSession
from .decode.session import DEFAULT_MAX_MODEL_CALLS
from .errors import BudgetExceeded, ConfigError, InstanceTooLarge, SamplingError
from .models import TableModel
from .oracle import (
    EmpiricalDistribution,
    chi_square_test,
    enumerate_constrained,
    kl_divergence,
    sliding_window_kl,
    tv_distance,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_ORACLE = 4
EXIT_TOO_LARGE = 5

INSTANCES = ("binary", "heavy-prefix", "random", "api", "files")
ENGINES = ("session", "kernel")


@dataclass
class ExperimentConfig:
    instance: str = "binary"
    instance_params: dict = field(default_factory=dict)
    # "files" instance: a table-model JSON plus an optional API list
    model_file: Optional[str] = None
    api_list: Optional[str] = None
    # "api" instance: load a saved benchmark directory instead of generating one
    bench_dir: Optional[str] = None
    version: str = "B"
    constraint: str = "default"     # "none" swaps in the all-accepting constrainer
    strategies: list = field(default_factory=lambda: list(STRATEGIES))
    samples: int = 1000
    seeds: list = field(default_factory=lambda: [0])
    top_p: float = 1.0
    max_backtrack: Optional[int] = None
    share_q: bool = False
    greedy: bool = False
    max_model_calls: int = DEFAULT_MAX_MODEL_CALLS
    oracle: bool = False
    oracle_max_len: int = 8
    window: int = 100
    engine: str = "session"
    skip_rejection: bool = False
    out: str = "out"

    def __post_init__(self):
        if self.instance not in INSTANCES:
            raise ConfigError(f"instance must be one of {INSTANCES}")
        if not self.strategies:
            raise ConfigError("need at least one strategy")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ConfigError(f"unknown strategy {s!r}")
        if len(set(self.strategies)) != len(self.strategies):
            raise ConfigError("strategies repeat")
        if self.samples < 1:
            raise ConfigError("samples must be at least 1")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.constraint not in ("default", "none"):
            raise ConfigError("constraint must be 'default' or 'none'")
        if self.engine not in ENGINES:
            raise ConfigError(f"engine must be one of {ENGINES}")
        if self.version not in ("A", "B"):
            raise ConfigError("version must be 'A' or 'B'")
        if self.window < 1:
            raise ConfigError("window must be positive")
        # surfaces bad top_p / max_backtrack / budget values early
        self.decode_config(self.strategies[0], self.seeds[0])

    def decode_config(self, strategy: str, seed: int) -> DecodeConfig:
        return DecodeConfig(
            strategy=strategy, seed=int(seed), greedy=self.greedy, top_p=self.top_p,
            max_backtrack=self.max_backtrack, share_q=self.share_q,
            max_model_calls=self.max_model_calls, skip_rejection=self.skip_rejection,
        )

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def load_config(path) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


# instances -------------------------------------------------------------------

@dataclass
class Problem:
    name: str
    model: SequenceModel
    constrainer: Constrainer
    target: tuple | None = None


def build_problems(cfg: ExperimentConfig) -> tuple[list, object]:
    """The problems to decode plus the generated instance (for reporting)."""
    params = dict(cfg.instance_params)
    try:
        if cfg.instance == "binary":
            inst = bench.gen_binary_bench(**params)
            problems = [Problem("binary", inst.model, inst.constrainer)]
        elif cfg.instance == "heavy-prefix":
            inst = bench.gen_heavy_prefix_instance(**params)
            problems = [Problem("heavy-prefix", inst.model, inst.constrainer, inst.intended_leaf)]
        elif cfg.instance == "random":
            params.setdefault("seed", 0)
            inst = bench.random_instance(**params)
            problems = [Problem(f"random-{inst.seed}", inst.model, inst.constrainer)]
        elif cfg.instance == "api":
            inst = bench.ApiBenchInstance.load(cfg.bench_dir) if cfg.bench_dir else bench.gen_api_bench(**params)
            trie = inst.constrainer(cfg.version)
            problems = [Problem(f"api-{p.index:04d}", p.model, trie, p.targets[cfg.version])
                        for p in inst.problems]
        else:
            if not cfg.model_file:
                raise ConfigError("instance 'files' needs model_file")
            model = TableModel.load(cfg.model_file)
            if cfg.api_list:
                trie = ingest_api_list(cfg.api_list, model.vocab.tokenize, model.vocab)
            else:
                trie = AcceptAll(model.vocab)
            inst = None
            problems = [Problem(Path(cfg.model_file).stem, model, trie)]
    except TypeError as exc:
        raise ConfigError(f"bad instance_params: {exc}") from None
    if cfg.constraint == "none":
        problems = [dataclasses.replace(p, constrainer=AcceptAll(p.model.vocab)) for p in problems]
    return problems, inst


# sampling ----------------------------------------------------------------------

@dataclass
class Row:
    problem: str
    seed: int
    index: int
    tokens: tuple
    text: str
    complete: bool
    model_calls: int
    backtracks: int


def run_strategy(problem: Problem, cfg: ExperimentConfig, strategy: str, n: int) -> list:
    rows = []
    use_kernel = cfg.engine == "kernel" and strategy != "unconstrained"
    for seed in cfg.seeds:
        if use_kernel:
            from .fast import PrefixTree, sample_batch

            if cfg.top_p < 1.0:
                raise ConfigError("the kernel engine needs top_p = 1")
            tree = PrefixTree.build(problem.model, problem.constrainer)
            res = sample_batch(tree, n, int(seed), strategy, greedy=cfg.greedy,
                               max_backtrack=cfg.max_backtrack, share_q=cfg.share_q,
                               skip_rejection=cfg.skip_rejection,
                               max_model_calls=cfg.max_model_calls)
            eos = problem.model.vocab.eos_id
            for i, (seq, calls, bts) in enumerate(zip(res.sequences(), res.model_calls.tolist(),
                                                      res.backtracks.tolist())):
                rows.append(Row(problem.name, int(seed), i, seq, problem.model.vocab.render(seq),
                                bool(seq) and seq[-1] == eos, calls, bts))
            continue
        session = DecodeSession(problem.model, problem.constrainer, cfg.decode_config(strategy, seed))
        for _ in range(n):
            rec = session.sample()
            rows.append(Row(problem.name, int(seed), rec.index, rec.tokens, rec.text,
                            rec.complete, rec.model_calls, rec.backtracks))
    return rows


def _fmt(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return "nan" if math.isnan(x) else f"{x:.6f}"
    return str(x)


def write_table(path: Path, header: dict, columns: list, rows: list) -> None:
    lines = [f"# {k}: {_fmt(v) if not isinstance(v, str) else v}" for k, v in header.items()]
    lines.append("\t".join(columns))
    for row in rows:
        lines.append("\t".join(_fmt(row[c]) for c in columns))
    path.write_text("\n".join(lines) + "\n")


SAMPLE_COLUMNS = ["problem", "index", "seed", "complete", "length", "model_calls", "backtracks", "text"]
EM_KS = bench.EM_KS
METRIC_COLUMNS = (
    ["problem", "strategy", "seeds", "n", "valid_rate", "kl", "tv"]
    + [f"em@{k}" for k in EM_KS]
    + ["calls_avg", "calls_min", "calls_max", "backtracks_avg"]
)


def _seed_range(seeds) -> str:
    seeds = [int(s) for s in seeds]
    if seeds == list(range(seeds[0], seeds[0] + len(seeds))) and len(seeds) > 1:
        return f"{seeds[0]}..{seeds[-1]}"
    return ",".join(str(s) for s in seeds)


def _header(cfg: ExperimentConfig, command: str) -> dict:
    head = {"command": command}
    for f in dataclasses.fields(cfg):
        if f.name == "out":
            continue
        value = getattr(cfg, f.name)
        head[f.name] = value if isinstance(value, str) else json.dumps(value, sort_keys=True)
    return head


def _oracle_for(problem: Problem, cfg: ExperimentConfig):
    return enumerate_constrained(problem.model, problem.constrainer, cfg.oracle_max_len)


def cmd_sample(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    problems, _ = build_problems(cfg)
    api = cfg.instance == "api"
    metric_rows = []
    for strategy in cfg.strategies:
        sample_rows = []
        per_problem = []
        for problem in problems:
            rows = run_strategy(problem, cfg, strategy, cfg.samples)
            greedy_hit = None
            if api:
                # EM@1 comes from one greedy decode, EM@k (k > 1) from the random samples
                gcfg = dataclasses.replace(cfg, greedy=True, seeds=[cfg.seeds[0]])
                greedy_rows = run_strategy(problem, gcfg, strategy, 1)
                greedy_hit = greedy_rows[0].tokens == problem.target
            sample_rows.extend(rows)
            per_problem.append((problem, rows, greedy_hit))
        write_table(out / f"samples_{strategy}.tsv", {}, SAMPLE_COLUMNS, [
            {"problem": r.problem, "index": r.index, "seed": r.seed, "complete": r.complete,
             "length": len(r.tokens), "model_calls": r.model_calls, "backtracks": r.backtracks,
             "text": r.text}
            for r in sample_rows
        ])
        metric_rows.append(_metrics_row(cfg, strategy, per_problem, api))
    write_table(out / "metrics.tsv", _header(cfg, "sample"), METRIC_COLUMNS, metric_rows)
    for row in metric_rows:
        print(f"{row['strategy']}: n={row['n']} calls avg {row['calls_avg']:.2f} "
              f"(min {row['calls_min']}, max {row['calls_max']})"
              + (f" EM@1 {row['em@1']:.4f}" if row["em@1"] is not None else ""))
    return EXIT_OK


def _metrics_row(cfg: ExperimentConfig, strategy: str, per_problem: list, api: bool) -> dict:
    from .oracle import em_at_k

    all_rows = [r for _, rows, _ in per_problem for r in rows]
    calls = np.array([r.model_calls for r in all_rows])
    row = {
        "problem": per_problem[0][0].name if len(per_problem) == 1 else f"{len(per_problem)} problems",
        "strategy": strategy,
        "seeds": _seed_range(cfg.seeds),
        "n": len(all_rows),
        "valid_rate": None, "kl": None, "tv": None,
        "calls_avg": float(calls.mean()), "calls_min": int(calls.min()), "calls_max": int(calls.max()),
        "backtracks_avg": float(np.mean([r.backtracks for r in all_rows])),
    }
    for k in EM_KS:
        row[f"em@{k}"] = None
    valid = [r for r in all_rows if r.complete and per_problem[0][0].constrainer.check(r.tokens)] \
        if len(per_problem) == 1 else None
    if valid is not None:
        row["valid_rate"] = len(valid) / len(all_rows)
    if api:
        n = cfg.samples * len(cfg.seeds)
        hits = [sum(r.tokens == p.target for r in rows) for p, rows, _ in per_problem]
        row["em@1"] = float(np.mean([g for _, _, g in per_problem]))
        for k in EM_KS[1:]:
            if n >= k:
                row[f"em@{k}"] = float(np.mean([em_at_k(n, c, k) for c in hits]))
    if cfg.oracle and len(per_problem) == 1:
        problem = per_problem[0][0]
        exact = _oracle_for(problem, cfg)
        emp = EmpiricalDistribution(r.tokens for r in all_rows)
        row["tv"] = tv_distance(emp, exact)
        if len(valid) == len(all_rows):
            row["kl"] = kl_divergence(emp, problem.model, exact.log_z)
    return row


def cmd_oracle_check(cfg: ExperimentConfig, tv_factor: float = 3.0, alpha: float = 0.01) -> int:
    problems, _ = build_problems(cfg)
    if len(problems) != 1:
        raise ConfigError("oracle-check needs a single-problem instance")
    problem = problems[0]
    exact = _oracle_for(problem, cfg)
    rows = run_strategy(problem, cfg, "backtrack", cfg.samples)
    emp = EmpiricalDistribution(r.tokens for r in rows)
    n = emp.total
    tv = tv_distance(emp, exact)
    threshold = tv_factor * math.sqrt(len(exact) / n)
    chi = chi_square_test(emp, exact)
    ok = tv < threshold and chi.pvalue > alpha
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    report = [
        {"sequence": problem.model.vocab.render(s, show_eos=False) or "<empty>",
         "oracle": exact.probs[s], "empirical": emp.freq(s)}
        for s in exact.support
    ]
    head = _header(cfg, "oracle-check")
    head.update(n=str(n), leaves=str(len(exact)), tv=f"{tv:.6f}", tv_threshold=f"{threshold:.6f}",
                chi2_pvalue=f"{chi.pvalue:.6f}", result="pass" if ok else "fail")
    write_table(out / "oracle_check.tsv", head, ["sequence", "oracle", "empirical"], report)
    print(f"{'PASS' if ok else 'FAIL'}: N={n} K={len(exact)} TV={tv:.5f} (< {threshold:.5f}) "
          f"chi2 p={chi.pvalue:.4g} (> {alpha})")
    return EXIT_OK if ok else EXIT_ORACLE


def cmd_kl_series(cfg: ExperimentConfig) -> int:
    problems, _ = build_problems(cfg)
    if len(problems) != 1:
        raise ConfigError("kl-series needs a single-problem instance")
    if cfg.window > cfg.samples * len(cfg.seeds):
        raise ConfigError(f"window {cfg.window} is larger than the {cfg.samples} samples")
    problem = problems[0]
    exact = _oracle_for(problem, cfg)
    series = {}
    for strategy in cfg.strategies:
        rows = run_strategy(problem, cfg, strategy, cfg.samples)
        stream = [r.tokens for r in rows]
        series[strategy] = sliding_window_kl(stream, cfg.window, problem.model, exact.log_z)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    length = len(next(iter(series.values())))
    table = [{"start": x, **{f"kl_{s}": float(v[x]) for s, v in series.items()}} for x in range(length)]
    head = _header(cfg, "kl-series")
    for s, v in series.items():
        head[f"mean_kl_{s}"] = f"{float(np.mean(v)):.6f}"
    write_table(out / "kl_series.tsv", head, ["start"] + [f"kl_{s}" for s in series], table)
    for s, v in series.items():
        print(f"{s}: mean window KL {float(np.mean(v)):.5f} (first {v[0]:.5f}, last {v[-1]:.5f})")
    return EXIT_OK


COMMANDS = {"sample": cmd_sample, "oracle-check": cmd_oracle_check, "kl-series": cmd_kl_series}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="constrained-sampling", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML or JSON file with ExperimentConfig fields")
        p.add_argument("--instance", choices=INSTANCES)
        p.add_argument("--seed", type=int, action="append", help="repeatable; replaces the config's seeds")
        p.add_argument("--samples", type=int)
        p.add_argument("--strategy", action="append", choices=STRATEGIES,
                       help="repeatable; replaces the config's strategies")
        p.add_argument("--top-p", type=float)
        p.add_argument("--max-backtrack", type=int)
        p.add_argument("--share-q", action="store_true", default=None)
        p.add_argument("--greedy", action="store_true", default=None)
        p.add_argument("--version", choices=("A", "B"))
        p.add_argument("--constraint", choices=("default", "none"))
        p.add_argument("--window", type=int)
        p.add_argument("--engine", choices=ENGINES)
        p.add_argument("--skip-rejection", action="store_true", default=None,
                       help="fault injection: never revise held tokens (oracle-check should fail)")
        p.add_argument("--oracle", action="store_true", default=None,
                       help="compare samples against brute-force enumeration")
        p.add_argument("--out")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    data = load_config(args.config) if args.config else {}
    flags = {
        "instance": args.instance, "samples": args.samples, "top_p": args.top_p,
        "max_backtrack": args.max_backtrack, "share_q": args.share_q, "greedy": args.greedy,
        "version": args.version, "constraint": args.constraint, "window": args.window,
        "engine": args.engine, "skip_rejection": args.skip_rejection, "oracle": args.oracle,
        "out": args.out, "seeds": args.seed, "strategies": args.strategy,
    }
    data.update({k: v for k, v in flags.items() if v is not None})
    return ExperimentConfig.from_mapping(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExceeded as exc:
        print(f"budget exhausted: {exc} {exc.diagnostics}", file=sys.stderr)
        return EXIT_BUDGET
    except InstanceTooLarge as exc:
        print(f"refusing oracle: {exc}", file=sys.stderr)
        return EXIT_TOO_LARGE
    except SamplingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
