"""Synthetic benchmark instances.

* ``gen_binary_bench``: 5-bit strings under the constraint "00000 or 1 followed
  by any four bits" (17 valid strings) with a uniform bit model.
* ``gen_heavy_prefix_instance``: four API leaves where the heavy first token only
  leads to a low-probability valid leaf.
* ``random_instance``: small random table model plus random trie, for oracle
  comparisons.
* ``gen_api_bench``: two-version API catalog.  Version A accepts the short
  (deprecated) spellings; version B accepts the same APIs only under a fixed
  compatibility prefix, plus native APIs that share namespaces with them.
  Each problem has its own table model that prefers the short spelling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constrainers import TrieConstrainer, build_dfa_from_pattern, build_trie, ingest_api_list
from .core import Constrainer, Prefix, SequenceModel, Vocabulary
from .decode import DecodeConfig, DecodeSession
from .errors import GenerationError
from .models import RandomTableModel, SparseRow, TableModel, UniformModel
from .oracle import em_at_k

BINARY_PATTERN = "(00000)|(1[01]{4})"
EM_KS = (1, 3, 5, 10, 20)


# binary ---------------------------------------------------------------------

@dataclass
class BinaryBenchInstance:
    vocab: Vocabulary
    model: SequenceModel
    constrainer: Constrainer
    max_len: int = 5
    num_valid: int = 17

    @property
    def zeros(self) -> Prefix:
        """Token ids of ``00000`` followed by EOS."""
        return self.vocab.tokenize("00000", add_eos=True)


def gen_binary_bench() -> BinaryBenchInstance:
    vocab = Vocabulary.from_texts(["0", "1"])
    model = UniformModel(vocab, length=5)
    return BinaryBenchInstance(vocab, model, build_dfa_from_pattern(BINARY_PATTERN, vocab))


# heavy-prefix example ---------------------------------------------------------

@dataclass
class HeavyPrefixInstance:
    vocab: Vocabulary
    model: TableModel
    constrainer: TrieConstrainer
    heavy_leaf: Prefix      # where per-step masking mostly ends up
    intended_leaf: Prefix   # argmax of the constrained distribution


def gen_heavy_prefix_instance(heavy: float = 0.6, deprecated: float = 0.99, light_rank: float = 0.95) -> HeavyPrefixInstance:
    """``matrix_rank`` is the model's favourite but invalid; ``linalg.matrix_rank`` is valid.

    The heavy first token ``matrix`` stays valid because ``matrix_power`` is,
    so masking one step at a time sends most samples to ``matrix_power``.
    """
    vocab = Vocabulary.from_texts(["matrix", "_", "rank", "power", "linalg."])
    m, us, rank, power, linalg = (vocab.id_of(t) for t in ["matrix", "_", "rank", "power", "linalg."])
    eos = vocab.eos_id
    v = vocab.size

    def row(**probs):
        out = np.zeros(v)
        for tok, p in probs.items():
            out[int(tok)] = p
        return out

    end = row(**{str(eos): 1.0})
    rows = {
        (): row(**{str(m): heavy, str(linalg): 1.0 - heavy}),
        (m,): row(**{str(us): 1.0}),
        (m, us): row(**{str(rank): deprecated, str(power): 1.0 - deprecated}),
        (m, us, rank): end,
        (m, us, power): end,
        (linalg,): row(**{str(m): 1.0}),
        (linalg, m): row(**{str(us): 1.0}),
        (linalg, m, us): row(**{str(rank): light_rank, str(power): 1.0 - light_rank}),
        (linalg, m, us, rank): end,
        (linalg, m, us, power): end,
    }
    model = TableModel(vocab, rows)
    valid = [(m, us, power), (linalg, m, us, rank), (linalg, m, us, power)]
    return HeavyPrefixInstance(
        vocab, model, build_trie(valid, vocab),
        heavy_leaf=(m, us, power, eos), intended_leaf=(linalg, m, us, rank, eos),
    )


# random small instances -----------------------------------------------------------

@dataclass
class RandomInstance:
    vocab: Vocabulary
    model: RandomTableModel
    constrainer: TrieConstrainer
    max_len: int
    seed: int


def random_instance(seed: int, max_vocab: int = 6, max_len: int = 6, max_strings: int = 24,
                    concentration: float = 1.0) -> RandomInstance:
    """Random table model and random trie over at most ``max_vocab`` tokens (EOS included)."""
    rng = np.random.default_rng([0x5EED, seed])
    v = int(rng.integers(3, max_vocab + 1))
    length = int(rng.integers(2, max_len + 1))
    vocab = Vocabulary.from_texts([chr(ord("a") + i) for i in range(v - 1)])
    n_strings = int(rng.integers(2, max_strings + 1))
    seqs = set()
    for _ in range(n_strings):
        k = int(rng.integers(1, length + 1))
        seqs.add(tuple(int(t) for t in rng.integers(0, v - 1, size=k)))
    model = RandomTableModel(vocab, seed=seed, max_len=length, concentration=concentration)
    return RandomInstance(vocab, model, build_trie(sorted(seqs), vocab), length, seed)


# two-version API catalog ---------------------------------------------------------

@dataclass
class ApiProblem:
    index: int
    api: int                # index into ApiBenchInstance.apis
    model: TableModel
    targets: dict           # version -> token ids incl. EOS
    shared_prefix: bool     # the short spelling's first token is valid in version B


@dataclass
class ApiBenchInstance:
    vocab: Vocabulary
    apis: list              # (namespace token ids, name token id)
    natives: list           # version-B-only APIs, same shape
    compat: Prefix          # mandatory version-B prefix for the old APIs
    problems: list
    params: dict = field(default_factory=dict)
    _constrainers: dict = field(default_factory=dict, repr=False)

    def short_form(self, i: int) -> Prefix:
        ns, name = self.apis[i]
        return tuple(ns) + (name,)

    def long_form(self, i: int) -> Prefix:
        return tuple(self.compat) + self.short_form(i)

    def valid_sequences(self, version: str) -> list:
        if version == "A":
            return [self.short_form(i) for i in range(len(self.apis))]
        if version == "B":
            return [self.long_form(i) for i in range(len(self.apis))] + [
                tuple(ns) + (name,) for ns, name in self.natives
            ]
        raise GenerationError(f"unknown version {version!r}")

    def api_lines(self, version: str) -> list:
        return [self.vocab.render(s) for s in self.valid_sequences(version)]

    def constrainer(self, version: str) -> TrieConstrainer:
        trie = self._constrainers.get(version)
        if trie is None:
            trie = build_trie(self.valid_sequences(version), self.vocab)
            self._constrainers[version] = trie
        return trie

    @property
    def shared_prefix_fraction(self) -> float:
        """Share of problems where the heavy first token survives the version-B constraint."""
        return float(np.mean([p.shared_prefix for p in self.problems]))

    # serialization ---------------------------------------------------------

    def save(self, directory) -> Path:
        """Write one table-model file per problem, the two API lists and a manifest."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        for version in ("A", "B"):
            (out / f"apis_{version}.txt").write_text("\n".join(self.api_lines(version)) + "\n")
        problems = []
        for p in self.problems:
            name = f"problem_{p.index:04d}.json"
            p.model.save(out / name)
            problems.append({
                "index": p.index,
                "api": p.api,
                "model": name,
                "targets": {v: self.vocab.render(t) for v, t in sorted(p.targets.items())},
                "shared_prefix": p.shared_prefix,
            })
        manifest = {
            "format": "api-bench/1",
            "params": self.params,
            "compat": self.vocab.render(self.compat),
            "apis": [self.vocab.render(self.short_form(i)) for i in range(len(self.apis))],
            "natives": [self.vocab.render(tuple(ns) + (n,)) for ns, n in self.natives],
            "problems": problems,
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
        return out

    @classmethod
    def load(cls, directory) -> "ApiBenchInstance":
        base = Path(directory)
        manifest = json.loads((base / "manifest.json").read_text())
        if manifest.get("format") != "api-bench/1":
            raise GenerationError(f"{base}: not an api-bench manifest")
        problems = []
        vocab = None
        for entry in manifest["problems"]:
            model = TableModel.load(base / entry["model"])
            vocab = vocab or model.vocab
            if model.vocab != vocab:
                raise GenerationError(f"{entry['model']}: vocabulary differs from the other problems")
            targets = {v: vocab.tokenize(t, add_eos=True) for v, t in entry["targets"].items()}
            problems.append(ApiProblem(entry["index"], entry["api"], model, targets, entry["shared_prefix"]))
        if vocab is None:
            raise GenerationError(f"{base}: no problems")

        def split(text):
            toks = vocab.tokenize(text)
            return toks[:-1], toks[-1]

        inst = cls(
            vocab=vocab,
            apis=[split(t) for t in manifest["apis"]],
            natives=[split(t) for t in manifest["natives"]],
            compat=vocab.tokenize(manifest["compat"]),
            problems=problems,
            params=manifest["params"],
        )
        # version lists are re-read from disk so hand-edited lists take effect
        for version in ("A", "B"):
            path = base / f"apis_{version}.txt"
            if path.exists():
                inst._constrainers[version] = ingest_api_list(path, vocab.tokenize, vocab)
        return inst


def _namespace_tree(rng, branching: int, depth: int) -> list:
    """Namespace paths (tuples of node ids) grouped by depth; node ids are dense."""
    levels = [[()]]
    next_id = 0
    for _ in range(depth):
        level = []
        for path in levels[-1]:
            for _ in range(branching):
                level.append(path + (next_id,))
                next_id += 1
        levels.append(level)
    return levels[1:]


def gen_api_bench(
    num_apis: int = 419,
    branching: int = 3,
    prefix_len: int = 2,
    seed: int = 0,
    depth: int = 4,
    native_rate: float = 0.5,
    native_density: float = 0.5,
    short_weight: float = 0.6,
    long_weight: float = 0.2,
    num_distractors: int = 4,
    smoothing: float = 0.001,
    default_eos: float = 0.5,
) -> ApiBenchInstance:
    """Two-version API catalog with one table model per API.

    Every API lives in a namespace ``depth`` levels deep at most; its short
    spelling is ``ns...ns.name`` and its version-B spelling puts the
    ``prefix_len`` compatibility tokens in front.  Each namespace gets native
    version-B APIs with probability ``native_rate``, which keeps the short
    spelling's leading tokens valid in version B and makes per-step masking
    wander into a native API.  ``native_rate`` is the share of top-level
    namespaces that hold natives and ``native_density`` the chance that a
    namespace below one of them does.  Problem models give the short spelling
    ``short_weight``, the long one ``long_weight``, split the rest among
    distractors, and mix in ``smoothing`` uniform mass on every row.
    """
    if num_apis < 2:
        raise GenerationError("num_apis must be at least 2")
    if branching < 1 or depth < 1 or prefix_len < 1:
        raise GenerationError("branching, depth and prefix_len must be positive")
    if not (0 < short_weight and 0 < long_weight and short_weight + long_weight < 1):
        raise GenerationError("need positive short/long weights summing below 1")
    if not 0 <= smoothing < 1 or not 0 <= native_rate <= 1 or not 0 <= native_density <= 1 or not 0 < default_eos <= 1:
        raise GenerationError("smoothing, native_rate and default_eos out of range")
    if num_distractors < 1:
        raise GenerationError("need at least one distractor")

    rng = np.random.default_rng([0xA11, seed])
    levels = _namespace_tree(rng, branching, depth)
    namespaces = [path for level in levels for path in level]
    n_ns = len(namespaces)

    # APIs: pick a depth uniformly, then a namespace at that depth
    api_ns = []
    for _ in range(num_apis):
        d = int(rng.integers(0, depth))
        api_ns.append(levels[d][int(rng.integers(0, len(levels[d])))])
    # natives live under a fixed share of the top-level namespaces; the first
    # API's namespace always has one so small instances show the failure mode
    tops = sorted({path[0] for path in namespaces})
    n_top = max(1, min(len(tops) - 1, int(round(native_rate * len(tops)))))
    chosen = set(rng.choice(tops, size=n_top, replace=False).tolist())
    if api_ns[0][0] not in chosen:
        chosen.discard(min(chosen))
        chosen.add(api_ns[0][0])
    has_native = np.array([path[0] in chosen and rng.random() < native_density for path in namespaces])
    has_native[namespaces.index(api_ns[0])] = True
    native_ns = []
    for j in np.nonzero(has_native)[0]:
        for _ in range(int(rng.integers(1, 3))):
            native_ns.append(namespaces[int(j)])

    compat_texts = ["compat.", "v1."] + [f"k{i}." for i in range(2, prefix_len)]
    texts = compat_texts[:prefix_len]
    texts += [f"ns{j}." for j in range(n_ns)]
    texts += [f"fn{i}" for i in range(num_apis)]
    texts += [f"op{i}" for i in range(len(native_ns))]
    vocab = Vocabulary.from_texts(texts)
    eos = vocab.eos_id
    compat = tuple(range(prefix_len))
    ns_base = prefix_len
    fn_base = ns_base + n_ns
    op_base = fn_base + num_apis

    def ns_tokens(path):
        return tuple(ns_base + j for j in path)

    apis = [(ns_tokens(api_ns[i]), fn_base + i) for i in range(num_apis)]
    natives = [(ns_tokens(native_ns[i]), op_base + i) for i in range(len(native_ns))]
    natives_in = {}
    for ns, name in natives:
        natives_in.setdefault(ns, []).append(ns + (name,))
    native_prefixes = {ns[:k] for ns, _ in natives for k in range(1, len(ns) + 1)}

    inst = ApiBenchInstance(
        vocab=vocab, apis=apis, natives=natives, compat=compat, problems=[],
        params=dict(num_apis=num_apis, branching=branching, prefix_len=prefix_len, seed=seed,
                    depth=depth, native_rate=native_rate, native_density=native_density, short_weight=short_weight,
                    long_weight=long_weight, num_distractors=num_distractors,
                    smoothing=smoothing, default_eos=default_eos),
    )
    v = vocab.size
    default = SparseRow((eos,), (default_eos + (1 - default_eos) / v,), (1 - default_eos) / v)
    for i in range(num_apis):
        short = inst.short_form(i)
        long = inst.long_form(i)
        # plausible wrong answers: natives next to the target, then other old APIs either way
        pool = list(natives_in.get(apis[i][0], []))
        others = [j for j in rng.permutation(num_apis)[: 2 * num_distractors].tolist() if j != i]
        for j in others:
            pool.append(inst.short_form(j) if rng.random() < 0.5 else inst.long_form(j))
        distractors = pool[:num_distractors]
        rest = 1.0 - short_weight - long_weight
        shares = rng.dirichlet(np.ones(len(distractors))) * rest
        weighted = [(short, short_weight), (long, long_weight)] + list(zip(distractors, shares))
        inst.problems.append(ApiProblem(
            index=i, api=i,
            model=_candidate_table(vocab, weighted, smoothing, default),
            targets={"A": short + (eos,), "B": long + (eos,)},
            shared_prefix=short[:1] in native_prefixes,
        ))
    return inst


def _candidate_table(vocab: Vocabulary, weighted: list, smoothing: float, default: SparseRow) -> TableModel:
    """Table model whose sequence distribution is ``weighted``, smoothed row by row."""
    eos = vocab.eos_id
    v = vocab.size
    mass: dict = {}
    for seq, w in weighted:
        full = tuple(seq) + (eos,)
        for k in range(len(full)):
            nxt = mass.setdefault(full[:k], {})
            nxt[full[k]] = nxt.get(full[k], 0.0) + float(w)
    fill = smoothing / v
    rows = {}
    for prefix, nxt in mass.items():
        total = sum(nxt.values())
        ids = tuple(sorted(nxt))
        rows[prefix] = SparseRow(ids, tuple((1 - smoothing) * nxt[t] / total + fill for t in ids), fill)
    return TableModel(vocab, rows, default=default)


# evaluation ----------------------------------------------------------------------

@dataclass
class ApiEvalResult:
    strategy: str
    version: str
    em: dict                # k -> EM@k averaged over problems
    greedy_hits: list       # per problem, greedy decode matched the target
    sample_hits: list       # per problem, count of the n samples that matched
    n_samples: int
    model_calls: list       # per sample, greedy decodes included


def evaluate_api_bench(
    inst: ApiBenchInstance,
    version: str,
    strategy: str,
    n_samples: int = 20,
    seed: int = 0,
    max_backtrack: int | None = None,
    share_q: bool = False,
    problems: list | None = None,
    ks: tuple = EM_KS,
) -> ApiEvalResult:
    """EM@1 from one greedy decode per problem; EM@k (k > 1) from ``n_samples`` random ones."""
    constrainer = None if strategy == "unconstrained" else inst.constrainer(version)
    chosen = inst.problems if problems is None else [inst.problems[i] for i in problems]
    greedy_hits, sample_hits, calls = [], [], []
    for prob in chosen:
        target = prob.targets[version]
        cfg = DecodeConfig(strategy=strategy, seed=seed + prob.index, greedy=True,
                           max_backtrack=max_backtrack, share_q=share_q)
        rec = DecodeSession(prob.model, constrainer, cfg).sample()
        greedy_hits.append(rec.tokens == target)
        calls.append(rec.model_calls)
        hits = 0
        if n_samples:
            session = DecodeSession(prob.model, constrainer, cfg.with_(greedy=False))
            for _ in range(n_samples):
                rec = session.sample()
                hits += rec.tokens == target
                calls.append(rec.model_calls)
        sample_hits.append(hits)
    em = {}
    for k in ks:
        if k == 1:
            em[1] = float(np.mean(greedy_hits))
        elif n_samples >= k:
            em[k] = float(np.mean([em_at_k(n_samples, c, k) for c in sample_hits]))
    return ApiEvalResult(strategy, version, em, greedy_hits, sample_hits, n_samples, calls)
