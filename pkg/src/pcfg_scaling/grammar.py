"""Random PCFG construction, sentence sampling and document packing.

Terminals are token IDs ``1..num_terminals``; ``0`` is reserved as the
sentence separator. Nonterminals live in their own ID space
``0..num_nonterminals - 1`` and nonterminal ``0`` is the start symbol.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .rng import UniformStream, mix

SEPARATOR = 0
START = 0
DEFAULT_MAX_DEPTH = 64
DEFAULT_NONTERMINAL_PROB = 0.3
MAX_TOKEN_ID = 0xFFFF

CORPUS_MAGIC = b"GSC1"
_HEADER = struct.Struct("<4sIII")


class GrammarError(ValueError):
    """Raised for invalid grammar specs or malformed grammar/corpus files."""


@dataclass(frozen=True)
class GrammarSpec:
    """Syntactic constraints for a random PCFG.

    ``nonterminal_prob`` is the chance that an RHS slot holds a nonterminal
    (the slot is otherwise a uniformly drawn terminal). ``None`` draws every
    slot uniformly from terminals and nonterminals pooled together.
    """

    num_nonterminals: int
    num_terminals: int
    max_rhs_options: int
    max_rhs_len: int
    context_length: int = 2048
    seed: int = 0
    nonterminal_prob: float | None = DEFAULT_NONTERMINAL_PROB

    def __post_init__(self):
        for name in ("num_nonterminals", "num_terminals", "max_rhs_options", "max_rhs_len"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise GrammarError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.context_length, int) or self.context_length < 2:
            raise GrammarError(f"context_length must be an integer >= 2, got {self.context_length!r}")
        if self.num_terminals + 1 > MAX_TOKEN_ID + 1:
            raise GrammarError(
                f"num_terminals={self.num_terminals} does not fit 16-bit token IDs "
                f"(max {MAX_TOKEN_ID})"
            )
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise GrammarError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        p = self.nonterminal_prob
        if p is not None and not 0.0 <= p < 1.0:
            raise GrammarError(f"nonterminal_prob must lie in [0, 1), got {p!r}")

    @property
    def vocab_size(self) -> int:
        return self.num_terminals + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "GrammarSpec":
        known = {f for f in cls.__dataclass_fields__}
        missing = {"num_nonterminals", "num_terminals", "max_rhs_options", "max_rhs_len"} - data.keys()
        if missing:
            raise GrammarError(f"grammar spec missing fields: {sorted(missing)}")
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass(frozen=True)
class Symbol:
    kind: str  # "terminal" | "nonterminal"
    id: int

    @property
    def is_terminal(self) -> bool:
        return self.kind == "terminal"

    def __str__(self) -> str:
        return f"t{self.id}" if self.is_terminal else f"N{self.id}"


@dataclass(frozen=True)
class Production:
    lhs: int
    rhs: tuple[Symbol, ...]
    prob: Fraction

    @property
    def all_terminal(self) -> bool:
        return all(s.is_terminal for s in self.rhs)


@dataclass(frozen=True)
class Pcfg:
    spec: GrammarSpec
    productions: tuple[tuple[Production, ...], ...]
    start: int = START
    # Compiled form: terminals as positive IDs, nonterminal n as -(n + 1).
    _codes: tuple[tuple[tuple[int, ...], ...], ...] = field(init=False, repr=False, compare=False)
    _terminal_only: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        codes = []
        terminal_only = []
        for lhs, group in enumerate(self.productions):
            if not group:
                raise GrammarError(f"nonterminal {lhs} has no productions")
            codes.append(tuple(
                tuple(s.id if s.is_terminal else -(s.id + 1) for s in p.rhs) for p in group
            ))
            terminal_only.append(tuple(i for i, p in enumerate(group) if p.all_terminal))
        object.__setattr__(self, "_codes", tuple(codes))
        object.__setattr__(self, "_terminal_only", tuple(terminal_only))

    @property
    def num_productions(self) -> int:
        return sum(len(g) for g in self.productions)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "start": self.start,
            "productions": [
                {
                    "lhs": p.lhs,
                    "rhs": [{"kind": s.kind, "id": s.id} for s in p.rhs],
                    "prob": f"{p.prob.numerator}/{p.prob.denominator}",
                    "prob_float": float(p.prob),
                }
                for group in self.productions
                for p in group
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Pcfg":
        spec = GrammarSpec.from_dict(data["spec"])
        groups: list[list[Production]] = [[] for _ in range(spec.num_nonterminals)]
        for entry in data["productions"]:
            rhs = tuple(Symbol(s["kind"], int(s["id"])) for s in entry["rhs"])
            groups[entry["lhs"]].append(Production(entry["lhs"], rhs, Fraction(entry["prob"])))
        return cls(spec, tuple(tuple(g) for g in groups), start=data.get("start", START))


def _check_pcfg(g: Pcfg) -> None:
    spec = g.spec
    if len(g.productions) != spec.num_nonterminals:
        raise GrammarError("production table does not match num_nonterminals")
    for lhs, group in enumerate(g.productions):
        if not 1 <= len(group) <= spec.max_rhs_options:
            raise GrammarError(f"nonterminal {lhs} has {len(group)} productions")
        if sum(p.prob for p in group) != 1:
            raise GrammarError(f"probabilities of nonterminal {lhs} do not sum to 1")
        for p in group:
            if not 1 <= len(p.rhs) <= spec.max_rhs_len:
                raise GrammarError(f"production of nonterminal {lhs} has length {len(p.rhs)}")
            for s in p.rhs:
                if s.is_terminal and not 1 <= s.id <= spec.num_terminals:
                    raise GrammarError(f"terminal id {s.id} out of range")
                if not s.is_terminal and not 0 <= s.id < spec.num_nonterminals:
                    raise GrammarError(f"nonterminal id {s.id} out of range")


def build_grammar(spec: GrammarSpec) -> Pcfg:
    """Build a random PCFG; a pure function of ``spec``.

    Each nonterminal gets a uniform number of productions in
    ``[1, max_rhs_options]``, each of uniform length in ``[1, max_rhs_len]``.
    A production ``N -> N`` is redrawn: it leaves the language unchanged but
    adds unbounded derivational ambiguity. If none of a nonterminal's
    productions is all-terminal, the nonterminals in its last production are
    redrawn as terminals so that every derivation can be forced to stop.
    """
    s = UniformStream(spec.seed)
    n_nt, n_t = spec.num_nonterminals, spec.num_terminals
    pooled = n_nt + n_t
    p_nt = spec.nonterminal_prob

    def draw_symbol() -> Symbol:
        if p_nt is None:
            x = s.below(pooled)
            return Symbol("terminal", x + 1) if x < n_t else Symbol("nonterminal", x - n_t)
        if s.uniform() < p_nt:
            return Symbol("nonterminal", s.below(n_nt))
        return Symbol("terminal", 1 + s.below(n_t))

    def draw_rhs(lhs: int) -> tuple[Symbol, ...]:
        while True:
            rhs = tuple(draw_symbol() for _ in range(1 + s.below(spec.max_rhs_len)))
            if rhs != (Symbol("nonterminal", lhs),):
                return rhs

    groups = []
    for lhs in range(n_nt):
        k = 1 + s.below(spec.max_rhs_options)
        rhss = [draw_rhs(lhs) for _ in range(k)]
        if not any(all(x.is_terminal for x in rhs) for rhs in rhss):
            rhss[-1] = tuple(
                x if x.is_terminal else Symbol("terminal", 1 + s.below(n_t)) for x in rhss[-1]
            )
        prob = Fraction(1, k)
        groups.append(tuple(Production(lhs, rhs, prob) for rhs in rhss))
    g = Pcfg(spec, tuple(groups))
    _check_pcfg(g)
    return g


class Sentence(NamedTuple):
    tokens: list[int]
    logprob: float
    # (lhs, production index, forced) per expansion, only when recorded
    derivation: list[tuple[int, int, bool]] | None
    truncated: bool


def _as_stream(rng) -> UniformStream:
    if isinstance(rng, UniformStream):
        return rng
    return UniformStream(int(rng))


def sample_sentence(
    pcfg: Pcfg,
    rng,
    max_depth: int = DEFAULT_MAX_DEPTH,
    max_tokens: int | None = None,
    record: bool = False,
) -> Sentence:
    """Sample one sentence by leftmost expansion from the start symbol.

    Nonterminals expanded at depth ``>= max_depth`` may only use their
    all-terminal productions, chosen uniformly among those. With
    ``max_tokens`` the derivation stops once that many tokens are emitted;
    the log-probability then covers only the expansions performed so far.
    """
    stream = _as_stream(rng)
    codes, term_only = pcfg._codes, pcfg._terminal_only
    below = stream.below
    tokens: list[int] = []
    derivation: list[tuple[int, int, bool]] | None = [] if record else None
    logprob = 0.0
    stack = [(-(pcfg.start + 1), 0)]
    limit = max_tokens if max_tokens is not None else math.inf
    while stack:
        sym, depth = stack.pop()
        if sym > 0:
            tokens.append(sym)
            if len(tokens) >= limit:
                return Sentence(tokens, logprob, derivation, bool(stack))
            continue
        lhs = -sym - 1
        options = codes[lhs]
        if depth >= max_depth:
            allowed = term_only[lhs]
            choice = allowed[below(len(allowed))]
            logprob -= math.log(len(allowed))
            forced = True
        else:
            choice = below(len(options))
            if len(options) > 1:
                logprob -= math.log(len(options))
            forced = False
        if derivation is not None:
            derivation.append((lhs, choice, forced))
        child = depth + 1
        for code in reversed(options[choice]):
            stack.append((code, child))
    return Sentence(tokens, logprob, derivation, False)


def pack_document(pcfg: Pcfg, rng, max_depth: int = DEFAULT_MAX_DEPTH) -> np.ndarray:
    """Fill one context window with separator-joined sentences.

    The overflowing sentence is cut at the window boundary. Sentences are
    expanded lazily, so an oversized final sentence costs no more than the
    tokens that are kept.
    """
    stream = _as_stream(rng)
    n = pcfg.spec.context_length
    codes, term_only = pcfg._codes, pcfg._terminal_only
    below = stream.below
    out: list[int] = []
    start = -(pcfg.start + 1)
    while True:
        stack = [(start, 0)]
        while stack:
            sym, depth = stack.pop()
            if sym > 0:
                out.append(sym)
                if len(out) == n:
                    return np.asarray(out, dtype=np.uint16)
                continue
            lhs = -sym - 1
            if depth >= max_depth:
                allowed = term_only[lhs]
                rhs = codes[lhs][allowed[below(len(allowed))]]
            else:
                options = codes[lhs]
                rhs = options[below(len(options))]
            child = depth + 1
            stack.extend((code, child) for code in reversed(rhs))
        out.append(SEPARATOR)
        if len(out) == n:
            return np.asarray(out, dtype=np.uint16)


@dataclass
class Corpus:
    """Fixed-length token documents, one row per document."""

    tokens: np.ndarray
    vocab_size: int

    def __post_init__(self):
        self.tokens = np.ascontiguousarray(self.tokens, dtype=np.uint16)
        if self.tokens.ndim != 2:
            raise GrammarError("corpus tokens must be a 2-D array")

    @property
    def num_docs(self) -> int:
        return self.tokens.shape[0]

    @property
    def context_length(self) -> int:
        return self.tokens.shape[1]

    def __len__(self) -> int:
        return self.num_docs

    def __getitem__(self, i: int) -> np.ndarray:
        return self.tokens[i]

    def __iter__(self):
        return iter(self.tokens)

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(CORPUS_MAGIC, self.context_length, self.num_docs, self.vocab_size)
        return header + self.tokens.astype("<u2", copy=False).tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Corpus":
        if len(data) < _HEADER.size:
            raise GrammarError("corpus file truncated before header")
        magic, ctx, num_docs, vocab = _HEADER.unpack_from(data)
        if magic != CORPUS_MAGIC:
            raise GrammarError(f"bad corpus magic {magic!r}")
        body = data[_HEADER.size:]
        if len(body) != 2 * ctx * num_docs:
            raise GrammarError(
                f"corpus body has {len(body)} bytes, expected {2 * ctx * num_docs}"
            )
        tokens = np.frombuffer(body, dtype="<u2").reshape(num_docs, ctx)
        return cls(tokens.astype(np.uint16), vocab)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Corpus":
        return cls.from_bytes(Path(path).read_bytes())


def _pack_range(pcfg: Pcfg, base_seed: int, indices: Iterable[int], max_depth: int) -> np.ndarray:
    return np.stack([pack_document(pcfg, UniformStream(mix(base_seed, i)), max_depth) for i in indices])


def sample_corpus(
    pcfg: Pcfg,
    num_docs: int,
    base_seed: int,
    max_depth: int = DEFAULT_MAX_DEPTH,
    workers: int | None = None,
) -> Corpus:
    """Sample ``num_docs`` documents; document ``i`` uses stream ``mix(base_seed, i)``.

    ``workers > 1`` spreads documents over processes; the output is identical
    to the sequential result.
    """
    if num_docs < 1:
        raise GrammarError("num_docs must be >= 1")
    if workers and workers > 1 and num_docs > 1:
        from concurrent.futures import ProcessPoolExecutor

        chunks = np.array_split(np.arange(num_docs), min(workers, num_docs))
        with ProcessPoolExecutor(workers) as pool:
            parts = pool.map(
                _pack_range,
                [pcfg] * len(chunks),
                [base_seed] * len(chunks),
                [c.tolist() for c in chunks],
                [max_depth] * len(chunks),
            )
            tokens = np.concatenate(list(parts))
    else:
        tokens = _pack_range(pcfg, base_seed, range(num_docs), max_depth)
    return Corpus(tokens, pcfg.spec.vocab_size)


def derivation_entropy(
    pcfg: Pcfg,
    num_samples: int = 1000,
    seed: int = 0,
    max_depth: int = DEFAULT_MAX_DEPTH,
    max_tokens: int | None = None,
) -> float:
    """Monte-Carlo derivation entropy in bits per token.

    Total ``-log2 p(derivation)`` over ``num_samples`` sentences divided by
    their total token count. Sentences are capped at ``max_tokens`` (default:
    the grammar's context length), which keeps supercritical grammars
    tractable and matches what a packed document can contain. For ambiguous
    grammars this upper-bounds the entropy of the token strings.
    """
    if num_samples < 100:
        raise ValueError("num_samples must be >= 100")
    cap = pcfg.spec.context_length if max_tokens is None else max_tokens
    bits = 0.0
    count = 0
    for i in range(num_samples):
        sent = sample_sentence(pcfg, UniformStream(mix(seed, i)), max_depth, cap)
        bits -= sent.logprob / math.log(2)
        count += len(sent.tokens)
    return bits / count


def load_spec(path: str | Path) -> GrammarSpec:
    return GrammarSpec.from_dict(json.loads(Path(path).read_text()))


def load_suite(path: str | Path) -> list[tuple[dict, GrammarSpec]]:
    """Read a preset suite file: ``{"suite": ..., "rows": [{..., "spec": {...}}]}``."""
    data = json.loads(Path(path).read_text())
    return [(row, GrammarSpec.from_dict(row["spec"])) for row in data["rows"]]


def leftmost_yield(pcfg: Pcfg, derivation: Sequence[tuple[int, int, bool]]) -> list[int]:
    """Rebuild the token string of a recorded (possibly partial) derivation."""
    out: list[int] = []
    stack: list[Symbol] = [Symbol("nonterminal", pcfg.start)]
    steps = iter(derivation)
    while stack:
        sym = stack.pop()
        if sym.is_terminal:
            out.append(sym.id)
            continue
        step = next(steps, None)
        if step is None:
            break
        lhs, choice, _ = step
        if lhs != sym.id:
            raise GrammarError(f"derivation expands N{lhs} where N{sym.id} is leftmost")
        stack.extend(reversed(pcfg.productions[lhs][choice].rhs))
    return out
