"""Vocabulary, extended-vocabulary encoding, word priors and corpus files."""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, UNK, START, STOP = "[PAD]", "[UNK]", "[START]", "[STOP]"
RESERVED = (PAD, UNK, START, STOP)
PAD_ID, UNK_ID, START_ID, STOP_ID = 0, 1, 2, 3
PERIOD = "."

Example = tuple[list[str], list[str]]


class CorpusFormatError(ValueError):
    pass


class Vocabulary:
    """Fixed generation vocabulary with the four reserved ids first."""

    def __init__(self, tokens: Sequence[str]):
        self._itos = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self._stoi = {t: i for i, t in enumerate(self._itos)}

    def __len__(self) -> int:
        return len(self._itos)

    @property
    def size(self) -> int:
        return len(self._itos)

    def __contains__(self, token: str) -> bool:
        return token in self._stoi

    def lookup(self, token: str) -> int:
        return self._stoi.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self._itos[idx]

    @property
    def tokens(self) -> list[str]:
        return list(self._itos)

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text("".join(t + "\n" for t in self._itos), encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if tuple(lines[:4]) != RESERVED:
            raise CorpusFormatError(f"{path}: vocabulary must start with the reserved tokens")
        return cls(lines[4:])


def build_vocab(corpus: Iterable[Sequence[str]], size: int) -> Vocabulary:
    """Keep the ``size - 4`` most frequent tokens; ties go to the lexicographically smaller."""
    if size <= len(RESERVED):
        raise ValueError(f"vocabulary size must exceed {len(RESERVED)}, got {size}")
    counts: Counter[str] = Counter()
    n_seq = 0
    for seq in corpus:
        n_seq += 1
        counts.update(t for t in seq if t not in RESERVED)
    if n_seq == 0 or not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary([t for t, _ in ranked[: size - len(RESERVED)]])


@dataclass
class EncodedExample:
    source_ids: np.ndarray
    source_ext_ids: np.ndarray
    oov_tokens: list[str]
    target_ids: np.ndarray      # decoder inputs: [START] + target (UNK for OOV)
    target_ext_ids: np.ndarray  # decoder outputs: target + [STOP], extended ids
    source_len_raw: int
    target_len_raw: int
    vocab_size: int

    @property
    def ext_vocab_size(self) -> int:
        return self.vocab_size + len(self.oov_tokens)

    @property
    def source_len(self) -> int:
        return len(self.source_ids)

    @property
    def target_len(self) -> int:
        return len(self.target_ext_ids)


def encode_example(
    src: Sequence[str],
    tgt: Sequence[str],
    vocab: Vocabulary,
    max_src: int,
    max_tgt: int,
) -> EncodedExample:
    if max_src < 1 or max_tgt < 1:
        raise ValueError("max_src and max_tgt must be >= 1")
    src_t = list(src[:max_src])
    tgt_t = list(tgt[:max_tgt])
    if not src_t:
        raise ValueError("empty source after truncation")
    V = len(vocab)
    oov: list[str] = []
    oov_pos: dict[str, int] = {}
    src_ids, src_ext = [], []
    for tok in src_t:
        i = vocab.lookup(tok)
        src_ids.append(i)
        if i == UNK_ID:
            if tok not in oov_pos:
                oov_pos[tok] = len(oov)
                oov.append(tok)
            src_ext.append(V + oov_pos[tok])
        else:
            src_ext.append(i)
    tgt_in = [START_ID]
    tgt_out = []
    for tok in tgt_t:
        i = vocab.lookup(tok)
        tgt_in.append(i)
        tgt_out.append(V + oov_pos[tok] if i == UNK_ID and tok in oov_pos else i)
    tgt_out.append(STOP_ID)
    return EncodedExample(
        source_ids=np.array(src_ids, dtype=np.int64),
        source_ext_ids=np.array(src_ext, dtype=np.int64),
        oov_tokens=oov,
        target_ids=np.array(tgt_in, dtype=np.int64),
        target_ext_ids=np.array(tgt_out, dtype=np.int64),
        source_len_raw=len(src),
        target_len_raw=len(tgt),
        vocab_size=V,
    )


def decode_ids(ids: Iterable[int], vocab: Vocabulary, oov_tokens: Sequence[str]) -> list[str]:
    V = len(vocab)
    return [vocab.token(i) if i < V else oov_tokens[i - V] for i in ids]


# ---------------------------------------------------------------------------
# word priors
# ---------------------------------------------------------------------------


@dataclass
class WordPrior:
    """Corpus frequency per generation-vocabulary id; zero for reserved ids."""

    probs: np.ndarray
    vocab: Vocabulary | None = None

    def __getitem__(self, idx: int) -> float:
        return float(self.probs[idx]) if 0 <= idx < len(self.probs) else 0.0

    def for_positions(self, source_ids: np.ndarray) -> np.ndarray:
        """Prior of the vocabulary word at each source position (UNK and PAD get 0)."""
        out = self.probs[np.asarray(source_ids)]
        return np.where(np.asarray(source_ids) == UNK_ID, 0.0, out)

    def save(self, path: str | os.PathLike) -> None:
        if self.vocab is None:
            raise ValueError("WordPrior.save needs the vocabulary")
        lines = [f"{self.vocab.token(i)}\t{p:.17g}\n" for i, p in enumerate(self.probs)]
        Path(path).write_text("".join(lines), encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike, vocab: Vocabulary) -> "WordPrior":
        probs = np.zeros(len(vocab))
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.split("\n"), 1):
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise CorpusFormatError(f"{path}:{lineno}: expected token<TAB>probability")
            if parts[0] in vocab:
                probs[vocab.lookup(parts[0])] = float(parts[1])
        return cls(probs, vocab)


def compute_word_priors(corpus: Iterable[Sequence[str]], vocab: Vocabulary) -> WordPrior:
    counts: Counter[str] = Counter()
    total = 0
    for seq in corpus:
        counts.update(seq)
        total += len(seq)
    if total == 0:
        raise ValueError("cannot compute word priors from an empty corpus")
    probs = np.zeros(len(vocab))
    for i, tok in enumerate(vocab.tokens):
        if tok not in RESERVED:
            probs[i] = counts.get(tok, 0) / total
    return WordPrior(probs, vocab)


# ---------------------------------------------------------------------------
# corpus files
# ---------------------------------------------------------------------------


def save_corpus(path: str | os.PathLike, examples: Iterable[Example]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for src, tgt in examples:
            fh.write(" ".join(src) + "\t" + " ".join(tgt) + "\n")


def load_corpus(path: str | os.PathLike) -> list[Example]:
    examples = []
    with open(path, encoding="utf-8", newline="\n") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if "\t" not in line:
                raise CorpusFormatError(f"{path}:{lineno}: missing TAB between source and target")
            src, tgt = line.split("\t", 1)
            if "\t" in tgt:
                raise CorpusFormatError(f"{path}:{lineno}: more than one TAB")
            examples.append((src.split(), tgt.split()))
    return examples


# ---------------------------------------------------------------------------
# synthetic task
# ---------------------------------------------------------------------------


@dataclass
class SynthConfig:
    """Desk-scale stand-in for a news summarization corpus.

    Sources are sentences of Zipf-distributed common words interleaved with
    rare entity tokens. The summary is the first ``summary_tokens`` content
    tokens of the source with each synonym-mapped word replaced by its
    target-only synonym. Entities fall outside any realistic generation
    vocabulary, so they can only be copied; synonyms never occur in sources,
    so they can only be generated.
    """

    seed: int = 1
    n_examples: int = 2000
    vocab_core_size: int = 150
    entity_rate: float = 0.1
    synonym_fraction: float = 0.2
    zipf_exponent: float = 1.0
    source_len_min: int = 24
    source_len_max: int = 40
    sentence_len_min: int = 6
    sentence_len_max: int = 10
    summary_tokens: int = 10
    entity_pool: int = 100_000
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    synonym_map: dict[str, str] = field(default_factory=dict)

    def core_words(self) -> list[str]:
        return [f"w{i:03d}" for i in range(self.vocab_core_size)]

    def resolved_synonyms(self) -> dict[str, str]:
        if self.synonym_map:
            return dict(self.synonym_map)
        words = self.core_words()
        n = int(round(self.synonym_fraction * len(words)))
        rng = np.random.default_rng([self.seed, 7])
        picked = sorted(rng.choice(len(words), size=n, replace=False).tolist())
        return {words[i]: f"s{i:03d}" for i in picked}


def synthesize_examples(cfg: SynthConfig) -> list[Example]:
    if not 0.0 <= cfg.entity_rate <= 1.0:
        raise ValueError("entity_rate must lie in [0, 1]")
    rng = np.random.default_rng(cfg.seed)
    words = cfg.core_words()
    ranks = np.arange(1, len(words) + 1, dtype=np.float64)
    zipf = ranks ** -cfg.zipf_exponent
    zipf /= zipf.sum()
    synonyms = cfg.resolved_synonyms()
    out: list[Example] = []
    for _ in range(cfg.n_examples):
        n_tok = int(rng.integers(cfg.source_len_min, cfg.source_len_max + 1))
        src: list[str] = []
        while len(src) < n_tok:
            s_len = int(rng.integers(cfg.sentence_len_min, cfg.sentence_len_max + 1))
            is_ent = rng.random(s_len) < cfg.entity_rate
            core = rng.choice(len(words), size=s_len, p=zipf)
            ents = rng.integers(0, cfg.entity_pool, size=s_len)
            for j in range(s_len):
                src.append(f"E{ents[j]:05d}" if is_ent[j] else words[core[j]])
            src.append(PERIOD)
        tgt: list[str] = []
        n_content = 0
        for tok in src:
            if n_content == cfg.summary_tokens:
                break
            if tok == PERIOD:
                if tgt and tgt[-1] != PERIOD:
                    tgt.append(PERIOD)
                continue
            tgt.append(synonyms.get(tok, tok))
            n_content += 1
        if tgt[-1] != PERIOD:
            tgt.append(PERIOD)
        out.append((src, tgt))
    return out


def generate_synthetic_corpus(cfg: SynthConfig, out_dir: str | os.PathLike) -> dict[str, Path]:
    """Write ``train.tsv``, ``val.tsv`` and ``test.tsv`` under ``out_dir``."""
    examples = synthesize_examples(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = len(examples)
    n_train = int(round(cfg.split[0] * n))
    n_val = int(round(cfg.split[1] * n))
    parts = {
        "train": examples[:n_train],
        "val": examples[n_train : n_train + n_val],
        "test": examples[n_train + n_val :],
    }
    paths = {}
    for name, exs in parts.items():
        paths[name] = out_dir / f"{name}.tsv"
        save_corpus(paths[name], exs)
    return paths
