"""Flat ``key = value`` run configuration shared by every subcommand."""

from __future__ import annotations

import os
from dataclasses import MISSING, dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable

from .data import SynthConfig
from .decoder import BeamConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Unknown key, unparsable value, or a value outside its allowed range."""


def _opt(default, doc: str):
    return field(default=default, metadata={"doc": doc})


@dataclass
class RunConfig:
    # paths
    output_dir: str = _opt("run", "directory that receives every output")
    data_dir: str = _opt("", "corpus directory (default: <output_dir>/data)")
    train_file: str = _opt("", "training corpus (default: <data_dir>/train.tsv)")
    test_file: str = _opt("", "corpus to decode and score (default: <data_dir>/test.tsv)")
    vocab_file: str = _opt("", "vocabulary file (default: <output_dir>/vocab.txt)")
    priors_file: str = _opt("", "word-prior file (default: <output_dir>/priors.tsv)")
    checkpoint: str = _opt("", "model checkpoint (default: <output_dir>/final.ckpt)")
    checkpoint_b: str = _opt("", "optional single-head checkpoint for attn-kl")
    summaries_file: str = _opt("", "decoded summaries (default: <output_dir>/summaries.txt)")
    trace_file: str = _opt("", "decode trace (default: <output_dir>/trace.txt)")
    scores_a: str = _opt("", "per-example scores of system A for compare")
    scores_b: str = _opt("", "per-example scores of system B for compare")
    score_column: str = _opt("rouge1", "scores column used by compare")
    # synthetic corpus
    seed: int = _opt(1, "seed for corpus generation, initialization, example order and dropout")
    n_examples: int = _opt(2000, "synthetic examples across all splits")
    vocab_core_size: int = _opt(150, "common-word inventory of the synthetic task")
    entity_rate: float = _opt(0.1, "fraction of source tokens that are rare entities")
    synonym_fraction: float = _opt(0.2, "fraction of common words with a target-only synonym")
    zipf_exponent: float = _opt(1.0, "Zipf exponent of common-word frequencies")
    source_len_min: int = _opt(24, "minimum content tokens per source")
    source_len_max: int = _opt(40, "maximum content tokens per source")
    sentence_len_min: int = _opt(6, "minimum sentence length")
    sentence_len_max: int = _opt(10, "maximum sentence length")
    summary_tokens: int = _opt(10, "content tokens copied into each target")
    entity_pool: int = _opt(100000, "number of distinct entity strings")
    # encoding
    vocab_size: int = _opt(200, "generation vocabulary size including reserved tokens")
    max_src: int = _opt(60, "source truncation length")
    max_tgt: int = _opt(20, "target truncation length during training")
    # model and training
    heads: int = _opt(1, "attention heads (head 0 is the pointer)")
    emb_dim: int = _opt(32, "word embedding size")
    hidden_dim: int = _opt(32, "LSTM hidden size per direction")
    learning_rate: float = _opt(0.15, "Adagrad learning rate")
    adagrad_init_accumulator: float = _opt(0.1, "initial Adagrad accumulator")
    max_grad_norm: float = _opt(2.0, "global gradient-norm clip")
    base_steps: int = _opt(3000, "phase-1 (NLL only) updates")
    extension_steps: int = _opt(3000, "phase-2 updates with coverage and pointing terms")
    batch_size: int = _opt(4, "examples per update")
    coverage_on: bool = _opt(True, "enable coverage in phase 2")
    lambda_cov: float = _opt(1.0, "coverage loss weight")
    mode: str = _opt("none", "pointing loss: none, naive or word_prior")
    lambda_p: float | None = _opt(None, "pointing loss weight; auto = 0.05 naive, 0.2 word_prior")
    dropout_rate: float = _opt(0.0, "pointer dropout probability during training")
    eval_every: int = _opt(1, "training-log interval in steps")
    # decoding
    beam_size: int = _opt(4, "beam width")
    max_len: int = _opt(100, "maximum emitted tokens")
    min_len: int = _opt(1, "tokens before STOP is allowed")
    length_normalize: bool = _opt(True, "rank finished beams by log-probability per token")
    # evaluation
    novelty_against: str = _opt("source", "novelty basis: source or reference")
    multiset_novelty: bool = _opt(False, "count every n-gram occurrence instead of distinct n-grams")

    def __post_init__(self):
        if self.novelty_against not in ("source", "reference"):
            raise ConfigError("novelty_against must be 'source' or 'reference'")
        if self.vocab_size <= 4:
            raise ConfigError("vocab_size must exceed 4")
        if self.max_src < 1 or self.max_tgt < 1:
            raise ConfigError("max_src and max_tgt must be >= 1")
        try:
            self.train_config()
            self.beam_config()
            self.synth_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    # derived views ------------------------------------------------------

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: getattr(self, k) for k in names})

    @property
    def model_uses_coverage(self) -> bool:
        """Coverage is part of the trained model only if phase 2 ran with it."""
        return self.coverage_on and self.extension_steps > 0

    def beam_config(self) -> BeamConfig:
        return BeamConfig(self.beam_size, self.max_len, self.min_len, self.length_normalize)

    def synth_config(self) -> SynthConfig:
        cfg = SynthConfig(
            seed=self.seed, n_examples=self.n_examples, vocab_core_size=self.vocab_core_size,
            entity_rate=self.entity_rate, synonym_fraction=self.synonym_fraction,
            zipf_exponent=self.zipf_exponent, source_len_min=self.source_len_min,
            source_len_max=self.source_len_max, sentence_len_min=self.sentence_len_min,
            sentence_len_max=self.sentence_len_max, summary_tokens=self.summary_tokens,
            entity_pool=self.entity_pool,
        )
        if not 0.0 <= cfg.entity_rate <= 1.0 or not 0.0 <= cfg.synonym_fraction <= 1.0:
            raise ValueError("entity_rate and synonym_fraction must lie in [0, 1]")
        if not 1 <= cfg.source_len_min <= cfg.source_len_max or not 1 <= cfg.sentence_len_min <= cfg.sentence_len_max:
            raise ValueError("length ranges need 1 <= min <= max")
        if cfg.n_examples < 0 or cfg.vocab_core_size < 1 or cfg.summary_tokens < 1 or cfg.entity_pool < 1:
            raise ValueError("synthetic sizes must be positive")
        return cfg

    def path(self, key: str) -> Path:
        """Resolve a path key, falling back to its documented default location."""
        value = getattr(self, key)
        if value:
            return Path(value)
        out = Path(self.output_dir)
        data = Path(self.data_dir) if self.data_dir else out / "data"
        defaults = {
            "data_dir": data,
            "train_file": data / "train.tsv",
            "test_file": data / "test.tsv",
            "vocab_file": out / "vocab.txt",
            "priors_file": out / "priors.tsv",
            "checkpoint": out / "final.ckpt",
            "summaries_file": out / "summaries.txt",
            "trace_file": out / "trace.txt",
        }
        if key not in defaults:
            raise ConfigError(f"{key} must be set")
        return defaults[key]


FIELDS = {f.name: f for f in fields(RunConfig)}


def _field_type(name: str) -> str:
    t = FIELDS[name].type
    return t if isinstance(t, str) else getattr(t, "__name__", str(t))


def parse_value(name: str, raw: str) -> Any:
    if name not in FIELDS:
        raise ConfigError(f"unknown config key {name!r}")
    raw = raw.strip()
    kind = _field_type(name)
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind.startswith("float"):  # optional float
            return None if raw.lower() in ("", "auto", "none") else float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r} (expected {kind})") from None


def format_value(value: Any) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def parse_text(text: str, source: str = "<config>") -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = body.split("=", 1)
        key = key.strip()
        if key not in FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = parse_value(key, raw)
    return values


def build(values: dict[str, Any] | None = None, overrides: Iterable[tuple[str, str]] = ()) -> RunConfig:
    merged = dict(values or {})
    for key, raw in overrides:
        key = key.replace("-", "_")
        merged[key] = parse_value(key, raw)
    return RunConfig(**merged)


def load(path: str | os.PathLike | None, overrides: Iterable[tuple[str, str]] = ()) -> RunConfig:
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        values = parse_text(text, str(path))
    return build(values, overrides)


def dumps(cfg: RunConfig, with_docs: bool = False) -> str:
    lines = []
    for f in fields(RunConfig):
        if with_docs:
            lines.append(f"# {f.metadata['doc']}")
        lines.append(f"{f.name} = {format_value(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


def defaults() -> dict[str, Any]:
    return {f.name: f.default for f in fields(RunConfig) if f.default is not MISSING}
