"""Input checks shared by the estimator and the pipeline."""

from __future__ import annotations

from typing import Sequence

from .data import Example


def check_tokens(doc, name: str = "document", allow_empty: bool = False) -> list[str]:
    """Accept a whitespace-tokenized string or a sequence of string tokens."""
    if isinstance(doc, str):
        tokens = doc.split()
    elif isinstance(doc, (list, tuple)):
        if not all(isinstance(t, str) for t in doc):
            raise TypeError(f"{name} tokens must be strings")
        if any(not t or any(c.isspace() for c in t) for t in doc):
            raise ValueError(f"{name} tokens must be nonempty and contain no whitespace")
        tokens = list(doc)
    else:
        raise TypeError(f"{name} must be a string or a list of tokens, got {type(doc).__name__}")
    if not tokens and not allow_empty:
        raise ValueError(f"{name} is empty")
    return tokens


def check_documents(X, name: str = "X", allow_empty: bool = False) -> list[list[str]]:
    if isinstance(X, str):
        raise TypeError(f"{name} must be a sequence of documents, not a single string")
    try:
        docs = list(X)
    except TypeError:
        raise TypeError(f"{name} must be a sequence of documents") from None
    if not docs:
        raise ValueError(f"{name} contains no documents")
    return [check_tokens(d, f"{name}[{i}]", allow_empty) for i, d in enumerate(docs)]


def check_pairs(X, y) -> list[Example]:
    """Validate parallel source and summary collections of equal length."""
    sources = check_documents(X, "X")
    targets = check_documents(y, "y")
    if len(sources) != len(targets):
        raise ValueError(f"X and y have different lengths: {len(sources)} vs {len(targets)}")
    return list(zip(sources, targets))


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return value


def check_fraction(value, name: str, closed_right: bool = False) -> float:
    v = float(value)
    ok = 0.0 <= v <= 1.0 if closed_right else 0.0 <= v < 1.0
    if not ok:
        raise ValueError(f"{name} must lie in [0, 1{']' if closed_right else ')'}, got {value!r}")
    return v


def check_same_length(a: Sequence, b: Sequence, names: tuple[str, str]) -> None:
    if len(a) != len(b):
        raise ValueError(f"{names[0]} and {names[1]} have different lengths: {len(a)} vs {len(b)}")
