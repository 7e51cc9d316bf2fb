"""Latent Dirichlet allocation by collapsed Gibbs sampling.

Documents are title + abstract + keywords + journal name. Each paper gets the
topic with the largest document-topic probability.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

STATE_FORMAT = "osmeter.lda/1"

_EMAIL_RE = re.compile(r"\S+@\S+")
_NON_ALPHA_RE = re.compile(r"[^A-Za-z]+")


def preprocess(text: str, stopwords: frozenset[str] | set[str] = frozenset()) -> list[str]:
    """Drop emails, replace non-letters with spaces, lowercase, split."""
    text = _EMAIL_RE.sub(" ", text or "")
    text = _NON_ALPHA_RE.sub(" ", text).lower()
    return [t for t in text.split() if t and t not in stopwords]


class EmptyVocabularyError(ValueError):
    pass


@dataclass(frozen=True)
class TopicModelState:
    K: int
    vocab: tuple[str, ...]
    doc_topic: np.ndarray
    topic_word: np.ndarray
    alpha: float
    beta: float
    seed: int
    n_iterations: int
    assignments: tuple[np.ndarray, ...] = ()

    def to_json(self) -> dict:
        return {
            "format": STATE_FORMAT,
            "K": self.K,
            "vocab": list(self.vocab),
            "alpha": self.alpha,
            "beta": self.beta,
            "seed": self.seed,
            "n_iterations": self.n_iterations,
            "doc_topic": self.doc_topic.tolist(),
            "topic_word": self.topic_word.tolist(),
            "assignments": [a.tolist() for a in self.assignments],
        }

    @classmethod
    def from_json(cls, data: dict) -> "TopicModelState":
        if data.get("format") != STATE_FORMAT:
            raise ValueError(f"unsupported topic state format {data.get('format')!r}")
        return cls(
            K=int(data["K"]),
            vocab=tuple(data["vocab"]),
            doc_topic=np.asarray(data["doc_topic"], dtype=float),
            topic_word=np.asarray(data["topic_word"], dtype=float),
            alpha=float(data["alpha"]),
            beta=float(data["beta"]),
            seed=int(data["seed"]),
            n_iterations=int(data["n_iterations"]),
            assignments=tuple(np.asarray(a, dtype=np.int64) for a in data.get("assignments", [])),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TopicModelState":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@numba.njit(cache=True)
def _sweep(words, docs, z, n_dk, n_kw, n_k, uniforms, alpha, beta, vbeta):
    K = n_k.shape[0]
    p = np.empty(K)
    for i in range(words.shape[0]):
        w = words[i]
        d = docs[i]
        k = z[i]
        n_dk[d, k] -= 1
        n_kw[k, w] -= 1
        n_k[k] -= 1
        total = 0.0
        for t in range(K):
            total += (n_dk[d, t] + alpha) * (n_kw[t, w] + beta) / (n_k[t] + vbeta)
            p[t] = total
        u = uniforms[i] * total
        k = K - 1
        for t in range(K):
            if u < p[t]:
                k = t
                break
        z[i] = k
        n_dk[d, k] += 1
        n_kw[k, w] += 1
        n_k[k] += 1


def _counts(words: np.ndarray, docs: np.ndarray, z: np.ndarray, D: int, K: int, V: int):
    n_dk = np.zeros((D, K), dtype=np.int64)
    n_kw = np.zeros((K, V), dtype=np.int64)
    np.add.at(n_dk, (docs, z), 1)
    np.add.at(n_kw, (z, words), 1)
    return n_dk, n_kw, n_kw.sum(axis=1)


def estimate(n_dk: np.ndarray, n_kw: np.ndarray, alpha: float, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Smoothed point estimates of document-topic and topic-word distributions."""
    K = n_dk.shape[1]
    V = n_kw.shape[1]
    theta = (n_dk + alpha) / (n_dk.sum(axis=1, keepdims=True) + K * alpha)
    phi = (n_kw + beta) / (n_kw.sum(axis=1, keepdims=True) + V * beta)
    return theta, phi


def build_vocab(corpus: Sequence[Sequence[str]]) -> tuple[str, ...]:
    return tuple(sorted({w for doc in corpus for w in doc}))


def fit_lda(
    corpus: Sequence[Sequence[str]],
    K: int = 15,
    alpha: float | None = None,
    beta: float = 0.01,
    seed: int = 0,
    iterations: int = 1000,
) -> TopicModelState:
    """Fit LDA on tokenised documents. ``alpha`` defaults to ``50 / K``.

    The vocabulary is sorted, initial assignments and all sampling uniforms come
    from ``numpy.random.default_rng(seed)``, so refits are bit-identical.
    """
    if not corpus:
        raise ValueError("corpus is empty")
    if K < 2:
        raise ValueError("K must be at least 2")
    alpha = 50.0 / K if alpha is None else float(alpha)
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")

    vocab = build_vocab(corpus)
    if not vocab:
        raise EmptyVocabularyError("vocabulary is empty after preprocessing")
    index = {w: i for i, w in enumerate(vocab)}
    D, V = len(corpus), len(vocab)
    lengths = np.array([len(doc) for doc in corpus], dtype=np.int64)
    words = np.array([index[w] for doc in corpus for w in doc], dtype=np.int64)
    docs = np.repeat(np.arange(D, dtype=np.int64), lengths)

    rng = np.random.default_rng(seed)
    z = rng.integers(0, K, size=words.shape[0]).astype(np.int64)
    n_dk, n_kw, n_k = _counts(words, docs, z, D, K, V)
    for _ in range(iterations):
        _sweep(words, docs, z, n_dk, n_kw, n_k, rng.random(words.shape[0]), alpha, beta, V * beta)

    theta, phi = estimate(n_dk, n_kw, alpha, beta)
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    assignments = tuple(z[offsets[d]:offsets[d + 1]].copy() for d in range(D))
    return TopicModelState(K, vocab, theta, phi, alpha, float(beta), seed, iterations, assignments)


def state_from_assignments(
    corpus: Sequence[Sequence[str]],
    assignments: Sequence[Sequence[int]],
    K: int,
    vocab: Sequence[str],
    alpha: float,
    beta: float,
    seed: int = 0,
    n_iterations: int = 0,
) -> TopicModelState:
    """Rebuild θ and φ from explicit token-topic assignments."""
    index = {w: i for i, w in enumerate(vocab)}
    words = np.array([index[w] for doc in corpus for w in doc], dtype=np.int64)
    docs = np.repeat(np.arange(len(corpus)), [len(doc) for doc in corpus])
    z = np.concatenate([np.asarray(a, dtype=np.int64) for a in assignments]) if len(words) else np.zeros(0, np.int64)
    n_dk, n_kw, _ = _counts(words, docs, z, len(corpus), K, len(vocab))
    theta, phi = estimate(n_dk, n_kw, alpha, beta)
    return TopicModelState(K, tuple(vocab), theta, phi, alpha, beta, seed, n_iterations,
                           tuple(np.asarray(a, dtype=np.int64) for a in assignments))


def assign_topic(state: TopicModelState, doc_index: int) -> int:
    # np.argmax returns the first maximum, which is the lowest topic id on ties
    return int(np.argmax(state.doc_topic[doc_index]))


def top_words(state: TopicModelState, topic: int, n: int) -> list[str]:
    if n < 1:
        raise ValueError("n must be >= 1")
    row = state.topic_word[topic]
    order = np.lexsort((np.arange(row.shape[0]), -row))
    return [state.vocab[i] for i in order[:n]]


def coherence(state: TopicModelState, corpus: Sequence[Sequence[str]], top_m: int = 10) -> float:
    """UMass coherence averaged over topics.

    For the top ``top_m`` words of a topic ranked by φ, each pair with the
    higher-ranked word ``w_hi`` and lower-ranked ``w_lo`` contributes
    ``log((D(w_lo, w_hi) + 1) / D(w_hi))`` using document co-occurrence
    counts. Pairs whose conditioning word never occurs are skipped.
    """
    if top_m < 2:
        raise ValueError("top_m must be >= 2")
    doc_sets = [set(doc) for doc in corpus]
    scores = []
    for k in range(state.K):
        scores.append(topic_coherence(top_words(state, k, top_m), doc_sets))
    return float(np.mean(scores))


def topic_coherence(words: Sequence[str], doc_sets: Sequence[set[str]]) -> float:
    df = {w: sum(1 for s in doc_sets if w in s) for w in words}
    score = 0.0
    for i, j in combinations(range(len(words)), 2):
        hi, lo = words[i], words[j]
        if df[hi] == 0:
            continue
        co = sum(1 for s in doc_sets if hi in s and lo in s)
        score += float(np.log((co + 1) / df[hi]))
    return score


def document_text(record) -> str:
    """Title, abstract, keywords and journal name joined with equal weight."""
    from osmeter.ingest import JOURNAL_NAMES

    return " ".join([
        record.title,
        record.abstract,
        " ".join(record.keywords),
        JOURNAL_NAMES.get(record.journal, record.journal),
    ])
