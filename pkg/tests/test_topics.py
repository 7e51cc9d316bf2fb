from __future__ import annotations

import math

import numpy as np
import pytest

from osmeter.topics import (
    EmptyVocabularyError,
    TopicModelState,
    assign_topic,
    coherence,
    fit_lda,
    preprocess,
    topic_coherence,
    top_words,
)


def test_preprocess_rules():
    assert preprocess("Traffic Flow!! contact a@b.com") == ["traffic", "flow", "contact"]
    assert preprocess("") == []
    assert preprocess("CO2 emissions 2024") == ["co", "emissions"]
    assert preprocess("the bus", frozenset({"the"})) == ["bus"]


def _planted(rng, n_docs=50, vocab=20, length=40):
    half = vocab // 2
    phi = np.zeros((2, vocab))
    # five dominant words per topic
    for k in range(2):
        w = np.full(half, 0.02)
        w[:5] = (1 - 0.02 * (half - 5)) / 5
        phi[k, k * half:(k + 1) * half] = w
    names = [f"w{i:02d}" for i in range(vocab)]
    corpus = []
    for _ in range(n_docs):
        theta = rng.dirichlet([0.2, 0.2])
        z = rng.choice(2, size=length, p=theta)
        corpus.append([names[rng.choice(vocab, p=phi[k])] for k in z])
    return corpus, phi, names


def _match(state, phi_true, names):
    idx = [state.vocab.index(w) for w in names]
    phi = state.topic_word[:, idx]
    sim = phi @ phi_true.T / np.outer(np.linalg.norm(phi, axis=1), np.linalg.norm(phi_true, axis=1))
    mapping = {}
    for f, t in sorted(np.ndindex(sim.shape), key=lambda ij: -sim[ij]):
        if f not in mapping and t not in mapping.values():
            mapping[f] = t
    return mapping, sim


def test_recovery_and_top_words():
    rng = np.random.default_rng(1)
    corpus, phi_true, names = _planted(rng)
    state = fit_lda(corpus, K=2, alpha=0.1, beta=0.01, seed=3, iterations=300)
    mapping, sim = _match(state, phi_true, names)
    assert all(sim[f, t] > 0.9 for f, t in mapping.items())
    for f, t in mapping.items():
        planted = {names[i] for i in np.argsort(-phi_true[t])[:5]}
        assert set(top_words(state, f, 5)) == planted

    # a document drawn only from planted topic 1 lands in the matching fitted topic
    pure = [names[i] for i in rng.choice(20, size=40, p=phi_true[1])]
    state2 = fit_lda(corpus + [pure], K=2, alpha=0.1, beta=0.01, seed=3, iterations=300)
    mapping2, _ = _match(state2, phi_true, names)
    assert mapping2[assign_topic(state2, len(corpus))] == 1


def test_simplex_and_determinism():
    rng = np.random.default_rng(2)
    corpus, _, _ = _planted(rng, n_docs=20)
    a = fit_lda(corpus, K=3, seed=9, iterations=50)
    b = fit_lda(corpus, K=3, seed=9, iterations=50)
    for m in (a.doc_topic, a.topic_word):
        assert np.all(m > 0) and np.allclose(m.sum(axis=1), 1.0)
    assert np.array_equal(a.doc_topic, b.doc_topic) and np.array_equal(a.topic_word, b.topic_word)
    c = fit_lda(corpus, K=3, seed=10, iterations=50)
    assert not np.array_equal(a.doc_topic, c.doc_topic)
    assert a.alpha == pytest.approx(50 / 3)


def test_single_repeated_word():
    state = fit_lda([["traffic"] * 30], K=2, seed=0, iterations=20)
    k = assign_topic(state, 0)
    assert state.topic_word[k, state.vocab.index("traffic")] > 0.99


def test_errors():
    with pytest.raises(ValueError):
        fit_lda([["a"]], K=1)
    with pytest.raises(ValueError):
        fit_lda([], K=2)
    with pytest.raises(EmptyVocabularyError):
        fit_lda([[], []], K=2)


def _state(theta, phi, vocab):
    return TopicModelState(len(phi), tuple(vocab), np.array(theta, float), np.array(phi, float), 0.1, 0.01, 0, 0)


def test_assign_and_top_words_ties():
    s = _state([[0.1, 0.7, 0.2], [0.5, 0.5, 0.0]], [[0.5, 0.3, 0.2]] * 3, ["a", "b", "c"])
    assert assign_topic(s, 0) == 1
    assert assign_topic(s, 1) == 0
    assert top_words(s, 0, 1) == ["a"]
    assert top_words(s, 0, 13) == ["a", "b", "c"]
    tie = _state([[1.0, 0.0]], [[0.4, 0.3, 0.3], [0.2, 0.4, 0.4]], ["x", "y", "z"])
    assert top_words(tie, 1, 3) == ["y", "z", "x"]


def test_coherence_hand_computed():
    docs = [{"a", "b"}, {"a"}, {"b", "c"}]
    # (a,b): (1+1)/2, (a,c): (0+1)/2, (b,c): (1+1)/2
    assert topic_coherence(["a", "b", "c"], docs) == pytest.approx(math.log(0.5))
    everywhere = [{"p", "q"}] * 4
    assert topic_coherence(["p", "q"], everywhere) == pytest.approx(math.log(5 / 4))
    # a conditioning word that never occurs is skipped
    assert topic_coherence(["zz", "p"], everywhere) == 0.0


def test_coherence_symmetric_topics():
    s = _state([[0.5, 0.5]], [[0.6, 0.4], [0.6, 0.4]], ["a", "b"])
    corpus = [["a", "b"], ["a"]]
    doc_sets = [set(d) for d in corpus]
    per_topic = [topic_coherence(top_words(s, k, 2), doc_sets) for k in range(2)]
    assert per_topic[0] == per_topic[1]
    assert coherence(s, corpus, top_m=2) == per_topic[0]


def test_save_load(tmp_path):
    rng = np.random.default_rng(4)
    corpus, _, _ = _planted(rng, n_docs=10)
    state = fit_lda(corpus, K=2, seed=1, iterations=10)
    state.save(tmp_path / "s.json")
    back = TopicModelState.load(tmp_path / "s.json")
    assert back.vocab == state.vocab
    assert np.array_equal(back.doc_topic, state.doc_topic)
    assert all(np.array_equal(a, b) for a, b in zip(back.assignments, state.assignments))


def test_estimates_follow_final_counts():
    rng = np.random.default_rng(6)
    corpus, _, _ = _planted(rng, n_docs=15)
    s = fit_lda(corpus, K=3, alpha=0.2, beta=0.01, seed=2, iterations=30)
    # every token keeps exactly one assignment
    assert [len(z) for z in s.assignments] == [len(d) for d in corpus]
    ndk = np.array([np.bincount(z, minlength=3) for z in s.assignments])
    assert np.array_equal(ndk.sum(axis=1), [len(d) for d in corpus])
    expected = (ndk + 0.2) / (ndk.sum(axis=1, keepdims=True) + 3 * 0.2)
    assert np.allclose(s.doc_topic, expected, atol=1e-12)
    V = len(s.vocab)
    nkw = np.zeros((3, V))
    for doc, z in zip(corpus, s.assignments):
        for w, k in zip(doc, z):
            nkw[k, s.vocab.index(w)] += 1
    assert np.allclose(s.topic_word, (nkw + 0.01) / (nkw.sum(axis=1, keepdims=True) + V * 0.01), atol=1e-12)


def test_label_permutation_equivariance():
    rng = np.random.default_rng(7)
    corpus, _, _ = _planted(rng, n_docs=12)
    s = fit_lda(corpus, K=3, seed=4, iterations=20)
    perm = rng.permutation(3)
    p = _state(s.doc_topic[:, perm], s.topic_word[perm], s.vocab)
    inverse = np.argsort(perm)
    for d in range(len(corpus)):
        assert perm[assign_topic(p, d)] == assign_topic(s, d)
    for k in range(3):
        assert top_words(p, inverse[k], 5) == top_words(s, k, 5)
    assert coherence(p, corpus) == pytest.approx(coherence(s, corpus), abs=1e-12)
