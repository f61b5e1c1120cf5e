"""Emission scoring, token cross-entropy, linear-chain CRF, Viterbi.

Tags are indexed B=0, I=1, O=2, E=3, S=4; the transition matrix is
augmented with START (5) and STOP (6) rows/columns so the boundary
scores are learned like any other transition. The sequence loss is the
negative log likelihood log Z - score(gold path); the printed score sum
alone is unbounded below and untrainable, so the partition term is
always included.

Transitions are unconstrained by default (invalid tag runs are possible
and repaired downstream); ``viterbi(..., constrained=True)`` pins the
structurally impossible transitions to -inf instead.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad

TAGS = ("B", "I", "O", "E", "S")
TAG_INDEX = {t: i for i, t in enumerate(TAGS)}
N_TAGS = len(TAGS)
START = 5
STOP = 6
N_STATES = 7

EMIT_W = "emit.w"
EMIT_B = "emit.b"
TRANSITIONS = "crf.a"


def init_crf_params(rng: np.random.Generator, d_enc: int, dtype=np.float64) -> dict[str, np.ndarray]:
    from .embeddings import glorot_uniform

    return {
        EMIT_W: glorot_uniform(rng, N_TAGS, d_enc, dtype),
        EMIT_B: np.zeros(N_TAGS, dtype=dtype),
        TRANSITIONS: np.zeros((N_STATES, N_STATES), dtype=dtype),
    }


def emissions(w: ad.Node, b: ad.Node, encoded: Sequence[ad.Node]) -> ad.Node:
    """Per-token 5-way scores as a (T, 5) node."""
    rows = [ad.reshape(ad.add(ad.matmul(w, h), b), (1, N_TAGS)) for h in encoded]
    return ad.concat(rows, axis=0)


def token_nll(z: ad.Node, gold: Sequence[int]) -> ad.Node:
    """Cross entropy of the per-token softmax against the gold tags."""
    t = z.value.shape[0]
    if len(gold) != t:
        raise ad.GraphError(f"token_nll: {len(gold)} tags for {t} tokens")
    norm = ad.logsumexp(z, axis=1)
    picked = ad.take(z, (np.arange(t), np.asarray(gold, dtype=np.intp)))
    return ad.sum_over(ad.sub(norm, picked))


def path_score(z: ad.Node, a: ad.Node, path: Sequence[int]) -> ad.Node:
    """Transition plus emission score of one tag path, START prepended
    and STOP appended for the boundary transitions."""
    t = z.value.shape[0]
    if len(path) != t:
        raise ad.GraphError(f"path_score: {len(path)} tags for {t} tokens")
    states = [START, *path, STOP]
    prev = np.asarray(states[:-1], dtype=np.intp)
    nxt = np.asarray(states[1:], dtype=np.intp)
    trans = ad.sum_over(ad.take(a, (prev, nxt)))
    emit = ad.sum_over(ad.take(z, (np.arange(t), np.asarray(path, dtype=np.intp))))
    return ad.add(trans, emit)


def log_partition(z: ad.Node, a: ad.Node) -> ad.Node:
    """log sum over all tag paths of exp(path score), forward algorithm
    in log space."""
    t = z.value.shape[0]
    if t < 1:
        raise ad.GraphError("log_partition: empty sequence")
    inner = ad.take(a, (np.s_[:N_TAGS], np.s_[:N_TAGS]))
    from_start = ad.take(a, (START, np.s_[:N_TAGS]))
    to_stop = ad.take(a, (np.s_[:N_TAGS], STOP))
    alpha = ad.add(from_start, ad.take(z, 0))
    for step in range(1, t):
        scores = ad.add(ad.reshape(alpha, (N_TAGS, 1)), inner)
        alpha = ad.add(ad.logsumexp(scores, axis=0), ad.take(z, step))
    return ad.logsumexp(ad.add(alpha, to_stop))


def crf_nll(z: ad.Node, a: ad.Node, gold: Sequence[int]) -> ad.Node:
    return ad.sub(log_partition(z, a), path_score(z, a, gold))


def total_loss(token_term: ad.Node, sequence_term: ad.Node) -> ad.Node:
    return ad.add(token_term, sequence_term)


def transition_mask() -> np.ndarray:
    """Boolean (7, 7) table of structurally possible BIOES transitions."""
    b, i, o, e, s = range(N_TAGS)
    ok = np.zeros((N_STATES, N_STATES), dtype=bool)
    entity_open = (i, e)      # what may follow B or I
    segment_done = (b, o, s)  # what may follow O, E, S or START
    for nxt in entity_open:
        ok[b, nxt] = ok[i, nxt] = True
    for prev in (o, e, s, START):
        for nxt in segment_done:
            ok[prev, nxt] = True
        ok[prev, STOP] = True
    ok[START, STOP] = False  # sentences are nonempty
    return ok


def constrain(a_values: np.ndarray) -> np.ndarray:
    out = a_values.copy()
    out[~transition_mask()] = -np.inf
    return out


def viterbi(z_values: np.ndarray, a_values: np.ndarray, constrained: bool = False) -> list[int]:
    """Highest-scoring tag path; ties pick the lowest tag index at every
    backtracking step so decoding is deterministic."""
    z_values = np.asarray(z_values)
    t = z_values.shape[0]
    if t < 1:
        raise ValueError("viterbi: empty sequence")
    a = constrain(np.asarray(a_values)) if constrained else np.asarray(a_values)
    inner = a[:N_TAGS, :N_TAGS]
    delta = a[START, :N_TAGS] + z_values[0]
    pointers = np.zeros((t, N_TAGS), dtype=np.intp)
    for step in range(1, t):
        scores = delta[:, None] + inner
        pointers[step] = np.argmax(scores, axis=0)
        delta = np.max(scores, axis=0) + z_values[step]
    final = delta + a[:N_TAGS, STOP]
    best = int(np.argmax(final))
    path = [best]
    for step in range(t - 1, 0, -1):
        best = int(pointers[step, best])
        path.append(best)
    path.reverse()
    return path


def tags_to_indices(tags: Sequence[str]) -> list[int]:
    return [TAG_INDEX[t] for t in tags]


def indices_to_tags(indices: Sequence[int]) -> list[str]:
    return [TAGS[i] for i in indices]
