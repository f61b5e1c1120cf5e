"""Single-layer bidirectional LSTM encoder.

The gate equations are the classic form: input/forget/output gates via
sigmoid, a tanh cell candidate, cell state carried through the forget
gate, hidden state as the gated tanh of the cell. Forward and backward
directions run over the same inputs and their hidden states are
concatenated per token.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .embeddings import glorot_uniform

GATES = ("i", "f", "c", "o")

FORWARD = "fw"
BACKWARD = "bw"


def init_lstm_params(
    rng: np.random.Generator, d_in: int, d_hidden: int, direction: str, dtype=np.float64
) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases except the forget gate at 1."""
    params: dict[str, np.ndarray] = {}
    for g in GATES:
        params[f"lstm.{direction}.w_x{g}"] = glorot_uniform(rng, d_hidden, d_in, dtype)
        params[f"lstm.{direction}.w_h{g}"] = glorot_uniform(rng, d_hidden, d_hidden, dtype)
        bias = np.zeros(d_hidden, dtype=dtype)
        if g == "f":
            bias[:] = 1.0
        params[f"lstm.{direction}.b_{g}"] = bias
    return params


def _gate(p: Mapping[str, ad.Node], g: str, x: ad.Node, h: ad.Node) -> ad.Node:
    return ad.add(ad.add(ad.matmul(p[f"w_x{g}"], x), ad.matmul(p[f"w_h{g}"], h)), p[f"b_{g}"])


def lstm_step(
    p: Mapping[str, ad.Node], x: ad.Node, h_prev: ad.Node, c_prev: ad.Node
) -> tuple[ad.Node, ad.Node]:
    """One recurrence step; ``p`` maps short gate names (w_xi, ..., b_o)."""
    i = ad.sigmoid(_gate(p, "i", x, h_prev))
    f = ad.sigmoid(_gate(p, "f", x, h_prev))
    candidate = ad.tanh(_gate(p, "c", x, h_prev))
    c = ad.add(ad.mul(f, c_prev), ad.mul(i, candidate))
    o = ad.sigmoid(_gate(p, "o", x, h_prev))
    h = ad.mul(o, ad.tanh(c))
    return h, c


def direction_view(leaves: Mapping[str, ad.Node], direction: str) -> dict[str, ad.Node]:
    prefix = f"lstm.{direction}."
    return {name[len(prefix) :]: node for name, node in leaves.items() if name.startswith(prefix)}


def _run_direction(p: Mapping[str, ad.Node], xs: Sequence[ad.Node]) -> list[ad.Node]:
    d_hidden = p["b_i"].value.shape[0]
    h = ad.leaf(np.zeros(d_hidden, dtype=p["b_i"].value.dtype))
    c = ad.leaf(np.zeros(d_hidden, dtype=p["b_i"].value.dtype))
    states = []
    for x in xs:
        h, c = lstm_step(p, x, h, c)
        states.append(h)
    return states


def bilstm_encode(
    fw: Mapping[str, ad.Node], bw: Mapping[str, ad.Node], xs: Sequence[ad.Node]
) -> list[ad.Node]:
    """Per-token [forward state, backward state] nodes, both directions
    reading the same inputs."""
    if len(xs) == 0:
        raise ad.GraphError("bilstm_encode: empty sequence")
    forward_states = _run_direction(fw, xs)
    backward_states = _run_direction(bw, list(reversed(xs)))[::-1]
    return [ad.concat([hf, hb], axis=0) for hf, hb in zip(forward_states, backward_states)]
