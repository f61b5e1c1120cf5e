"""One single-task tagger: embeddings, BiLSTM, emission and CRF layers.

The encoder input always ends with a fixed-width collaborator slot.
During solo training and inference the slot is zero-filled; during
collaborative phases it carries the aggregated signal of the other
models. Keeping the slot from the start means the solo forward pass and
the zero-signal forward pass are the same computation, bit for bit.
"""

from __future__ import annotations

import hashlib
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from . import crf
from .embeddings import (
    CHAR_EMB,
    PAD_CHAR_INDEX,
    WORD_EMB,
    CharVocab,
    WordEmbeddingTable,
    embed_token,
    init_char_params,
)
from .encoder import BACKWARD, FORWARD, bilstm_encode, direction_view, init_lstm_params
from .training import RunConfig


class TaggerModel:
    def __init__(
        self,
        cfg: RunConfig,
        word_table: WordEmbeddingTable,
        char_vocab: CharVocab,
        rng: np.random.Generator,
        dataset_id: str = "",
    ):
        self.cfg = cfg
        self.word_table = word_table
        self.char_vocab = char_vocab
        self.dataset_id = dataset_id
        dtype = cfg.dtype

        self.d_embed = cfg.d_word + cfg.d_clwe
        self.d_signal = 2 * cfg.d_lstm if cfg.collab_signal == "bi" else cfg.d_lstm
        self.d_input = self.d_embed + self.d_signal

        self.params: dict[str, np.ndarray] = {
            WORD_EMB: word_table.matrix.astype(dtype).copy()
        }
        self.params.update(
            init_char_params(rng, len(char_vocab), cfg.d_char, cfg.d_clwe, cfg.window_sizes, dtype)
        )
        self.params.update(init_lstm_params(rng, self.d_input, cfg.d_lstm, FORWARD, dtype))
        self.params.update(init_lstm_params(rng, self.d_input, cfg.d_lstm, BACKWARD, dtype))
        self.params.update(crf.init_crf_params(rng, 2 * cfg.d_lstm, dtype))

    @property
    def frozen(self) -> set[str]:
        if self.cfg.freeze_embeddings or not self.word_table.trainable:
            return {WORD_EMB}
        return set()

    def leaves(self, params: Mapping[str, np.ndarray] | None = None) -> dict[str, ad.Node]:
        source = self.params if params is None else params
        return {name: ad.leaf(arr, name=name) for name, arr in source.items()}

    def token_codes(self, tokens: Sequence[str]) -> list[tuple[int, list[int]]]:
        return [(self.word_table.index(tok), self.char_vocab.encode(tok)) for tok in tokens]

    def _signal_rows(self, signal, n_tokens: int) -> ad.Node:
        if signal is None:
            signal = np.zeros((n_tokens, self.d_signal), dtype=self.cfg.dtype)
        if isinstance(signal, np.ndarray):
            signal = ad.leaf(signal)
        if signal.value.shape != (n_tokens, self.d_signal):
            raise ad.GraphError(
                f"collaborator signal shape {signal.value.shape} != ({n_tokens}, {self.d_signal})"
            )
        return signal

    def build_graph(
        self,
        params: Mapping[str, np.ndarray],
        tokens: Sequence[str],
        signal=None,
        dropout: Mapping[str, np.ndarray] | None = None,
    ) -> tuple[dict[str, ad.Node], list[ad.Node], ad.Node]:
        """Forward graph for one sentence: (leaves, encoded states, z).

        ``signal`` may be None (zero slot), a (T, d_signal) array, or a
        graph node when gradients must reach the aggregation weights.
        ``dropout`` holds precomputed masks under "clwe" and "bilstm".
        """
        if len(tokens) == 0:
            raise ad.GraphError("build_graph: empty sentence")
        leaves = self.leaves(params)
        signal_node = self._signal_rows(signal, len(tokens))
        clwe_masks = dropout.get("clwe") if dropout else None

        xs = []
        for t, (word_idx, char_ids) in enumerate(self.token_codes(tokens)):
            token_vec = embed_token(
                leaves,
                word_idx,
                char_ids,
                self.cfg.window_sizes,
                clwe_mask=None if clwe_masks is None else clwe_masks[t],
            )
            xs.append(ad.concat([token_vec, ad.take(signal_node, t)], axis=0))

        encoded = bilstm_encode(
            direction_view(leaves, FORWARD), direction_view(leaves, BACKWARD), xs
        )
        if dropout and "bilstm" in dropout:
            encoded = [ad.mul(h, ad.leaf(dropout["bilstm"][t])) for t, h in enumerate(encoded)]
        z = crf.emissions(leaves[crf.EMIT_W], leaves[crf.EMIT_B], encoded)
        return leaves, encoded, z

    def loss_graph(
        self,
        params: Mapping[str, np.ndarray],
        tokens: Sequence[str],
        gold: Sequence[int],
        signal=None,
        dropout: Mapping[str, np.ndarray] | None = None,
        token_loss: bool = True,
    ) -> ad.Node:
        """Scalar training loss: sequence NLL plus (optionally) the
        per-token cross entropy."""
        leaves, _, z = self.build_graph(params, tokens, signal, dropout)
        sequence_term = crf.crf_nll(z, leaves[crf.TRANSITIONS], gold)
        if not token_loss:
            return sequence_term
        return crf.total_loss(crf.token_nll(z, gold), sequence_term)

    def forward_values(
        self, tokens: Sequence[str], signal: np.ndarray | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Inference pass: per-token encoder states and emission scores."""
        _, encoded, z = self.build_graph(self.params, tokens, signal)
        return np.stack([h.value for h in encoded]), z.value

    def signal_values(self, tokens: Sequence[str]) -> np.ndarray:
        """Encoder output offered to other models, computed with a zero
        slot and no dropout (inference mode)."""
        encoded, _ = self.forward_values(tokens)
        if self.cfg.collab_signal == "forward":
            return encoded[:, : self.cfg.d_lstm]
        return encoded

    def decode(
        self,
        tokens: Sequence[str],
        signal: np.ndarray | None = None,
        constrained: bool | None = None,
    ) -> list[str]:
        if constrained is None:
            constrained = self.cfg.constrained_viterbi
        _, z = self.forward_values(tokens, signal)
        path = crf.viterbi(z, self.params[crf.TRANSITIONS], constrained=constrained)
        return crf.indices_to_tags(path)

    def sentence_loss_value(
        self, tokens: Sequence[str], tags: Sequence[str], signal=None, token_loss: bool = True
    ) -> float:
        gold = crf.tags_to_indices(tags)
        return float(self.loss_graph(self.params, tokens, gold, signal, None, token_loss).value)

    def sanitize_grads(self, grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """The PAD character row is pinned to zero and never trained."""
        if CHAR_EMB in grads:
            grads[CHAR_EMB][PAD_CHAR_INDEX] = 0.0
        return grads

    def copy_params(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.params.items()}

    def load_params(self, params: Mapping[str, np.ndarray]) -> None:
        for name, arr in params.items():
            self.params[name][...] = arr

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.params):
            digest.update(name.encode())
            digest.update(self.params[name].tobytes())
        return digest.hexdigest()
