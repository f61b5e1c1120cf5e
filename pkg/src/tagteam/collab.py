"""The model team: solo preparation, then collaborative phases.

In the preparation phase every tagger trains alone on its own dataset
(zero collaborator slot) with dev-F1 early stopping. In each later
phase, every dataset takes one turn as the target: the remaining models
run inference on the target's sentences, their encoder outputs are
combined by weighted max pooling (one trainable scalar weight per
ordered target/collaborator pair, initialized to 1), and only the
target's parameters plus its own aggregation weights are updated, for
exactly one epoch. Collaborator outputs are constants: no gradient
flows into a frozen model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import crf
from .corpus import DatasetBundle, LabeledSentence, bioes_to_spans, make_batches
from .embeddings import (
    CharVocab,
    WordEmbeddingTable,
    build_char_vocab,
    load_word_embeddings,
    random_word_embeddings,
)
from .evaluation import EvalReport, exact_match_score, repair_bioes
from .model import TaggerModel
from .training import AdaGrad, RunConfig, adagrad_step, dropout_mask, lr_for_epoch, stream_rng

ALPHA_INIT = 1.0


def alpha_key(target: int, collaborator: int) -> str:
    return f"alpha.{target}.{collaborator}"


def aggregate(signals: Sequence[ad.Node], alphas: Sequence[ad.Node]) -> ad.Node:
    """Weighted max pooling: coordinatewise max over collaborators of
    (weight * signal). Ties route the subgradient to the lowest
    collaborator index, so training stays deterministic."""
    if len(signals) == 0:
        raise ad.GraphError("aggregate: needs at least one signal")
    if len(signals) != len(alphas):
        raise ad.GraphError(f"aggregate: {len(signals)} signals vs {len(alphas)} weights")
    shape = signals[0].value.shape
    for sig in signals[1:]:
        if sig.value.shape != shape:
            raise ad.GraphError(f"aggregate: signal shapes differ, {sig.value.shape} vs {shape}")
    pooled = ad.mul(alphas[0], signals[0])
    for alpha, sig in zip(alphas[1:], signals[1:]):
        pooled = ad.maximum(pooled, ad.mul(alpha, sig))
    return pooled


def collaborator_signal(model: TaggerModel, tokens: Sequence[str]) -> np.ndarray:
    """Frozen inference on behalf of a target: encoder states with a
    zero slot and no dropout; plain values, so nothing can flow back."""
    return model.signal_values(tokens)


def target_forward(
    target: TaggerModel, tokens: Sequence[str], agg, dropout=None
) -> tuple[dict[str, ad.Node], list[ad.Node], ad.Node]:
    """Target pass on [token embedding; aggregated signal] inputs."""
    return target.build_graph(target.params, tokens, signal=agg, dropout=dropout)


@dataclass
class MetricsRecord:
    phase: int
    dataset: str
    split: str
    precision: float
    recall: float
    f1: float
    loss: float

    def line(self) -> str:
        return (
            f"{self.phase},{self.dataset},{self.split},"
            f"{self.precision:.4f},{self.recall:.4f},{self.f1:.4f},{self.loss:.6f}"
        )


class TeamState:
    """All models plus the phase counter, aggregation weights, optimizer
    state, and preparation-phase bookkeeping."""

    def __init__(self, cfg: RunConfig, bundles: Sequence[DatasetBundle]):
        if not bundles:
            raise ValueError("TeamState: need at least one dataset")
        self.cfg = cfg
        self.bundles = list(bundles)
        self.dataset_ids = [b.name for b in bundles]

        tokens = [
            tok
            for bundle in bundles
            for split in (bundle.train, bundle.dev, bundle.test)
            for sentence in split
            for tok in sentence.tokens
        ]
        if cfg.embeddings:
            with open(cfg.embeddings, encoding="utf-8") as fh:
                self.word_table: WordEmbeddingTable = load_word_embeddings(fh)
            if self.word_table.dim != cfg.d_word:
                raise ValueError(
                    f"embedding file is {self.word_table.dim}-dimensional, "
                    f"config says d_word = {cfg.d_word}"
                )
        else:
            self.word_table = random_word_embeddings(
                tokens, cfg.d_word, stream_rng(cfg.seed, "init", "words"), cfg.dtype
            )
        self.char_vocab: CharVocab = build_char_vocab(tokens)

        self.models = [
            TaggerModel(cfg, self.word_table, self.char_vocab, stream_rng(cfg.seed, "init", i), b.name)
            for i, b in enumerate(bundles)
        ]
        self.optimizers = [AdaGrad(m.params) for m in self.models]

        n = len(self.models)
        self.alphas: dict[str, np.ndarray] = {}
        self.alpha_accums: dict[str, np.ndarray] = {}
        for d in range(n):
            for k in range(n):
                if k != d:
                    self.alphas[alpha_key(d, k)] = np.array(ALPHA_INIT, dtype=cfg.dtype)
                    self.alpha_accums[alpha_key(d, k)] = np.zeros((), dtype=cfg.dtype)

        self.phase = 0
        self.prep_done = False
        self.epochs = [0] * n
        self.stale = [0] * n
        self.best_f1 = [-1.0] * n
        self.best_params: list[dict[str, np.ndarray] | None] = [None] * n
        self.team_best_f1 = -1.0
        self.team_stale = 0

    @property
    def n_models(self) -> int:
        return len(self.models)

    def collaborators_of(self, d: int) -> list[int]:
        return [k for k in range(self.n_models) if k != d]

    def aggregated_signal_values(self, d: int, tokens: Sequence[str]) -> np.ndarray | None:
        """Pooled collaborator signal as plain values (for decoding and
        evaluation); None when the team has a single model."""
        others = self.collaborators_of(d)
        if not others:
            return None
        signals = [ad.leaf(collaborator_signal(self.models[k], tokens)) for k in others]
        weights = [ad.leaf(self.alphas[alpha_key(d, k)]) for k in others]
        return aggregate(signals, weights).value

    def _sentence_dropout(self, d: int, epoch: int, ordinal: int, n_tokens: int):
        cfg = self.cfg
        if cfg.dropout_clwe == 0.0 and cfg.dropout_bilstm == 0.0:
            return None
        rng = stream_rng(cfg.seed, "dropout", d, epoch, ordinal)
        masks = {}
        if cfg.dropout_clwe > 0.0:
            masks["clwe"] = dropout_mask((n_tokens, cfg.d_clwe), cfg.dropout_clwe, rng, cfg.dtype)
        if cfg.dropout_bilstm > 0.0:
            masks["bilstm"] = dropout_mask(
                (n_tokens, 2 * cfg.d_lstm), cfg.dropout_bilstm, rng, cfg.dtype
            )
        return masks

    def train_epoch(self, d: int, collab: bool) -> float:
        """One epoch of the target ``d``; returns the summed train loss.

        Only model ``d``'s parameters (and, in collaborative mode, the
        weights alpha[d, .]) change.
        """
        cfg = self.cfg
        model = self.models[d]
        epoch = self.epochs[d]
        lr = lr_for_epoch(epoch, cfg.learning_rate, cfg.lr_decay)
        sentences = self.bundles[d].train
        token_loss = cfg.token_loss_in_collab if collab else True
        others = self.collaborators_of(d) if collab else []

        total_loss = 0.0
        ordinal = 0
        for batch in make_batches(sentences, cfg.batch_size, seed=cfg.seed ^ epoch):
            grad_sum: dict[str, np.ndarray] = {}
            for tokens, tags in batch.rows():
                gold = crf.tags_to_indices(tags)
                masks = self._sentence_dropout(d, epoch, ordinal, len(tokens))
                ordinal += 1
                if others:
                    signals = [
                        ad.leaf(collaborator_signal(self.models[k], tokens)) for k in others
                    ]
                    weights = [
                        ad.leaf(self.alphas[alpha_key(d, k)], name=alpha_key(d, k))
                        for k in others
                    ]
                    signal = aggregate(signals, weights)
                else:
                    signal = None
                loss = model.loss_graph(model.params, tokens, gold, signal, masks, token_loss)
                total_loss += float(loss.value)
                for name, grad in ad.backward(loss).items():
                    if name in grad_sum:
                        grad_sum[name] += grad
                    else:
                        grad_sum[name] = grad
            model.sanitize_grads(grad_sum)
            self.optimizers[d].step(model.params, grad_sum, lr, skip=model.frozen)
            for k in others:
                key = alpha_key(d, k)
                if key in grad_sum:
                    adagrad_step(self.alphas[key], grad_sum[key], self.alpha_accums[key], lr)
        self.epochs[d] = epoch + 1
        return total_loss

    def evaluate(
        self, d: int, sentences: Sequence[LabeledSentence], use_collab: bool, repair: bool = True
    ) -> tuple[EvalReport, float]:
        """Exact-match report and mean sentence loss on a split."""
        model = self.models[d]
        pred_spans, gold_spans = [], []
        loss_total = 0.0
        for sentence in sentences:
            signal = (
                self.aggregated_signal_values(d, sentence.tokens) if use_collab else None
            )
            tags = model.decode(sentence.tokens, signal)
            if repair:
                tags = repair_bioes(tags)
            pred_spans.append(bioes_to_spans(tags))
            gold_spans.append(bioes_to_spans(sentence.tags))
            loss_total += model.sentence_loss_value(sentence.tokens, sentence.tags, signal)
        report = exact_match_score(pred_spans, gold_spans)
        return report, loss_total / max(len(sentences), 1)


def run_preparation_phase(
    bundles: Sequence[DatasetBundle],
    cfg: RunConfig,
    state: TeamState | None = None,
    epoch_budget: int | None = None,
) -> tuple[TeamState, list[tuple[int, int, float, float]]]:
    """Train every model solo until dev F1 stops improving.

    ``epoch_budget`` caps how many epochs each model may reach in this
    call (for interrupted runs); the best-dev parameters are restored
    only once the whole preparation phase has actually finished.
    Returns the state plus a history of (model, epoch, dev_f1,
    train_loss) entries.
    """
    if state is None:
        state = TeamState(cfg, bundles)
    history: list[tuple[int, int, float, float]] = []
    target_epochs = cfg.max_epochs if epoch_budget is None else min(cfg.max_epochs, epoch_budget)

    for d, bundle in enumerate(state.bundles):
        if not bundle.train:
            raise ValueError(f"dataset {bundle.name!r}: empty training split")
        if not bundle.dev:
            raise ValueError(f"dataset {bundle.name!r}: empty development split")
        while state.epochs[d] < target_epochs and state.stale[d] < cfg.prep_patience:
            train_loss = state.train_epoch(d, collab=False)
            report, _ = state.evaluate(d, bundle.dev, use_collab=False)
            f1 = report.f1
            if f1 > state.best_f1[d]:
                state.best_f1[d] = f1
                state.best_params[d] = state.models[d].copy_params()
                state.stale[d] = 0
            else:
                state.stale[d] += 1
            history.append((d, state.epochs[d] - 1, f1, train_loss))

    finished = all(
        state.epochs[d] >= cfg.max_epochs or state.stale[d] >= cfg.prep_patience
        for d in range(state.n_models)
    )
    if finished and not state.prep_done:
        for d in range(state.n_models):
            if state.best_params[d] is not None:
                state.models[d].load_params(state.best_params[d])
        state.prep_done = True
    return state, history


def run_collab_phase(state: TeamState, cfg: RunConfig) -> list[float]:
    """One full rotation: every dataset takes a turn as the target and
    trains for exactly one epoch; afterwards the phase counter advances.
    Returns the per-target train losses."""
    if not state.prep_done:
        raise ValueError("run_collab_phase: preparation phase has not finished")
    losses = [state.train_epoch(d, collab=True) for d in range(state.n_models)]
    state.phase += 1
    return losses


def dev_records(state: TeamState, use_collab: bool) -> list[MetricsRecord]:
    records = []
    for d, bundle in enumerate(state.bundles):
        report, loss = state.evaluate(d, bundle.dev, use_collab=use_collab)
        records.append(
            MetricsRecord(
                state.phase, bundle.name, "dev", report.precision, report.recall, report.f1, loss
            )
        )
    return records


def train_team(
    bundles: Sequence[DatasetBundle],
    cfg: RunConfig,
    state: TeamState | None = None,
    on_phase=None,
) -> tuple[TeamState, list[MetricsRecord]]:
    """Full schedule: preparation, then collaborative phases until the
    macro-average dev F1 stops improving or the phase cap is reached.

    ``on_phase(state, records)`` fires after preparation and after each
    phase, with that phase's records; checkpointing hooks in there.
    """
    state, _ = run_preparation_phase(bundles, cfg, state)
    records: list[MetricsRecord] = []
    if state.phase == 0:
        phase_records = dev_records(state, use_collab=False)
        records.extend(phase_records)
        macro = float(np.mean([r.f1 for r in phase_records]))
        if macro > state.team_best_f1:
            state.team_best_f1 = macro
            state.team_stale = 0
        if on_phase:
            on_phase(state, phase_records)

    while state.phase < cfg.max_phases and state.team_stale < cfg.phase_patience:
        run_collab_phase(state, cfg)
        phase_records = dev_records(state, use_collab=True)
        records.extend(phase_records)
        macro = float(np.mean([r.f1 for r in phase_records]))
        if macro > state.team_best_f1:
            state.team_best_f1 = macro
            state.team_stale = 0
        else:
            state.team_stale += 1
        if on_phase:
            on_phase(state, phase_records)
    return state, records
