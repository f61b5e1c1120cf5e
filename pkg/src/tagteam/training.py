"""Optimization, dropout, seeded randomness, and run configuration.

All randomness derives from one run seed through named sub-streams, so
toggling an ablation flag never perturbs unrelated draws and a resumed
run replays the exact masks of an uninterrupted one.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

BASE_LEARNING_RATE = 0.01
LR_DECAY = 0.95
ADAGRAD_EPS = 1e-8


class ConfigError(ValueError):
    """Bad configuration file or value."""


def lr_for_epoch(epoch: int, base: float = BASE_LEARNING_RATE, decay: float = LR_DECAY) -> float:
    if epoch < 0:
        raise ValueError("lr_for_epoch: epoch must be nonnegative")
    return base * decay**epoch


def adagrad_step(
    param: np.ndarray, grad: np.ndarray, accumulator: np.ndarray, lr: float, eps: float = ADAGRAD_EPS
) -> None:
    """In place: accumulator += grad^2; param -= lr * grad / (sqrt(acc) + eps)."""
    if param.shape != grad.shape or param.shape != accumulator.shape:
        raise ValueError(
            f"adagrad_step: shapes differ param={param.shape} grad={grad.shape} "
            f"accumulator={accumulator.shape}"
        )
    accumulator += grad * grad
    param -= lr * grad / (np.sqrt(accumulator) + eps)


class AdaGrad:
    """Per-tensor squared-gradient accumulators for one model."""

    def __init__(self, params: Mapping[str, np.ndarray], eps: float = ADAGRAD_EPS):
        self.eps = eps
        self.accumulators = {name: np.zeros_like(arr) for name, arr in params.items()}

    def step(
        self,
        params: Mapping[str, np.ndarray],
        grads: Mapping[str, np.ndarray],
        lr: float,
        skip: Iterable[str] = (),
    ) -> None:
        frozen = set(skip)
        for name, grad in grads.items():
            if name in frozen or name not in self.accumulators:
                continue
            adagrad_step(params[name], grad, self.accumulators[name], lr, self.eps)


def stream_rng(seed: int, *key) -> np.random.Generator:
    """Independent generator for a named sub-stream of the run seed."""
    words = [seed & 0xFFFFFFFF] + [zlib.crc32(str(part).encode()) for part in key]
    return np.random.default_rng(np.random.SeedSequence(words))


def dropout_mask(shape, rate: float, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    """Inverted-dropout mask: zeros with probability ``rate``, survivors
    scaled by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape, dtype=dtype)
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / (1.0 - rate)


def apply_dropout(
    x: np.ndarray, rate: float, mode: str, rng: np.random.Generator | int
) -> np.ndarray:
    """Identity in eval mode; masked and rescaled in train mode."""
    if mode not in ("train", "eval"):
        raise ValueError(f"apply_dropout: mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or rate == 0.0:
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        return x
    if isinstance(rng, int):
        rng = np.random.default_rng(rng)
    return x * dropout_mask(x.shape, rate, rng, dtype=x.dtype)


@dataclass
class DatasetSpec:
    name: str
    train: str = ""
    dev: str = ""
    test: str = ""
    scheme: str = "bioes"  # or "bio", converted on load
    dev_size: int = 0      # carve the dev set from the train tail when no dev file
    entity_type: str = ""


@dataclass
class RunConfig:
    seed: int = 1
    batch_size: int = 10
    precision: str = "float64"
    learning_rate: float = BASE_LEARNING_RATE  # tuned for full-scale corpora;
    lr_decay: float = LR_DECAY                 # desk-scale runs override

    d_word: int = 200
    d_char: int = 30
    d_clwe: int = 600
    d_lstm: int = 300
    window_sizes: tuple[int, ...] = (3, 5, 7)
    dropout_clwe: float = 0.5
    dropout_bilstm: float = 0.3
    max_epochs: int = 100
    prep_patience: int = 10
    max_phases: int = 10
    phase_patience: int = 3
    freeze_embeddings: bool = False
    constrained_viterbi: bool = False
    collab_signal: str = "bi"  # or "forward"
    token_loss_in_collab: bool = True
    max_sentence_len: int = 512
    embeddings: str = ""  # path to a pretrained text file, optional
    datasets: list[DatasetSpec] = field(default_factory=list)

    def __post_init__(self):
        for name in ("d_word", "d_char", "d_clwe", "d_lstm"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("dropout_clwe", "dropout_bilstm"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {rate}")
        if self.learning_rate <= 0 or not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError("learning_rate must be positive and lr_decay in (0, 1]")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        if self.d_clwe % len(self.window_sizes) != 0:
            raise ConfigError(
                f"d_clwe={self.d_clwe} not divisible by {len(self.window_sizes)} window sizes"
            )
        if self.collab_signal not in ("bi", "forward"):
            raise ConfigError(f"collab_signal must be 'bi' or 'forward', got {self.collab_signal!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    @property
    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32


_INT_KEYS = {
    "seed", "batch_size", "d_word", "d_char", "d_clwe", "d_lstm", "max_epochs",
    "prep_patience", "max_phases", "phase_patience", "max_sentence_len",
}
_FLOAT_KEYS = {"dropout_clwe", "dropout_bilstm", "learning_rate", "lr_decay"}
_BOOL_KEYS = {"freeze_embeddings", "constrained_viterbi", "token_loss_in_collab"}
_STR_KEYS = {"precision", "collab_signal", "embeddings"}
_DATASET_KEYS = {"train", "dev", "test", "scheme", "dev_size", "entity_type"}


def _parse_bool(value: str, key: str) -> bool:
    low = value.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def parse_config(text: str) -> RunConfig:
    """Flat "key = value" lines, '#' comments; unknown keys are errors.

    Dataset entries use dotted keys (``dataset.ncbi.train = path``);
    dataset order follows first appearance and fixes the target
    rotation order.
    """
    values: dict[str, object] = {}
    datasets: dict[str, DatasetSpec] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("dataset."):
            parts = key.split(".")
            if len(parts) != 3 or parts[2] not in _DATASET_KEYS:
                raise ConfigError(f"line {lineno}: unknown dataset key {key!r}")
            _, name, attr = parts
            spec = datasets.setdefault(name, DatasetSpec(name))
            if attr == "dev_size":
                setattr(spec, attr, int(value))
            else:
                setattr(spec, attr, value)
        elif key == "window_sizes":
            try:
                values[key] = tuple(int(v) for v in value.replace(",", " ").split())
            except ValueError:
                raise ConfigError(f"line {lineno}: bad window_sizes {value!r}") from None
        elif key in _INT_KEYS:
            try:
                values[key] = int(value)
            except ValueError:
                raise ConfigError(f"line {lineno}: {key} expects an integer, got {value!r}") from None
        elif key in _FLOAT_KEYS:
            try:
                values[key] = float(value)
            except ValueError:
                raise ConfigError(f"line {lineno}: {key} expects a number, got {value!r}") from None
        elif key in _BOOL_KEYS:
            values[key] = _parse_bool(value, key)
        elif key in _STR_KEYS:
            values[key] = value
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    for spec in datasets.values():
        if spec.scheme not in ("bio", "bioes"):
            raise ConfigError(f"dataset {spec.name}: scheme must be bio or bioes")
    return RunConfig(datasets=list(datasets.values()), **values)


def config_fingerprint(text: str) -> str:
    """Stable digest of the semantic config content (comments and blank
    lines ignored), stored in checkpoints to catch config drift."""
    import hashlib

    lines = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append(" ".join(line.split()))
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]
