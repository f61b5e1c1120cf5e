"""Checkpoint files: text header plus raw little-endian tensor payloads.

Layout:

    CNET
    version 1
    fingerprint <hex>
    tensors <count>
    <name> <dtype> <dim> <dim> ...   (one line per tensor, in order)
    end
    <payloads back to back, IEEE-754/two's-complement little-endian>

Counters (phase, per-model epochs, early-stopping bookkeeping) ride
along as ``meta.*`` integer/float tensors, so the whole training state
round-trips through the same table. Loading parses and validates the
entire file before returning anything: a truncated or inconsistent file
yields an error, never partial state.
"""

from __future__ import annotations

import os
from typing import Mapping

import numpy as np

MAGIC = "CNET"
VERSION = 1

_DTYPES = {"float64": "<f8", "float32": "<f4", "int64": "<i8"}


class CheckpointError(ValueError):
    """Unreadable or inconsistent checkpoint file."""


def save_checkpoint(path: str, tensors: Mapping[str, np.ndarray], fingerprint: str = "") -> None:
    header = [MAGIC, f"version {VERSION}", f"fingerprint {fingerprint or '-'}", f"tensors {len(tensors)}"]
    payloads = []
    for name, arr in tensors.items():
        if " " in name or "\n" in name:
            raise CheckpointError(f"tensor name may not contain whitespace: {name!r}")
        arr = np.asarray(arr)
        dtype = "int64" if np.issubdtype(arr.dtype, np.integer) else str(arr.dtype)
        if dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        dims = " ".join(str(d) for d in arr.shape)
        header.append(f"{name} {dtype} {dims}".rstrip())
        payloads.append(np.ascontiguousarray(arr.astype(_DTYPES[dtype], copy=False)).tobytes())
    header.append("end")
    blob = "\n".join(header).encode() + b"\n" + b"".join(payloads)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], str]:
    """Returns (tensors, fingerprint); raises on any inconsistency."""
    with open(path, "rb") as fh:
        blob = fh.read()
    try:
        header_end = blob.index(b"\nend\n")
    except ValueError:
        raise CheckpointError(f"{path}: missing header terminator") from None
    lines = blob[:header_end].decode("utf-8", errors="replace").split("\n")
    payload = blob[header_end + len(b"\nend\n") :]

    if not lines or lines[0] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    if len(lines) < 4 or lines[1] != f"version {VERSION}":
        raise CheckpointError(f"{path}: unsupported version ({lines[1] if len(lines) > 1 else '?'})")
    if not lines[2].startswith("fingerprint "):
        raise CheckpointError(f"{path}: missing fingerprint line")
    fingerprint = lines[2].split(" ", 1)[1]
    if fingerprint == "-":
        fingerprint = ""
    try:
        count = int(lines[3].split(" ", 1)[1])
    except (IndexError, ValueError):
        raise CheckpointError(f"{path}: bad tensor count line") from None
    entries = lines[4:]
    if len(entries) != count:
        raise CheckpointError(f"{path}: header lists {len(entries)} tensors, expected {count}")

    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for entry in entries:
        parts = entry.split(" ")
        if len(parts) < 2 or parts[1] not in _DTYPES:
            raise CheckpointError(f"{path}: bad tensor entry {entry!r}")
        name, dtype = parts[0], parts[1]
        try:
            shape = tuple(int(d) for d in parts[2:])
        except ValueError:
            raise CheckpointError(f"{path}: bad shape in entry {entry!r}") from None
        nbytes = int(np.prod(shape, dtype=np.int64)) * np.dtype(_DTYPES[dtype]).itemsize
        chunk = payload[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: payload truncated at tensor {name!r}")
        tensors[name] = np.frombuffer(chunk, dtype=_DTYPES[dtype]).reshape(shape).copy()
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - offset} trailing payload bytes")
    return tensors, fingerprint


def team_tensors(state) -> dict[str, np.ndarray]:
    """Flatten a TeamState into the checkpoint tensor table."""
    tensors: dict[str, np.ndarray] = {}
    for i, model in enumerate(state.models):
        for name, arr in model.params.items():
            tensors[f"model{i}.{name}"] = arr
        for name, arr in state.optimizers[i].accumulators.items():
            tensors[f"opt{i}.{name}"] = arr
        if state.best_params[i] is not None:
            for name, arr in state.best_params[i].items():
                tensors[f"best{i}.{name}"] = arr
    for key, value in state.alphas.items():
        tensors[key] = value
        tensors["acc." + key] = state.alpha_accums[key]
    tensors["meta.n_models"] = np.array(state.n_models, dtype=np.int64)
    tensors["meta.phase"] = np.array(state.phase, dtype=np.int64)
    tensors["meta.prep_done"] = np.array(int(state.prep_done), dtype=np.int64)
    tensors["meta.epochs"] = np.array(state.epochs, dtype=np.int64)
    tensors["meta.stale"] = np.array(state.stale, dtype=np.int64)
    tensors["meta.best_f1"] = np.array(state.best_f1, dtype=np.float64)
    tensors["meta.team_best_f1"] = np.array(state.team_best_f1, dtype=np.float64)
    tensors["meta.team_stale"] = np.array(state.team_stale, dtype=np.int64)
    return tensors


def _entry(tensors: Mapping[str, np.ndarray], key: str) -> np.ndarray:
    try:
        return tensors[key]
    except KeyError:
        raise CheckpointError(f"checkpoint is missing tensor {key!r}") from None


def restore_team(state, tensors: Mapping[str, np.ndarray]) -> None:
    """Copy a checkpoint tensor table into a freshly initialized
    TeamState built from the same config and datasets."""
    n = int(_entry(tensors, "meta.n_models"))
    if n != state.n_models:
        raise CheckpointError(f"checkpoint has {n} models, state expects {state.n_models}")
    for i, model in enumerate(state.models):
        for name, arr in model.params.items():
            src = _entry(tensors, f"model{i}.{name}")
            if src.shape != arr.shape:
                raise CheckpointError(
                    f"model{i}.{name}: checkpoint shape {src.shape} != expected {arr.shape}"
                )
            arr[...] = src.astype(arr.dtype, copy=False)
        for name, arr in state.optimizers[i].accumulators.items():
            arr[...] = _entry(tensors, f"opt{i}.{name}").astype(arr.dtype, copy=False)
        best_names = [k for k in tensors if k.startswith(f"best{i}.")]
        if best_names:
            prefix = f"best{i}."
            state.best_params[i] = {
                k[len(prefix) :]: tensors[k].astype(model.params[k[len(prefix) :]].dtype).copy()
                for k in best_names
            }
        else:
            state.best_params[i] = None
    for key in state.alphas:
        state.alphas[key][...] = _entry(tensors, key).astype(state.alphas[key].dtype, copy=False)
        state.alpha_accums[key][...] = _entry(tensors, "acc." + key).astype(
            state.alpha_accums[key].dtype, copy=False
        )
    state.phase = int(_entry(tensors, "meta.phase"))
    state.prep_done = bool(int(_entry(tensors, "meta.prep_done")))
    state.epochs = [int(v) for v in _entry(tensors, "meta.epochs")]
    state.stale = [int(v) for v in _entry(tensors, "meta.stale")]
    state.best_f1 = [float(v) for v in _entry(tensors, "meta.best_f1")]
    state.team_best_f1 = float(_entry(tensors, "meta.team_best_f1"))
    state.team_stale = int(_entry(tensors, "meta.team_stale"))
