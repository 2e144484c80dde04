"""Binary checkpoint format.

Layout (all integers little-endian u32)::

    b"LVCK" | version | header length | header (UTF-8 key = value text)
    | tensors: ndim, dims..., raw little-endian data
    | sha256 of every preceding byte

Tensors are the model parameters in declaration order, then the Adam first
moments, then the second moments. The header carries the network config as
canonical text plus its sha256 digest, the training position and the seed
from which every RNG stream is derived.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .network import Model, NetworkConfig, model_from_arrays, parameter_shapes
from .optim import AdamConfig, AdamState
from .tensor import resolve_dtype

MAGIC = b"LVCK"
VERSION = 1
_U32 = struct.Struct("<I")


@dataclass
class Checkpoint:
    network: NetworkConfig
    params: list[np.ndarray]
    adam_state: AdamState
    adam_config: AdamConfig
    epoch: int
    seed: int
    pos_weight: float | None = None

    def model(self) -> Model:
        return model_from_arrays(self.network, self.params)

    @property
    def config_digest(self) -> str:
        return self.network.digest()


def _header_text(ckpt: Checkpoint, dtype: np.dtype) -> str:
    a = ckpt.adam_config
    lines = [
        f"dtype = {dtype.name}",
        f"epoch = {ckpt.epoch}",
        f"seed = {ckpt.seed}",
        f"adam_step = {ckpt.adam_state.step_count}",
        f"learning_rate = {a.learning_rate!r}",
        f"beta1 = {a.beta1!r}",
        f"beta2 = {a.beta2!r}",
        f"epsilon = {a.epsilon!r}",
        f"pos_weight = {'none' if ckpt.pos_weight is None else repr(float(ckpt.pos_weight))}",
        f"config_digest = {ckpt.config_digest}",
        "[network]",
    ]
    return "\n".join(lines) + "\n" + ckpt.network.canonical_text()


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    dtype = ckpt.params[0].dtype
    moments = ckpt.adam_state
    if not moments.first_moment:
        moments = AdamState.zeros_like(ckpt.params)
    header = _header_text(ckpt, dtype).encode("utf-8")
    le = dtype.newbyteorder("<")
    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(header)), header]
    for arr in [*ckpt.params, *moments.first_moment, *moments.second_moment]:
        parts.append(_U32.pack(arr.ndim))
        parts.extend(_U32.pack(d) for d in arr.shape)
        parts.append(np.ascontiguousarray(arr, dtype=le).tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(ckpt))
    os.replace(tmp, path)
    return path


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.path}: truncated checkpoint (needed {n} bytes at offset {self.pos})")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def _parse_header(text: str, path):
    values, _, net_text = text.partition("[network]\n")
    fields = {}
    for line in values.splitlines():
        key, sep, val = line.partition("=")
        if sep:
            fields[key.strip()] = val.strip()
    try:
        network = NetworkConfig.from_text(net_text)
        return fields, network
    except Exception as exc:  # malformed header of any kind
        raise CheckpointError(f"{path}: malformed checkpoint header ({exc})") from exc


def load_checkpoint(path, expected_config: NetworkConfig | None = None) -> Checkpoint:
    """Read and verify a checkpoint.

    Raises :class:`CheckpointError` on a bad magic, unknown version,
    truncation, checksum failure, config digest mismatch, or when the stored
    network differs from ``expected_config``.
    """
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc})") from exc
    r = _Reader(buf, path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    header = r.take(r.u32()).decode("utf-8", errors="replace")
    fields, network = _parse_header(header, path)
    if fields.get("config_digest") != network.digest():
        raise CheckpointError(f"{path}: config digest mismatch (header is corrupt)")
    if expected_config is not None and expected_config.digest() != network.digest():
        raise CheckpointError(
            f"{path}: config digest mismatch: checkpoint network differs from the expected configuration"
        )
    try:
        dtype = resolve_dtype(fields["dtype"])
        epoch = int(fields["epoch"])
        seed = int(fields["seed"])
        step = int(fields["adam_step"])
        adam = AdamConfig(
            float(fields["learning_rate"]), float(fields["beta1"]), float(fields["beta2"]), float(fields["epsilon"])
        )
        pw = None if fields["pos_weight"] == "none" else float(fields["pos_weight"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint header ({exc})") from exc

    shapes = parameter_shapes(network)
    le = dtype.newbyteorder("<")
    arrays = []
    for shape in shapes * 3:
        ndim = r.u32()
        dims = tuple(r.u32() for _ in range(ndim))
        if dims != shape:
            raise CheckpointError(f"{path}: tensor shape {dims} does not match config shape {shape}")
        n = int(np.prod(shape)) * dtype.itemsize
        arrays.append(np.frombuffer(r.take(n), dtype=le).astype(dtype).reshape(shape))
    body_end = r.pos
    stored = r.take(32)
    if r.pos != len(buf):
        raise CheckpointError(f"{path}: trailing bytes after checkpoint")
    if hashlib.sha256(buf[:body_end]).digest() != stored:
        raise CheckpointError(f"{path}: checksum mismatch (file is corrupt)")

    p = len(shapes)
    return Checkpoint(
        network=network,
        params=arrays[:p],
        adam_state=AdamState(step, arrays[p : 2 * p], arrays[2 * p :]),
        adam_config=adam,
        epoch=epoch,
        seed=seed,
        pos_weight=pw,
    )


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
