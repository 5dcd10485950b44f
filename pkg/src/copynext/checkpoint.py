"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic b"CPNXCKPT"
    8       4     format version (uint32, currently 1)
    12      4     manifest byte length M (uint32)
    16      M     manifest, UTF-8 JSON
    16+M    ...   arrays in manifest order, float64 little-endian, C order
    end-4   4     CRC-32 of every preceding byte (uint32)

The manifest records ``layers`` (J), ``hidden`` (D), ``input_dim`` (E),
``n_labels`` (|L|), ``scheme``, ``seed``, ``dropout``, the label list, the
vocabulary (or null) and ``arrays``: a list of ``[name, shape]`` pairs.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .corpus import LabelSet, Vocab
from .linearize import Scheme
from .model import TransducerParams

MAGIC = b"CPNXCKPT"
VERSION = 1
_HEADER = struct.Struct("<8sII")


class CheckpointError(ValueError):
    pass


class VersionError(CheckpointError):
    pass


class TruncationError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


def _manifest(params: TransducerParams) -> dict:
    return {
        "layers": params.layers,
        "hidden": params.hidden,
        "input_dim": params.input_dim,
        "n_labels": params.n_labels,
        "scheme": params.scheme.value,
        "seed": params.seed,
        "dropout": params.dropout,
        "labels": params.labels.labels[1:],
        "vocab": params.vocab.tokens[1:] if params.vocab is not None else None,
        "arrays": [[name, list(arr.shape)] for name, arr in params.arrays.items()],
        "meta": params.meta,
    }


def to_bytes(params: TransducerParams) -> bytes:
    manifest = json.dumps(_manifest(params), sort_keys=True).encode("utf-8")
    parts = [_HEADER.pack(MAGIC, VERSION, len(manifest)), manifest]
    for arr in params.arrays.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def from_bytes(blob: bytes) -> TransducerParams:
    if len(blob) < _HEADER.size + 4:
        raise TruncationError("checkpoint shorter than its header")
    magic, version, mlen = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != VERSION:
        raise VersionError(f"checkpoint format version {version}, this build reads {VERSION}")
    pos = _HEADER.size
    if len(blob) < pos + mlen + 4:
        raise TruncationError("checkpoint truncated inside the manifest")
    try:
        man = json.loads(blob[pos:pos + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable manifest: {exc}") from None
    pos += mlen
    sizes = [(name, tuple(shape), int(np.prod(shape, dtype=np.int64)) * 8)
             for name, shape in man["arrays"]]
    expected = pos + sum(s for _, _, s in sizes) + 4
    if len(blob) != expected:
        raise TruncationError(f"checkpoint is {len(blob)} bytes, manifest implies {expected}")
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if crc != zlib.crc32(blob[:-4]):
        raise ChecksumError("checkpoint checksum mismatch")
    arrays = {}
    for name, shape, size in sizes:
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=size // 8, offset=pos).astype(np.float64).reshape(shape)
        pos += size
    vocab = Vocab(man["vocab"]) if man["vocab"] is not None else None
    return TransducerParams(arrays, man["layers"], man["hidden"], man["input_dim"],
                            LabelSet(man["labels"]), Scheme(man["scheme"]), vocab,
                            man["seed"], man["dropout"], man.get("meta", {}))


def save_checkpoint(params: TransducerParams, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(params))


def load_checkpoint(path: str | Path, scheme: Scheme | str | None = None) -> TransducerParams:
    """Read a checkpoint; refuse it when ``scheme`` disagrees with its manifest."""
    params = from_bytes(Path(path).read_bytes())
    if scheme is not None and Scheme.parse(scheme) is not params.scheme:
        raise CheckpointError(
            f"checkpoint {path} was trained with scheme {params.scheme.value!r}, "
            f"not {Scheme.parse(scheme).value!r}"
        )
    return params
