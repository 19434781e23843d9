"""Versioned binary checkpoint container.

Layout::

    b"INFMAECK" | format_version (u32 LE) | manifest length (u64 LE)
    | manifest (UTF-8 JSON) | array bytes | SHA-256 of everything before it

The manifest lists each array's name, group, shape, dtype, byte offset and
length relative to the start of the array section, plus both configs, the
epoch/step counters and the base64 RNG state.
"""

import base64
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ModelConfig, TrainConfig, config_from_dict, config_to_dict
from .exceptions import IntegrityError, VersionError
from .io import atomic_write

MAGIC = b"INFMAECK"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIQ")
_DIGEST = 32


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    params: dict
    optimizer: dict = field(default_factory=dict)
    epoch: int = 0
    step: int = 0
    rng_state: bytes = b""
    format_version: int = FORMAT_VERSION

    def digest(self):
        """SHA-256 over the serialized container (stable for equal contents)."""
        return hashlib.sha256(to_bytes(self)).hexdigest()


def _arrays(ckpt):
    for group, table in (("param", ckpt.params), ("optim", ckpt.optimizer)):
        for name in sorted(table):
            yield group, name, np.ascontiguousarray(table[name])


def to_bytes(ckpt):
    entries, blobs, offset = [], [], 0
    for group, name, arr in _arrays(ckpt):
        raw = arr.tobytes()
        entries.append({
            "group": group, "name": name, "shape": list(arr.shape),
            "dtype": arr.dtype.str, "offset": offset, "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "model_config": config_to_dict(ckpt.model_config),
        "train_config": config_to_dict(ckpt.train_config),
        "epoch": int(ckpt.epoch),
        "step": int(ckpt.step),
        "rng_state": base64.b64encode(ckpt.rng_state).decode("ascii"),
        "arrays": entries,
    }
    meta = json.dumps(manifest, sort_keys=True).encode("utf-8")
    body = _HEADER.pack(MAGIC, ckpt.format_version, len(meta)) + meta + b"".join(blobs)
    return body + hashlib.sha256(body).digest()


def from_bytes(data):
    if len(data) < _HEADER.size + _DIGEST:
        raise IntegrityError(f"checkpoint truncated: only {len(data)} bytes")
    magic, version, meta_len = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise IntegrityError("not an infmae checkpoint (bad magic)")
    if version != FORMAT_VERSION:
        raise VersionError(
            f"checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
        )
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError("checkpoint checksum mismatch (file corrupt or truncated)")
    start = _HEADER.size + meta_len
    try:
        manifest = json.loads(body[_HEADER.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"unreadable checkpoint manifest: {exc}") from None
    tables = {"param": {}, "optim": {}}
    for entry in manifest["arrays"]:
        lo = start + entry["offset"]
        raw = body[lo:lo + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise IntegrityError(f"array {entry['name']!r} extends past the end of the file")
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
        table = tables[entry["group"]]
        if entry["name"] in table:
            raise IntegrityError(f"array {entry['name']!r} appears twice")
        table[entry["name"]] = arr
    return Checkpoint(
        model_config=config_from_dict(ModelConfig, manifest["model_config"]),
        train_config=config_from_dict(TrainConfig, manifest["train_config"]),
        params=tables["param"],
        optimizer=tables["optim"],
        epoch=manifest["epoch"],
        step=manifest["step"],
        rng_state=base64.b64decode(manifest["rng_state"]),
        format_version=version,
    )


def save_checkpoint(ckpt, path):
    data = to_bytes(ckpt)
    with atomic_write(path) as fh:
        fh.write(data)
    return Path(path)


def load_checkpoint(path):
    return from_bytes(Path(path).read_bytes())


def manifest_of(path):
    """The JSON manifest of a checkpoint without materializing arrays."""
    data = Path(path).read_bytes()
    _, _, meta_len = _HEADER.unpack_from(data)
    return json.loads(data[_HEADER.size:_HEADER.size + meta_len])
