"""Binary model checkpoints.

Layout: 8-byte magic, little-endian u32 header length, UTF-8 JSON header,
then the flat float32 parameter vector (little-endian).  The header pins the
model kind, full topology, a topology hash and the init seed, so loading
into the wrong architecture fails loudly instead of silently misreshaping.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from . import layers as L

MAGIC = b"ADVSHCP1"


def save_checkpoint(path, kind: str, layer_stack, params, seed: int, meta=None) -> None:
    """Write params (list of arrays or flat vector) for the given stack."""
    flat = params if isinstance(params, np.ndarray) else L.flatten_params(params)
    flat = np.ascontiguousarray(flat, dtype=np.float32)
    expected = L.param_count(layer_stack)
    if flat.size != expected:
        raise ValueError(f"checkpoint has {flat.size} params, topology needs {expected}")
    header = {
        "kind": kind,
        "topology": L.topology(layer_stack),
        "topology_sha256": L.topology_hash(layer_stack),
        "seed": int(seed),
        "n_params": int(flat.size),
        "meta": dict(meta or {}),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        if flat.dtype.byteorder == ">":
            flat = flat.astype("<f4")
        f.write(flat.tobytes())


def load_checkpoint(path, expect_kind: str | None = None):
    """Return (layer_stack, params_list, header). Validates magic, hash, size."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a model checkpoint (bad magic)")
    (hlen,) = struct.unpack_from("<I", raw, len(MAGIC))
    start = len(MAGIC) + 4
    if start + hlen > len(raw):
        raise ValueError(f"{path}: truncated checkpoint header")
    header = json.loads(raw[start:start + hlen].decode())
    stack = L.layers_from_topology(header["topology"])
    if L.topology_hash(stack) != header.get("topology_sha256"):
        raise ValueError(f"{path}: topology hash mismatch, file corrupt or edited")
    if expect_kind is not None and header.get("kind") != expect_kind:
        raise ValueError(f"{path}: checkpoint kind {header.get('kind')!r}, expected {expect_kind!r}")
    body = raw[start + hlen:]
    n = header["n_params"]
    if len(body) != 4 * n:
        raise ValueError(f"{path}: parameter payload is {len(body)} bytes, expected {4 * n}")
    flat = np.frombuffer(body, dtype="<f4").astype(np.float32, copy=False)
    return stack, L.unflatten_params(flat, stack), header
