"""Versioned binary parameter checkpoints with a content checksum.

Layout (little endian):

    magic   b"GMCK"
    u16     format version (1)
    u16     flags (bit 0: regression heads present)
    u16     input channels
    u16     name length, then the architecture name (utf-8)
    u16     dtype string length, then the numpy dtype name
    u32     number of parameter entries
    per entry: u16 key length, key (utf-8), u8 ndim, u32 per dim, raw bytes
    32 bytes  sha256 over everything before it
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from .arch import Network, build_network

MAGIC = b"GMCK"


def save_network(net: Network, path) -> None:
    parts = [MAGIC, struct.pack("<HHH", 1, 1 if net.has_heads else 0,
                                net.in_channels)]
    name_b = net.name.encode()
    parts.append(struct.pack("<H", len(name_b)))
    parts.append(name_b)
    dtype_b = np.dtype(net.dtype).name.encode()
    parts.append(struct.pack("<H", len(dtype_b)))
    parts.append(dtype_b)
    state = net.state_dict()
    parts.append(struct.pack("<I", len(state)))
    for key in sorted(state):
        arr = state[key]
        kb = key.encode()
        parts.append(struct.pack("<H", len(kb)))
        parts.append(kb)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    blob = b"".join(parts)
    digest = hashlib.sha256(blob).digest()
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.write(digest)


def load_network(path, rng_seed: int = 0) -> Network:
    with open(path, "rb") as fh:
        raw = fh.read()
    blob, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(blob).digest() != digest:
        raise ValueError(f"{path}: checkpoint checksum mismatch")
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    off = 4
    version, flags, in_channels = struct.unpack_from("<HHH", blob, off)
    off += 6
    if version != 1:
        raise ValueError(f"unsupported checkpoint version {version}")
    (nlen,) = struct.unpack_from("<H", blob, off)
    off += 2
    name = blob[off:off + nlen].decode()
    off += nlen
    (dlen,) = struct.unpack_from("<H", blob, off)
    off += 2
    dtype = np.dtype(blob[off:off + dlen].decode())
    off += dlen
    (n_entries,) = struct.unpack_from("<I", blob, off)
    off += 4
    state = {}
    for _ in range(n_entries):
        (klen,) = struct.unpack_from("<H", blob, off)
        off += 2
        key = blob[off:off + klen].decode()
        off += klen
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
        off += 8 * count
        state[key] = arr.reshape(shape)
    net = build_network(name, in_channels=in_channels, heads=bool(flags & 1),
                        rng_seed=rng_seed, dtype=dtype)
    net.load_state(state)
    return net
