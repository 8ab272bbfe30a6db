"""Binary weight archive.

Layout (little-endian):
    magic "EDAW" | u32 version=1 | u32 tensor_count
    per tensor: u16 name_len | name UTF-8 | u8 dtype (0=float32) | u8 ndim
                | u64 dims[ndim] | u64 byte_offset (into payload)
    payload: contiguous float32 data

Save/load round-trips are bit-exact.
"""

import struct

import numpy as np

from ..errors import ConfigError

MAGIC = b"EDAW"
VERSION = 1
DTYPE_F32 = 0


def save_weights(path, named_arrays):
    """Write an ordered mapping of name -> array as float32."""
    items = [(name, np.ascontiguousarray(arr, dtype="<f4")) for name, arr in named_arrays.items()]
    index = bytearray()
    payload = bytearray()
    offset = 0
    for name, arr in items:
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ConfigError(f"tensor name too long: {name!r}")
        index += struct.pack("<H", len(encoded)) + encoded
        index += struct.pack("<BB", DTYPE_F32, arr.ndim)
        index += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        index += struct.pack("<Q", offset)
        payload += arr.tobytes()
        offset += arr.nbytes
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(items)))
        fh.write(bytes(index))
        fh.write(bytes(payload))


def load_weights(path):
    """Read an archive back into an ordered dict of name -> float32 array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ConfigError(f"{path}: not a weight archive (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ConfigError(f"{path}: unsupported archive version {version}")
    pos = 12
    entries = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        dtype, ndim = struct.unpack_from("<BB", blob, pos)
        pos += 2
        if dtype != DTYPE_F32:
            raise ConfigError(f"{path}: unknown dtype code {dtype}")
        dims = struct.unpack_from(f"<{ndim}Q", blob, pos)
        pos += 8 * ndim
        (offset,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        entries.append((name, dims, offset))
    payload_start = pos
    out = {}
    for name, dims, offset in entries:
        n = int(np.prod(dims)) if dims else 1
        start = payload_start + offset
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=start)
        out[name] = arr.reshape(dims).copy()
    return out


def save_model(path, net):
    save_weights(path, {p.name: p.data for p in net.parameters()})


def load_model(path, net):
    """Load archived weights into a built net; names and shapes must match."""
    weights = load_weights(path)
    table = net.param_table
    missing = set(table) - set(weights)
    extra = set(weights) - set(table)
    if missing or extra:
        raise ConfigError(
            f"{path}: parameter names do not match model "
            f"(missing {sorted(missing)[:3]}..., extra {sorted(extra)[:3]}...)"
            if missing and extra
            else f"{path}: parameter name mismatch (missing={sorted(missing)[:5]}, extra={sorted(extra)[:5]})"
        )
    for name, param in table.items():
        arr = weights[name]
        if arr.shape != param.data.shape:
            raise ConfigError(
                f"{path}: shape mismatch for {name}: {arr.shape} vs {param.data.shape}"
            )
        param.data = arr.astype(np.float64)
    return net
