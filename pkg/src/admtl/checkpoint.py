"""Binary parameter checkpoints.

Layout (all integers little-endian)::

    magic      8 bytes  b"ADMTLCKP"
    version    u32
    count      u32
    count x {
        name_len u32, name utf-8 bytes,
        ndim u32, extents u32 * ndim,
        values float64-le * prod(extents)
    }
"""
import struct

import numpy as np

MAGIC = b"ADMTLCKP"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(arrays):
    """Serialize an ordered ``{name: ndarray}`` mapping to bytes."""
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(arrays))]
    for name, value in arrays.items():
        value = np.asarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(value.tobytes(order="C"))
    return b"".join(parts)


def loads(blob):
    """Inverse of :func:`dumps`; returns an ordered dict of arrays."""
    view = memoryview(blob)
    if bytes(view[:8]) != MAGIC:
        raise CheckpointError("not an admtl checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", view, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 16
    out = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", view, pos)
            pos += 4
            name = bytes(view[pos:pos + name_len]).decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<I", view, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", view, pos)
            pos += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * size > len(view):
                raise CheckpointError(f"truncated checkpoint: {name!r} needs {8 * size} bytes")
            values = np.frombuffer(view, dtype="<f8", count=size, offset=pos)
            pos += 8 * size
            out[name] = values.reshape(shape).astype(np.float64)
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if pos != len(view):
        raise CheckpointError(f"{len(view) - pos} trailing bytes after last parameter")
    return out


def save(path, params):
    """Write Parameters (an iterable) to ``path``."""
    with open(path, "wb") as fh:
        fh.write(dumps({p.name: p.data for p in params}))


def load_into(path, params):
    """Overwrite the values of ``params`` in place from a checkpoint file."""
    with open(path, "rb") as fh:
        stored = loads(fh.read())
    by_name = {p.name: p for p in params}
    missing = sorted(set(by_name) - set(stored))
    extra = sorted(set(stored) - set(by_name))
    if missing or extra:
        raise CheckpointError(f"checkpoint/model mismatch: missing {missing}, unexpected {extra}")
    for name, value in stored.items():
        p = by_name[name]
        if value.shape != p.shape:
            raise CheckpointError(f"{name}: checkpoint shape {value.shape} != model shape {p.shape}")
        p.data[...] = value
