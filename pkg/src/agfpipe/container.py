"""Binary container for named tensors.

Layout (all little-endian):

    magic   b"AGFT"
    u32     format version (currently 1)
    u32     number of entries
    index   per entry: u16 name length, name bytes (utf-8), u8 dtype code,
            u8 ndim, u32 dims[ndim], u64 absolute payload offset, u64 nbytes
    payload raw array bytes, row-major, in index order

The index is self-describing: shapes and dtypes are readable without any
knowledge of the writer's configuration. Arbitrary metadata rides along as
uint8 entries holding utf-8 JSON (see write_meta/read_meta helpers).
"""

import json
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"AGFT"
VERSION = 1

_DTYPE_CODES = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("<i4"): 2,
    np.dtype("<i8"): 3,
    np.dtype("u1"): 4,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def _coerce(arr: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(arr)
    dt = a.dtype.newbyteorder("<") if a.dtype.byteorder == ">" else a.dtype
    a = a.astype(dt, copy=False)
    if np.dtype(a.dtype.str.lstrip("<=|>")) not in (
        np.dtype("f4"), np.dtype("f8"), np.dtype("i4"), np.dtype("i8"), np.dtype("u1")
    ):
        raise FormatError(f"unsupported dtype for container: {a.dtype}")
    return a


def write_tensors(path, tensors: dict) -> None:
    """Write named arrays to `path`. Entries are sorted by name so identical
    inputs always produce byte-identical files."""
    items = []
    for name in sorted(tensors):
        arr = _coerce(np.asarray(tensors[name]))
        items.append((name, arr))

    index_parts = []
    sizes = []
    for name, arr in items:
        nb = name.encode("utf-8")
        index_parts.append((nb, _DTYPE_CODES[np.dtype(arr.dtype.str)], arr.shape, arr.nbytes))
        sizes.append(arr.nbytes)

    header_len = len(MAGIC) + 4 + 4
    index_len = sum(2 + len(nb) + 1 + 1 + 4 * len(shape) + 8 + 8
                    for nb, _, shape, _ in index_parts)
    offset = header_len + index_len

    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(items)))
        for (nb, code, shape, nbytes) in index_parts:
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<BB", code, len(shape)))
            for d in shape:
                f.write(struct.pack("<I", d))
            f.write(struct.pack("<QQ", offset, nbytes))
            offset += nbytes
        for _, arr in items:
            f.write(arr.tobytes())


def read_tensors(path) -> dict:
    """Read all named arrays from a container file."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    try:
        version, n_entries = struct.unpack_from("<II", blob, 4)
    except struct.error as e:
        raise FormatError(f"{path}: truncated header") from e
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")

    out = {}
    pos = 12
    for _ in range(n_entries):
        try:
            (name_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + name_len].decode("utf-8")
            pos += name_len
            code, ndim = struct.unpack_from("<BB", blob, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", blob, pos) if ndim else ()
            pos += 4 * ndim
            offset, nbytes = struct.unpack_from("<QQ", blob, pos)
            pos += 16
        except struct.error as e:
            raise FormatError(f"{path}: truncated index") from e
        if code not in _CODE_DTYPES:
            raise FormatError(f"{path}: unknown dtype code {code} for entry {name!r}")
        dtype = _CODE_DTYPES[code]
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
        if nbytes != expected:
            raise FormatError(
                f"{path}: entry {name!r} shape {shape} inconsistent with payload "
                f"({nbytes} bytes, expected {expected})")
        if offset + nbytes > len(blob):
            raise FormatError(f"{path}: entry {name!r} payload truncated")
        arr = np.frombuffer(blob[offset:offset + nbytes], dtype=dtype).reshape(shape)
        out[name] = arr.copy()
    return out


def meta_entry(obj) -> np.ndarray:
    """Encode a JSON-able object as a uint8 tensor entry."""
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode("utf-8"), dtype=np.uint8).copy()


def parse_meta(arr: np.ndarray):
    return json.loads(bytes(arr.astype(np.uint8).tobytes()).decode("utf-8"))
