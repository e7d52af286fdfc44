# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0

"""The GRFK tensor snapshot container used for checkpoints.

Layout, all integers little-endian::

    b"GRFK"                 magic
    u8                      format version
    u32 + bytes             JSON metadata (sorted keys, UTF-8)
    u32                     number of entries
    per entry:
        u16 + bytes         name (UTF-8)
        u8                  number of dimensions
        u32 * ndim          dimensions
        f8 * prod(dims)     values, row-major

"""

import json
import struct

import numpy as np

from graformer.exceptions import SnapshotError
from graformer.misc import ensure_dir_for_file

MAGIC = b"GRFK"
FORMAT_VERSION = 1


def snapshot_bytes(entries, metadata=None):
    """Encode `entries`, a sequence of (name, array) pairs, and `metadata`."""
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    entries = list(entries)
    parts = [MAGIC, struct.pack("<B", FORMAT_VERSION), struct.pack("<I", len(meta)), meta]
    parts.append(struct.pack("<I", len(entries)))
    for name, values in entries:
        values = np.array(values, dtype="<f8", order="C")
        bname = name.encode("utf-8")
        parts.append(struct.pack("<H", len(bname)))
        parts.append(bname)
        parts.append(struct.pack("<B", values.ndim))
        parts.append(struct.pack(f"<{values.ndim}I", *values.shape))
        parts.append(values.tobytes())
    return b"".join(parts)


class _Reader:
    """Sequential reads from a bytes buffer, raising SnapshotError at the end."""

    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise SnapshotError(f"Snapshot is truncated at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_snapshot(data):
    """Decode snapshot bytes.

    Returns (metadata, entries) where `entries` is a dict of name to array,
    in file order.

    """
    reader = _Reader(data)
    if reader.take(4) != MAGIC:
        raise SnapshotError("Not a GRFK snapshot: bad magic number")
    version, = reader.unpack("<B")
    if version != FORMAT_VERSION:
        raise SnapshotError(f"Unsupported snapshot version {version}")
    meta_len, = reader.unpack("<I")
    try:
        metadata = json.loads(reader.take(meta_len).decode("utf-8"))
    except ValueError as err:
        raise SnapshotError(f"Snapshot metadata is unreadable: {err}") from err

    count, = reader.unpack("<I")
    entries = {}
    for _ in range(count):
        name_len, = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        ndim, = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I")
        n = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(reader.take(8 * n), dtype="<f8").astype(np.float64)
        if name in entries:
            raise SnapshotError(f"Snapshot has entry {name!r} twice")
        entries[name] = values.reshape(shape)
    if reader.pos != len(data):
        raise SnapshotError(f"Snapshot has {len(data) - reader.pos} bytes of trailing junk")
    return metadata, entries


def write_snapshot(path, entries, metadata=None):
    """Write a snapshot file."""
    ensure_dir_for_file(path)
    with open(path, "wb") as f:
        f.write(snapshot_bytes(entries, metadata))


def read_snapshot(path):
    """Read a snapshot file, returning (metadata, entries)."""
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as err:
        raise SnapshotError(f"Couldn't read snapshot {path!r}: {err}") from err
    return parse_snapshot(data)
