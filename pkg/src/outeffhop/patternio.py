"""Pattern file formats.

CSV: one pattern per row, optional header, decimal float literals.
Binary: ``b"OEHP"``, then little-endian u32 version (1), u32 d, u32 M,
then ``d*M`` little-endian float64 values, column-major (pattern by pattern).

Both loaders return a ``(d, M)`` array and reject non-finite values.
"""

import csv
import struct

import numpy as np

MAGIC = b"OEHP"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


def _finite(xi, path):
    if not np.all(np.isfinite(xi)):
        raise ValueError(f"{path}: pattern file contains non-finite values")
    return xi


def load_patterns_csv(path):
    rows = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                if i == 0 and not rows:
                    continue  # header
                raise ValueError(f"{path}: line {i + 1} is not numeric")
    if not rows:
        raise ValueError(f"{path}: no patterns found")
    if len({len(r) for r in rows}) != 1:
        raise ValueError(f"{path}: rows have different lengths")
    return _finite(np.array(rows, dtype=np.float64).T, path)


def write_patterns_csv(fh, patterns):
    xi = np.asarray(patterns, dtype=np.float64)
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow([f"x{i}" for i in range(xi.shape[0])])
    for col in xi.T:
        writer.writerow([repr(float(v)) for v in col])


def save_patterns_csv(path, patterns):
    with open(path, "w", newline="") as fh:
        write_patterns_csv(fh, patterns)


def load_patterns_binary(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, d, M = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    body = data[_HEADER.size:]
    if len(body) != 8 * d * M:
        raise ValueError(f"{path}: expected {d * M} values, found {len(body) // 8}")
    values = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return _finite(values.reshape(M, d).T.copy(), path)


def save_patterns_binary(path, patterns):
    xi = np.asarray(patterns, dtype=np.float64)
    d, M = xi.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, d, M))
        fh.write(np.ascontiguousarray(xi.T, dtype="<f8").tobytes())


def load_patterns(path):
    """Dispatch on content: binary if the file starts with the magic bytes."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        return load_patterns_binary(path)
    return load_patterns_csv(path)


def save_patterns(path, patterns):
    if str(path).endswith((".bin", ".oehp")):
        save_patterns_binary(path, patterns)
    else:
        save_patterns_csv(path, patterns)
