"""Data-file formats emitted by the CLI.

Time series go to UTF-8 CSV with ``#``-prefixed header comments carrying
the fully resolved configuration, so every artifact is self-describing
and byte-stable under re-runs with the same config and seed.

Matrices (density-matrix kernels, Wigner grids) use a flat binary layout
parseable from any language:

    bytes 0..15   magic  b"UNRAVELKERNEL\\x00\\x00\\x00"
    bytes 16..23  n_rows, unsigned 64-bit little-endian
    bytes 24..31  n_cols, unsigned 64-bit little-endian
    bytes 32..39  flag word, unsigned 64-bit little-endian
                  (1 = complex, real/imag interleaved; 0 = real only)
    bytes 40..    row-major IEEE-754 64-bit little-endian values

The binary layout has no room for comment lines; the CSV table emitted by
the same command carries the config and per-file statistics instead.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"UNRAVELKERNEL\x00\x00\x00"
FLAG_COMPLEX = 1
FLAG_REAL = 0


def write_kernel(path: str | Path, values: np.ndarray) -> None:
    """Write a real or complex 2-d array in the flat binary layout."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("kernel files hold 2-d arrays")
    is_complex = np.iscomplexobj(values)
    header = MAGIC + struct.pack("<QQQ", values.shape[0], values.shape[1],
                                 FLAG_COMPLEX if is_complex else FLAG_REAL)
    if is_complex:
        payload = np.empty(values.shape + (2,), dtype="<f8")
        payload[..., 0] = values.real
        payload[..., 1] = values.imag
    else:
        payload = values.astype("<f8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def read_kernel(path: str | Path) -> np.ndarray:
    """Read a file written by `write_kernel`."""
    raw = Path(path).read_bytes()
    if raw[:16] != MAGIC:
        raise ValueError(f"{path}: bad magic")
    n_rows, n_cols, flags = struct.unpack("<QQQ", raw[16:40])
    if flags == FLAG_COMPLEX:
        flat = np.frombuffer(raw, dtype="<f8", offset=40)
        if flat.size != 2 * n_rows * n_cols:
            raise ValueError(f"{path}: truncated payload")
        pair = flat.reshape(n_rows, n_cols, 2)
        return (pair[..., 0] + 1j * pair[..., 1]).astype(np.complex128)
    if flags == FLAG_REAL:
        flat = np.frombuffer(raw, dtype="<f8", offset=40)
        if flat.size != n_rows * n_cols:
            raise ValueError(f"{path}: truncated payload")
        return flat.reshape(n_rows, n_cols).astype(np.float64)
    raise ValueError(f"{path}: unknown flag word {flags}")


def format_value(v) -> str:
    """Round-trip-stable text for CSV cells (repr keeps float precision)."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path: str | Path, columns: list[str], rows: list[tuple],
                header_lines: list[str]) -> None:
    """CSV with '#'-prefixed metadata lines, then a column-name row."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(format_value(v) for v in row) + "\n")
