"""
Local artifact store for run outputs (checkpoints, CSVs, resolved configs).
Every write goes to `<name>.tmp` in the target directory and is renamed into
place, so a reader never sees a partial file.
"""
from __future__ import annotations

import csv
import io
import os
from pathlib import Path
from typing import Iterable, Sequence


def write_bytes(path: str | os.PathLike, data: bytes) -> Path:
    """Write bytes atomically. Returns the final path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(data)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()
    return path


def write_text(path: str | os.PathLike, text: str) -> Path:
    return write_bytes(path, text.encode("utf-8"))


def csv_bytes(header: Sequence[str], rows: Iterable[Sequence[object]]) -> bytes:
    """UTF-8 CSV, comma-delimited, header first, '\\n' line endings."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue().encode("utf-8")


def write_csv(path: str | os.PathLike, header: Sequence[str], rows: Iterable[Sequence[object]]) -> Path:
    return write_bytes(path, csv_bytes(header, rows))


def read_bytes(path: str | os.PathLike) -> bytes:
    """Raises FileNotFoundError if the file does not exist."""
    return Path(path).read_bytes()


def exists(path: str | os.PathLike) -> bool:
    return Path(path).is_file()
