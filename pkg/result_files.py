"""CSV and PGM result files.

CSV layout: ``# key=value`` metadata lines, one column header line, then data
rows. Floats carry 17 significant digits so a file re-parses to the exact
values that were written. Nothing time-dependent goes into a file.
"""

import csv
import io
import logging
import os
import tempfile
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Sequence, Tuple, Union

import numpy as np

from ensembles import Ensemble, SensingMatrix

PathLike = Union[str, Path]

MATRIX_HEADER = "# rows,cols,ensemble,seed"


def write_atomic(path: PathLike, data: bytes) -> None:
    """Replace ``path`` with ``data`` in one step; readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, temporary_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as stream:
            stream.write(data)
            stream.flush()
            os.fsync(stream.fileno())
        os.replace(temporary_name, path)
    except BaseException:
        try:
            os.unlink(temporary_name)
        except FileNotFoundError:
            pass
        raise


def format_value(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, Enum):
        return value.value
    if value is None:
        return ""
    return str(value)


def _meta_lines(meta: Mapping[str, Any]) -> List[str]:
    return [f"# {key}={format_value(value)}" for key, value in meta.items()]


def _csv_body(header: List[str], rows: Iterable[Sequence[Any]], width: int) -> str:
    buffer = io.StringIO()
    buffer.write("".join(f"{line}\n" for line in header))
    writer = csv.writer(buffer, lineterminator="\n")
    for row in rows:
        if width and len(row) != width:
            raise ValueError(f"Row has {len(row)} fields, header has {width}")
        writer.writerow([format_value(v) for v in row])
    return buffer.getvalue()


def write_csv(path: PathLike, meta: Mapping[str, Any], columns: Sequence[str],
              rows: Iterable[Sequence[Any]]) -> Path:
    body = _csv_body(_meta_lines(meta), [list(columns), *rows], len(columns))
    write_atomic(path, body.encode("utf-8"))
    logging.info(f"💾 Wrote {path}")
    return Path(path)


def read_csv(path: PathLike) -> Tuple[Dict[str, str], List[str], List[List[str]]]:
    """Metadata, column names and raw string rows of a file written by write_csv."""
    meta: Dict[str, str] = {}
    table: List[str] = []
    with open(path, encoding="utf-8", newline="") as stream:
        for line in stream:
            if line.startswith("#"):
                key, sep, value = line[1:].strip().partition("=")
                if sep:
                    meta[key] = value
            elif line.strip():
                table.append(line)
    records = list(csv.reader(table))
    if not records:
        raise ValueError(f"{path}: no column header line")
    return meta, records[0], records[1:]


def read_numeric_column(path: PathLike, name: str) -> np.ndarray:
    _, columns, rows = read_csv(path)
    try:
        index = columns.index(name)
    except ValueError as exc:
        raise ValueError(f"{path}: no column named {name!r}") from exc
    return np.array([float(row[index]) for row in rows])


def write_recovery_csv(path: PathLike, meta: Mapping[str, Any], truth, estimate) -> Path:
    estimate = np.asarray(estimate, dtype=float)
    truth = np.full(estimate.size, np.nan) if truth is None else np.asarray(truth, dtype=float)
    rows = [(i, truth[i], estimate[i]) for i in range(estimate.size)]
    return write_csv(path, meta, ("index", "truth", "estimate"), rows)


def write_trace_csv(path: PathLike, meta: Mapping[str, Any], algo: str, seed: int,
                    trace_log10) -> Path:
    """One row per time step; MSE converted from log10 units to decibels."""
    rows = [(n, 10.0 * float(value), algo, seed) for n, value in enumerate(trace_log10, start=1)]
    return write_csv(path, meta, ("n", "mse_db", "algo", "seed"), rows)


def write_matrix_csv(path: PathLike, matrix: SensingMatrix) -> Path:
    seed = "" if matrix.seed is None else str(matrix.seed)
    header = [MATRIX_HEADER, f"# {matrix.n_rows},{matrix.n_cols},{matrix.ensemble.value},{seed}"]
    write_atomic(path, _csv_body(header, matrix.entries, matrix.n_cols).encode("utf-8"))
    logging.info(f"💾 Wrote {path}")
    return Path(path)


def read_matrix_csv(path: PathLike) -> SensingMatrix:
    with open(path, encoding="utf-8") as stream:
        lines = [line.rstrip("\n") for line in stream if line.strip()]
    if len(lines) < 2 or lines[0] != MATRIX_HEADER:
        raise ValueError(f"{path}: not a matrix file (expected {MATRIX_HEADER!r} first)")
    try:
        rows_text, cols_text, ensemble, seed = lines[1][1:].strip().split(",")
        n_rows, n_cols = int(rows_text), int(cols_text)
        entries = np.array([[float(v) for v in record] for record in csv.reader(lines[2:])])
    except ValueError as exc:
        raise ValueError(f"{path}: malformed matrix file") from exc
    if entries.shape != (n_rows, n_cols):
        raise ValueError(f"{path}: header says {n_rows}x{n_cols}, body is {entries.shape}")
    # a saved matrix is taken as given; normalization already happened before writing
    return SensingMatrix(entries, Ensemble(ensemble), False, int(seed) if seed else None)


def write_frame_csv(path: PathLike, frame) -> Path:
    meta = {
        "rows": frame.length,
        "atoms": frame.size,
        "lower_bound": frame.lower_bound,
        "upper_bound": frame.upper_bound,
        "tight": frame.tight,
    }
    columns = [f"atom_{j}" for j in range(frame.size)]
    return write_csv(path, meta, columns, [tuple(row) for row in frame.atoms])


def to_gray(values, max_value: float) -> np.ndarray:
    """floor(255 * v / max) clipped to 0..255."""
    values = np.asarray(values, dtype=float)
    if max_value <= 0:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.clip(np.floor(255.0 * values / max_value), 0, 255).astype(np.uint8)


def write_pgm(path: PathLike, pixels) -> Path:
    """Binary 8-bit greymap (P5)."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 2 or pixels.dtype != np.uint8:
        raise ValueError("PGM pixels must be a 2-D uint8 array")
    height, width = pixels.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    write_atomic(path, header + np.ascontiguousarray(pixels).tobytes())
    logging.info(f"🖼 Wrote {path}")
    return Path(path)


def read_pgm(path: PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    fields: List[bytes] = []
    position = 0
    while len(fields) < 4:
        while position < len(data) and data[position:position + 1].isspace():
            position += 1
        start = position
        while position < len(data) and not data[position:position + 1].isspace():
            position += 1
        if start == position:
            raise ValueError(f"{path}: truncated PGM header")
        fields.append(data[start:position])
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM file")
    width, height, max_value = (int(f) for f in fields[1:])
    if max_value != 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported, maxval={max_value}")
    body = data[position + 1:]
    if len(body) != width * height:
        raise ValueError(f"{path}: expected {width * height} pixels, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width)
