"""Field serialization: analysis-grade CSV and 16-bit PGM heatmaps.

CSV files open with one header line ``nx,ny,origin_x,origin_y,spacing``
followed by one line per grid row (row-major), every float printed with 17
significant digits so a re-import reproduces the original bit for bit.
PGM files are binary P5 with a 65535 max value, min-max normalized; a
constant field maps to all zeros.
"""

from __future__ import annotations

import numpy as np

from ..errors import ElastimapError
from ..gprf import GridSpec, ScalarField

FORMATS = ("csv", "pgm")


class ExportError(ElastimapError):
    """Writing or reading a field file failed; the message carries the path."""


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def export_field(field: ScalarField, path, fmt: str) -> None:
    """Write a field to ``path`` in the given format (``csv`` or ``pgm``)."""
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}, got {fmt!r}")
    try:
        if fmt == "csv":
            _write_csv(field, path)
        else:
            _write_pgm(field, path)
    except OSError as exc:
        raise ExportError(f"{path}: {exc}") from exc


def _write_csv(field: ScalarField, path) -> None:
    spec = field.spec
    lines = [
        f"{spec.nx},{spec.ny},{_fmt(spec.origin[0])},{_fmt(spec.origin[1])},{_fmt(spec.spacing)}"
    ]
    grid = field.grid()
    for row in grid:
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_field_csv(path) -> ScalarField:
    """Inverse of the CSV writer."""
    try:
        with open(path, "r", encoding="ascii") as fh:
            header = fh.readline().strip().split(",")
            if len(header) != 5:
                raise ExportError(f"{path}: malformed header")
            nx, ny = int(header[0]), int(header[1])
            spec = GridSpec(
                origin=(float(header[2]), float(header[3])),
                spacing=float(header[4]),
                nx=nx,
                ny=ny,
            )
            values = np.array(
                [float(v) for line in fh for v in line.strip().split(",") if v]
            )
    except OSError as exc:
        raise ExportError(f"{path}: {exc}") from exc
    if values.size != spec.size:
        raise ExportError(f"{path}: expected {spec.size} values, found {values.size}")
    return ScalarField(spec, values)


def _write_pgm(field: ScalarField, path) -> None:
    grid = field.grid()
    lo = grid.min()
    hi = grid.max()
    if hi > lo:
        scaled = np.round((grid - lo) / (hi - lo) * 65535.0)
    else:
        scaled = np.zeros_like(grid)
    pixels = scaled.astype(">u2")
    header = f"P5\n{field.spec.nx} {field.spec.ny}\n65535\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(pixels.tobytes())


def read_field_pgm(path) -> np.ndarray:
    """Read a binary 16-bit P5 file back as a (ny, nx) uint16 array."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ExportError(f"{path}: {exc}") from exc
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise ExportError(f"{path}: not a binary P5 file")
    nx, ny = (int(v) for v in parts[1].split())
    if parts[2] != b"65535":
        raise ExportError(f"{path}: expected a 16-bit max value")
    pixels = np.frombuffer(parts[3], dtype=">u2", count=nx * ny)
    return pixels.reshape(ny, nx).astype(np.uint16)
