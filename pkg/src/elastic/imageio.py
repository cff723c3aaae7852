"""Image encoding and run-report serialization.

Grids are quantized from [-1, 1] to bytes with round-half-up, written as
binary PGM (P5) for single-channel grids or as minimal 8-bit PNG (grayscale
or RGB).  Reports are plain text: a key=value header, a `columns=` line,
then one comma-separated row per record; parsing the file back yields the
original values exactly (floats are written with repr).
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .validation import check_grid, require

PGM = "pgm"
PNG = "png"
FORMATS = (PGM, PNG)


def quantize(g: np.ndarray) -> np.ndarray:
    """Map [-1, 1] to [0, 255]: byte = floor(127.5 * (v + 1) + 0.5), clamped."""
    g = check_grid(g, "g")
    levels = np.floor(127.5 * (g + 1.0) + 0.5)
    return np.clip(levels, 0.0, 255.0).astype(np.uint8)


def _png_chunk(kind: bytes, payload: bytes) -> bytes:
    crc = zlib.crc32(payload, zlib.crc32(kind))
    return struct.pack(">I", len(payload)) + kind + payload + struct.pack(">I", crc)


def _encode_png(pixels: np.ndarray) -> bytes:
    h, w, c = pixels.shape
    color_type = 0 if c == 1 else 2
    raw = bytearray()
    for row in pixels:
        raw.append(0)  # filter: none
        raw.extend(row.tobytes())
    out = bytearray(b"\x89PNG\r\n\x1a\n")
    out += _png_chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, color_type, 0, 0, 0))
    out += _png_chunk(b"IDAT", zlib.compress(bytes(raw), 9))
    out += _png_chunk(b"IEND", b"")
    return bytes(out)


def render_image(g: np.ndarray, fmt: str = PGM) -> bytes:
    """Encode a grid as image bytes; PGM accepts 1 channel, PNG 1 or 3."""
    require(fmt in FORMATS, f"unsupported format {fmt!r}; choose from {FORMATS}")
    pixels = quantize(g)
    h, w, c = pixels.shape
    if fmt == PGM:
        require(c == 1, f"PGM supports exactly 1 channel, got {c}")
        return b"P5\n%d %d\n255\n" % (w, h) + pixels[:, :, 0].tobytes()
    require(c in (1, 3), f"PNG supports 1 or 3 channels, got {c}")
    return _encode_png(pixels)


@dataclass
class RunReport:
    """Everything needed to rerun and inspect one CLI invocation: a config
    echo plus final metrics in `header`, and per-step (or per-strategy)
    records as rows under fixed `columns`."""

    header: dict = field(default_factory=dict)
    columns: tuple[str, ...] = ()
    rows: list[dict] = field(default_factory=list)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    text = str(value)
    require("\n" not in text and "," not in text and "=" not in text,
            f"report value {text!r} may not contain newline, comma or equals")
    return text


def _parse_value(text: str):
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def dump_report(report: RunReport) -> str:
    lines = [f"{key}={_format_value(value)}" for key, value in report.header.items()]
    lines.append("columns=" + ",".join(report.columns))
    for row in report.rows:
        lines.append(",".join(_format_value(row[col]) for col in report.columns))
    return "\n".join(lines) + "\n"


def save_report(report: RunReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_report(report))


def parse_report(text: str) -> RunReport:
    header: dict = {}
    columns: tuple[str, ...] = ()
    rows: list[dict] = []
    lines = [line for line in text.split("\n") if line]
    seen_columns = False
    for line in lines:
        if not seen_columns:
            key, _, value = line.partition("=")
            require(_ == "=", f"malformed header line {line!r}")
            if key == "columns":
                columns = tuple(value.split(",")) if value else ()
                seen_columns = True
            else:
                header[key] = _parse_value(value)
        else:
            cells = line.split(",")
            require(len(cells) == len(columns), f"row has {len(cells)} cells, expected {len(columns)}")
            rows.append({col: _parse_value(cell) for col, cell in zip(columns, cells)})
    require(seen_columns, "report has no columns= line")
    return RunReport(header=header, columns=columns, rows=rows)


def load_report(path) -> RunReport:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_report(fh.read())
