"""Readers and writers for event streams, PFM/PPM images and CSV tables."""

from __future__ import annotations

import csv
import json
import re
from pathlib import Path

import numpy as np

from .events import EventStream

EVENT_RECORD = np.dtype([("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "V3"), ("t", "<f8")])
assert EVENT_RECORD.itemsize == 16


class FormatError(ValueError):
    """A file does not follow the expected layout; message carries the position."""


# --------------------------------------------------------------------------- events


def write_events_csv(path, stream: EventStream, precision=17):
    with open(path, "w", newline="") as fh:
        fh.write("x,y,t,p\n")
        if len(stream):
            fmt = f"%d,%d,%.{precision}g,%d"
            np.savetxt(fh, np.column_stack([stream.x, stream.y, stream.t, stream.p]),
                       fmt=fmt.split(","), delimiter=",")


def read_events_csv(path, width, height):
    path = Path(path)
    with open(path, "r", newline="") as fh:
        header = fh.readline().strip()
        if header.replace(" ", "") != "x,y,t,p":
            raise FormatError(f"{path}:1: expected header 'x,y,t,p', got {header!r}")
        body = fh.read()
    xs, ys, ts, ps = [], [], [], []
    for lineno, line in enumerate(body.splitlines(), start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        try:
            if len(parts) != 4:
                raise ValueError(f"expected 4 fields, got {len(parts)}")
            x, y, t, p = int(parts[0]), int(parts[1]), float(parts[2]), int(parts[3])
            if p not in (1, -1):
                raise ValueError(f"polarity {p} not in {{1, -1}}")
            if not (0 <= x < width and 0 <= y < height):
                raise ValueError(f"pixel ({x}, {y}) outside {width}x{height} sensor")
            if not np.isfinite(t):
                raise ValueError("non-finite timestamp")
            if ts and t < ts[-1]:
                raise ValueError("timestamps not sorted")
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        xs.append(x)
        ys.append(y)
        ts.append(t)
        ps.append(p)
    return EventStream(xs, ys, ts, ps, width, height)


def write_events_bin(path, stream: EventStream):
    rec = np.zeros(len(stream), dtype=EVENT_RECORD)
    rec["x"], rec["y"], rec["p"], rec["t"] = stream.x, stream.y, stream.p, stream.t
    Path(path).write_bytes(rec.tobytes())


def read_events_bin(path, width, height):
    data = Path(path).read_bytes()
    if len(data) % EVENT_RECORD.itemsize:
        whole = len(data) // EVENT_RECORD.itemsize
        raise FormatError(f"{path}: truncated record at byte offset {whole * EVENT_RECORD.itemsize}")
    rec = np.frombuffer(data, dtype=EVENT_RECORD)
    pad = np.frombuffer(data, dtype=np.uint8).reshape(-1, EVENT_RECORD.itemsize)[:, 5:8]
    bad = np.flatnonzero(np.any(pad != 0, axis=1) | (np.abs(rec["p"].astype(int)) != 1)
                         | (rec["x"] >= width) | (rec["y"] >= height) | ~np.isfinite(rec["t"]))
    if bad.size:
        raise FormatError(f"{path}: invalid record at byte offset {bad[0] * EVENT_RECORD.itemsize}")
    unsorted = np.flatnonzero(np.diff(rec["t"]) < 0)
    if unsorted.size:
        raise FormatError(f"{path}: timestamps not sorted at byte offset "
                          f"{(unsorted[0] + 1) * EVENT_RECORD.itemsize}")
    return EventStream(rec["x"], rec["y"], rec["t"], rec["p"], width, height)


def write_events(path, stream):
    if str(path).endswith(".bin"):
        write_events_bin(path, stream)
    else:
        write_events_csv(path, stream)


def read_events(path, width, height):
    if str(path).endswith(".bin"):
        return read_events_bin(path, width, height)
    return read_events_csv(path, width, height)


# --------------------------------------------------------------------------- images

_TOKEN = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)")


def _header_tokens(data, count, path):
    pos, tokens = 0, []
    for _ in range(count):
        m = _TOKEN.match(data, pos)
        if not m:
            raise FormatError(f"{path}: truncated header at byte offset {pos}")
        tokens.append(m.group(2))
        pos = m.end()
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError(f"{path}: missing raster after header at byte offset {pos}")
    return tokens, pos + 1


def write_pfm(path, image):
    """Three-channel little-endian PFM, rows stored bottom-to-top."""
    img = np.asarray(image, dtype="<f4")
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("PFM writer expects an H x W x 3 image")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"PF\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img[::-1]).tobytes())


def read_pfm(path):
    data = Path(path).read_bytes()
    try:
        tokens, off = _header_tokens(data, 4, path)
        magic = tokens[0].decode("ascii")
        w, h = int(tokens[1]), int(tokens[2])
        scale = float(tokens[3])
    except (ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: malformed PFM header ({exc})") from None
    if magic not in ("PF", "Pf"):
        raise FormatError(f"{path}: bad PFM magic {magic!r}")
    if w < 1 or h < 1 or scale == 0:
        raise FormatError(f"{path}: bad PFM dimensions or scale")
    ch = 3 if magic == "PF" else 1
    need = w * h * ch * 4
    if len(data) - off < need:
        raise FormatError(f"{path}: truncated raster, expected {need} bytes at offset {off}, "
                          f"found {len(data) - off}")
    dtype = "<f4" if scale < 0 else ">f4"
    img = np.frombuffer(data, dtype=dtype, count=w * h * ch, offset=off).reshape(h, w, ch)
    img = img[::-1].astype(np.float32)
    return img if ch == 3 else img[..., 0]


def write_ppm(path, image):
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("PPM writer expects an H x W x 3 image")
    if img.dtype != np.uint8:
        if img.min() < 0 or img.max() > 255:
            raise ValueError("PPM values must lie in [0, 255]")
        img = img.astype(np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_ppm(path):
    data = Path(path).read_bytes()
    try:
        tokens, off = _header_tokens(data, 4, path)
        magic = tokens[0].decode("ascii")
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except (ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: malformed PPM header ({exc})") from None
    if magic != "P6":
        raise FormatError(f"{path}: only binary P6 is supported, got {magic!r}")
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval} rejected, only 255 is supported")
    need = w * h * 3
    if len(data) - off < need:
        raise FormatError(f"{path}: truncated raster, expected {need} bytes at offset {off}, "
                          f"found {len(data) - off}")
    return np.frombuffer(data, dtype=np.uint8, count=need, offset=off).reshape(h, w, 3).copy()


# --------------------------------------------------------------------------- tables


def write_crf_csv(path, table):
    """CRF curve table ``(n, 4)`` with header ``log_exposure,r,g,b``."""
    table = np.asarray(table, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        fh.write("log_exposure,r,g,b\n")
        np.savetxt(fh, table, fmt="%.10g", delimiter=",")


def read_crf_csv(path):
    with open(path, newline="") as fh:
        header = fh.readline().strip()
        if header != "log_exposure,r,g,b":
            raise FormatError(f"{path}:1: expected header 'log_exposure,r,g,b'")
        return np.loadtxt(fh, delimiter=",", ndmin=2)


def write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else v for v in row])


def read_table(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def read_pose(path):
    """Camera-to-world pose from JSON (a 4x4 list, or ``{"pose"|"matrix": ...}``)
    or whitespace-separated text holding 12 or 16 numbers in row-major order."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        if isinstance(obj, dict):
            obj = obj.get("pose", obj.get("matrix"))
        vals = np.asarray(obj, dtype=np.float64).reshape(-1)
    else:
        try:
            vals = np.array(text.split(), dtype=np.float64)
        except ValueError:
            raise FormatError(f"{path}: pose file holds non-numeric tokens") from None
    if vals.size not in (12, 16):
        raise FormatError(f"{path}: expected 12 or 16 pose values, found {vals.size}")
    pose = np.eye(4)
    pose[: vals.size // 4] = vals.reshape(-1, 4)
    return pose
