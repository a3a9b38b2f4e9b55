"""Event file formats, dataset directories and checkpoints.

``evt1`` layout (little-endian)::

    b"EVT1"  u32 width  u32 height  u32 n_polarities  u32 reserved=0  u64 count
    count x (u32 t_us, u16 x, u16 y, i8 p, u8 pad=0)

The header is 28 bytes and each record 10 bytes.  The format carries no
duration; readers take it from the caller or default to ``last t + 1``.
"""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError, ParseError
from .events import EventStream

EVT1_MAGIC = b"EVT1"
EVT1_HEADER = struct.Struct("<4sIIIIQ")
EVT1_RECORD = np.dtype([("t", "<u4"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "u1")])
CSV_HEADER = ["t_us", "x", "y", "p"]
FORMATS = ("evt1", "csv")


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "evt1"
    if fmt not in FORMATS:
        raise DataError(f"unknown event format {fmt!r}; choose evt1 or csv")
    return fmt


def write_events(stream: EventStream, path, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = _infer_format(path, fmt)
    stream.validate()
    if fmt == "evt1":
        if stream.width > 0xFFFF + 1 or stream.height > 0xFFFF + 1:
            raise DataError("evt1 coordinates are limited to 16 bits")
        if len(stream) and int(stream.t.max()) > 0xFFFFFFFF:
            raise DataError("evt1 timestamps are limited to 32 bits")
        rec = np.zeros(len(stream), dtype=EVT1_RECORD)
        rec["t"], rec["x"], rec["y"], rec["p"] = stream.t, stream.x, stream.y, stream.p
        head = EVT1_HEADER.pack(EVT1_MAGIC, stream.width, stream.height, stream.n_polarities, 0, len(stream))
        path.write_bytes(head + rec.tobytes())
        return
    with path.open("w", newline="") as fh:
        fh.write(f"# width={stream.width} height={stream.height} "
                 f"n_polarities={stream.n_polarities} duration_us={stream.duration_us}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerows(zip(stream.t.tolist(), stream.x.tolist(), stream.y.tolist(), stream.p.tolist()))


def _finish(width, height, n_pol, duration, t, x, y, p, where) -> EventStream:
    if duration is None:
        duration = int(t[-1]) + 1 if len(t) else 0
    stream = EventStream(width, height, n_pol, duration, t, x, y, p)
    try:
        stream.validate()
    except DataError as exc:
        msg = str(exc)
        idx = int(msg.rsplit(" ", 1)[-1]) if msg.rsplit(" ", 1)[-1].isdigit() else None
        raise ParseError(msg, None if idx is None else where(idx)) from None
    return stream


def read_events(path, fmt: str | None = None, *, duration_us: int | None = None,
                width: int | None = None, height: int | None = None,
                n_polarities: int | None = None) -> EventStream:
    """Read an event file.  CSV metadata may come from its ``#`` line or from kwargs."""
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "evt1":
        return _read_evt1(path, duration_us)
    return _read_csv(path, duration_us, width, height, n_polarities)


def _read_evt1(path: Path, duration_us):
    data = path.read_bytes()
    if len(data) < EVT1_HEADER.size:
        raise ParseError("truncated evt1 header", len(data))
    magic, width, height, n_pol, reserved, count = EVT1_HEADER.unpack_from(data)
    if magic != EVT1_MAGIC:
        raise ParseError(f"bad magic {magic!r}", 0)
    if reserved != 0:
        raise ParseError("reserved header field must be 0", 16)
    body = len(data) - EVT1_HEADER.size
    need = count * EVT1_RECORD.itemsize
    if body < need:
        raise ParseError(f"truncated: header declares {count} events, file holds "
                         f"{body // EVT1_RECORD.itemsize}", len(data))
    if body > need:
        raise ParseError("trailing bytes after declared events", EVT1_HEADER.size + need)
    rec = np.frombuffer(data, dtype=EVT1_RECORD, count=count, offset=EVT1_HEADER.size)
    if np.any(rec["pad"] != 0):
        i = int(np.argmax(rec["pad"] != 0))
        raise ParseError("nonzero pad byte", EVT1_HEADER.size + i * EVT1_RECORD.itemsize + 9)

    def where(i):
        return EVT1_HEADER.size + i * EVT1_RECORD.itemsize

    return _finish(width, height, n_pol, duration_us, rec["t"].astype(np.int64), rec["x"].astype(np.int64),
                   rec["y"].astype(np.int64), rec["p"].astype(np.int8), where)


def _read_csv(path: Path, duration_us, width, height, n_pol):
    meta: dict[str, int] = {}
    rows = []
    header_line = None
    with path.open(newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for part in line[1:].split():
                    key, _, val = part.partition("=")
                    try:
                        meta[key] = int(val)
                    except ValueError:
                        raise ParseError(f"bad metadata entry {part!r}", lineno) from None
                continue
            if header_line is None:
                if [c.strip() for c in line.split(",")] != CSV_HEADER:
                    raise ParseError(f"expected header {','.join(CSV_HEADER)}", lineno)
                header_line = lineno
                continue
            fields = line.split(",")
            if len(fields) != 4:
                raise ParseError("expected 4 fields", lineno)
            try:
                t, x, y, p = (int(f) for f in fields)
            except ValueError:
                raise ParseError("non-integer field", lineno) from None
            if p not in (1, -1):
                raise ParseError(f"polarity must be +1 or -1, got {p}", lineno)
            rows.append((t, x, y, p, lineno))
    if header_line is None:
        raise ParseError("missing header line", 1)
    width = width if width is not None else meta.get("width")
    height = height if height is not None else meta.get("height")
    n_pol = n_pol if n_pol is not None else meta.get("n_polarities", 2)
    if duration_us is None:
        duration_us = meta.get("duration_us")
    arr = np.array([r[:4] for r in rows], dtype=np.int64).reshape(-1, 4)
    if width is None:
        width = int(arr[:, 1].max()) + 1 if len(arr) else 1
    if height is None:
        height = int(arr[:, 2].max()) + 1 if len(arr) else 1
    lines = [r[4] for r in rows]
    return _finish(width, height, n_pol, duration_us, arr[:, 0], arr[:, 1], arr[:, 2],
                   arr[:, 3].astype(np.int8), lambda i: lines[i])


# ---------------------------------------------------------------------------
# dataset directories: manifest.csv + one evt1 file per sample

MANIFEST = "manifest.csv"
MANIFEST_FIELDS = ["file", "label", "split", "duration_us", "signal_windows"]


def _fmt_windows(windows) -> str:
    return ";".join(f"{a}:{b}" for a, b in windows)


def _parse_windows(text: str):
    if not text:
        return []
    return [tuple(int(v) for v in part.split(":")) for part in text.split(";")]


def write_dataset(out_dir, samples, splits) -> Path:
    """``samples`` holds ``(stream, label, signal_windows)``; ``splits`` one name per sample."""
    out = Path(out_dir)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    rows = []
    for i, ((stream, label, windows), split_name) in enumerate(zip(samples, splits)):
        rel = f"samples/{i:05d}.evt1"
        write_events(stream, out / rel, "evt1")
        rows.append({"file": rel, "label": int(label), "split": split_name,
                     "duration_us": stream.duration_us, "signal_windows": _fmt_windows(windows)})
    with (out / MANIFEST).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return out


def read_dataset(data_dir, split: str | None = None, with_windows: bool = False):
    root = Path(data_dir)
    path = root / MANIFEST
    if not path.exists():
        raise DataError(f"no {MANIFEST} in {root}")
    out = []
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            if split is not None and row["split"] != split:
                continue
            stream = read_events(root / row["file"], "evt1", duration_us=int(row["duration_us"]))
            item = (stream, int(row["label"]))
            if with_windows:
                item = item + (_parse_windows(row.get("signal_windows", "")),)
            out.append(item)
    return out


# ---------------------------------------------------------------------------
# checkpoints: magic, u32 version, u64 header length, JSON header, raw arrays

CKPT_MAGIC = b"TASNNCK\x00"
CKPT_VERSION = 1


def save_checkpoint(net, path, history=None, extra=None) -> None:
    from .config import spec_to_dict

    arrays = [(name, value) for name, value, _ in net.parameters()] + list(net.buffers())
    entries, blobs, offset = [], [], 0
    for name, value in arrays:
        raw = np.ascontiguousarray(value, dtype=value.dtype.newbyteorder("<")).tobytes()
        entries.append({"name": name, "shape": list(value.shape), "dtype": value.dtype.str.lstrip("<>=|"),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {"version": CKPT_VERSION, "spec": spec_to_dict(net.spec), "arrays": entries,
              "history": history or [], "extra": extra or {}}
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    Path(path).write_bytes(CKPT_MAGIC + struct.pack("<IQ", CKPT_VERSION, len(head)) + head + b"".join(blobs))


def load_checkpoint(path):
    """Return ``(net, history, extra)``."""
    from .config import spec_from_dict
    from .network import build

    data = Path(path).read_bytes()
    if not data.startswith(CKPT_MAGIC):
        raise ParseError("not a checkpoint file", 0)
    version, hlen = struct.unpack_from("<IQ", data, len(CKPT_MAGIC))
    if version != CKPT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", len(CKPT_MAGIC))
    start = len(CKPT_MAGIC) + 12
    header = json.loads(data[start:start + hlen])
    base = start + hlen
    net = build(spec_from_dict(header["spec"]))
    targets = {name: value for name, value, _ in net.parameters()}
    targets.update(dict(net.buffers()))
    for e in header["arrays"]:
        if e["name"] not in targets:
            raise ParseError(f"checkpoint array {e['name']} not present in network", base + e["offset"])
        buf = np.frombuffer(data, dtype=np.dtype("<" + e["dtype"]) if e["dtype"][0] == "f" else e["dtype"],
                            count=int(np.prod(e["shape"])), offset=base + e["offset"])
        targets[e["name"]][...] = buf.reshape(e["shape"])
    return net, header["history"], header["extra"]
