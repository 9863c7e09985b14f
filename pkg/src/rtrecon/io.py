"""File formats: grids, masks, kernel sets, compression matrices, PNG export, reports.

Grid files are a text header at ``path`` plus a raw little-endian payload
at ``path.with_suffix('.raw')``::

    rtrecon-grid 1
    kind=kspace            (kspace | coils | image | tensor)
    dtype=complex64        (complex64 | complex128 | float32 | float64)
    dims=12,64,48
    layout=row-major coil-major
    line_axis=1

Older headers spelling ``shape=`` instead of ``dims=`` are still read.
"""
from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import logging
import math
from pathlib import Path

import numpy as np

from .coilcomp import CompressionMatrix
from .errors import (FormatError, GridTypeError, SizeMismatchError, TruncatedPayloadError,
                     UnknownDTypeError)
from .grappa import GrappaConfig, GrappaKernelSet, KernelGeometry
from .grid import CoilImageStack, KSpaceGrid
from .metrics import METRIC_FIELDS, MetricsReport
from .sampling import SamplingMask

log = logging.getLogger(__name__)

GRID_MAGIC = "rtrecon-grid 1"
LAYOUT = "row-major coil-major"
DTYPES = {"complex64": "<c8", "complex128": "<c16", "float32": "<f4", "float64": "<f8"}


def payload_path(path) -> Path:
    path = Path(path)
    if path.suffix == ".raw":
        raise FormatError(f"{path}: header files must not use the .raw suffix")
    return path.with_suffix(".raw")


def atomic_write(path, data: bytes | str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    if isinstance(data, str):
        data = data.encode("utf-8")
    tmp.write_bytes(data)
    tmp.replace(path)


def _parse_header(text: str, magic: str, path) -> dict:
    lines = text.splitlines()
    if not lines or lines[0].strip() != magic:
        raise FormatError(f"{path}: missing '{magic}' header")
    out = {}
    for line in lines[1:]:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        k, sep, v = line.partition("=")
        if not sep:
            raise FormatError(f"{path}: malformed header line {line!r}")
        out[k.strip()] = v.strip()
    return out


def write_grid(path, obj) -> None:
    """Write a KSpaceGrid, CoilImageStack or plain 2-D/3-D array."""
    if isinstance(obj, KSpaceGrid):
        kind, data, line_axis = "kspace", obj.data, obj.line_axis
    elif isinstance(obj, CoilImageStack):
        kind, data, line_axis = "coils", obj.data, obj.line_axis
    else:
        data = np.asarray(obj)
        kind, line_axis = ("image" if data.ndim == 2 else "tensor"), 1
    name = data.dtype.name
    if name not in DTYPES:
        if np.iscomplexobj(data):
            name = "complex128"
        elif np.issubdtype(data.dtype, np.number) or data.dtype == bool:
            name = "float64"
        else:
            raise UnknownDTypeError(f"cannot store dtype {data.dtype}")
    header = (f"{GRID_MAGIC}\nkind={kind}\ndtype={name}\n"
              f"dims={','.join(str(d) for d in data.shape)}\nlayout={LAYOUT}\n"
              f"line_axis={line_axis}\n")
    atomic_write(payload_path(path), np.ascontiguousarray(data, dtype=DTYPES[name]).tobytes())
    atomic_write(path, header)


def read_grid(path):
    path = Path(path)
    try:
        h = _parse_header(path.read_text(encoding="ascii"), GRID_MAGIC, path)
    except UnicodeDecodeError as e:
        raise FormatError(f"{path}: header is not ASCII text") from e
    if "dims" not in h and "shape" in h:
        h["dims"] = h["shape"]
    for key in ("kind", "dtype", "dims"):
        if key not in h:
            raise FormatError(f"{path}: header lacks {key}=")
    if h["dtype"] not in DTYPES:
        raise UnknownDTypeError(f"{path}: unknown dtype {h['dtype']!r}")
    try:
        shape = tuple(int(d) for d in h["dims"].split(","))
    except ValueError as e:
        raise FormatError(f"{path}: bad dims {h['dims']!r}") from e
    if h.get("layout", LAYOUT) != LAYOUT:
        raise FormatError(f"{path}: unsupported layout {h['layout']!r}")
    dt = np.dtype(DTYPES[h["dtype"]])
    raw = payload_path(path).read_bytes()
    expected = int(np.prod(shape)) * dt.itemsize
    if len(raw) < expected:
        raise TruncatedPayloadError(f"{path}: payload has {len(raw)} bytes, dims need {expected}")
    if len(raw) > expected:
        raise SizeMismatchError(f"{path}: payload has {len(raw)} bytes, dims need {expected}")
    data = np.frombuffer(raw, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    kind = h["kind"]
    line_axis = int(h.get("line_axis", 1))
    if kind == "kspace":
        return KSpaceGrid(data, line_axis)
    if kind == "coils":
        return CoilImageStack(data, line_axis)
    if kind in ("image", "tensor"):
        return data
    raise GridTypeError(f"{path}: unknown grid kind {kind!r}")


def read_image(path) -> np.ndarray:
    """Read a real 2-D image; complex or multi-coil grids are rejected."""
    g = read_grid(path)
    if not isinstance(g, np.ndarray) or g.ndim != 2:
        raise GridTypeError(f"{path}: expected a 2-D image grid")
    if np.iscomplexobj(g):
        raise GridTypeError(f"{path}: complex grid cannot be read as an image")
    return g


def read_kspace(path) -> KSpaceGrid:
    g = read_grid(path)
    if not isinstance(g, KSpaceGrid):
        raise GridTypeError(f"{path}: expected a k-space grid")
    return g


# masks: comment header, then one line of 0/1 characters

def write_mask(path, mask: SamplingMask) -> None:
    bits = "".join("1" if b else "0" for b in mask.lines)
    atomic_write(path, f"n_lines={mask.n_lines} seed={mask.seed} profile={mask.profile}\n{bits}\n")


def read_mask(path) -> SamplingMask:
    meta, bits = {}, None
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if "=" in line:
            for item in line.lstrip("#").split():
                k, _, v = item.partition("=")
                meta[k] = v
        elif line:
            if bits is not None or set(line) - {"0", "1"}:
                raise FormatError(f"{path}: mask body must be a single line of 0/1")
            bits = line
    if bits is None:
        raise FormatError(f"{path}: no mask line")
    if "n_lines" in meta and int(meta["n_lines"]) != len(bits):
        raise SizeMismatchError(f"{path}: header says {meta['n_lines']} lines, body has {len(bits)}")
    return SamplingMask(np.array([c == "1" for c in bits]), int(meta.get("seed", 0)),
                        meta.get("profile", "custom"))


# binary bundles: text manifest, END line, little-endian payload

def _bundle(lines: list[str], blobs: list[bytes]) -> bytes:
    return ("\n".join(lines) + "\nEND\n").encode("ascii") + b"".join(blobs)


def _unbundle(raw: bytes, magic: str, path):
    end = raw.find(b"\nEND\n")
    if end < 0:
        raise FormatError(f"{path}: no END line")
    lines = raw[:end].decode("ascii").split("\n")
    if lines[0] != magic:
        raise FormatError(f"{path}: not a '{magic}' file")
    return lines[1:], raw[end + 5:]


def _take(payload: bytes, off: int, nbytes: int, dtype: str, shape, path) -> np.ndarray:
    if off + nbytes > len(payload):
        raise TruncatedPayloadError(f"{path}: record runs past the end of the payload")
    if nbytes != int(np.prod(shape)) * np.dtype(dtype).itemsize:
        raise SizeMismatchError(f"{path}: {nbytes} bytes for shape {shape}")
    return np.frombuffer(payload, dtype, count=int(np.prod(shape)), offset=off).reshape(shape).copy()


KERNEL_MAGIC = "rtrecon-kernels 1"


def write_kernels(path, ks: GrappaKernelSet) -> None:
    c = ks.config
    lines = [KERNEL_MAGIC,
             f"config kx_taps={c.kx_taps} n_source_lines_per_side={c.n_source_lines_per_side} "
             f"lambda_rel={c.lambda_rel!r} max_span={c.max_span} extrapolate={c.extrapolate} "
             f"cascade_max_residual={c.cascade_max_residual!r}",
             f"lambda_rel {ks.lambda_rel!r}", f"acs {ks.acs[0]} {ks.acs[1]}"]
    blobs, off = [], 0
    for geom in sorted(ks.kernels):
        w = np.ascontiguousarray(ks.kernels[geom], dtype="<c16")
        blob = w.tobytes()
        offsets = ",".join(str(o) for o in geom.offsets)
        res = ks.residuals.get(geom, math.nan)
        lines.append(f"kernel {offsets} {geom.kx_taps} {','.join(map(str, w.shape))} "
                     f"{off} {len(blob)} {res!r}")
        blobs.append(blob)
        off += len(blob)
    atomic_write(path, _bundle(lines, blobs))


def read_kernels(path) -> GrappaKernelSet:
    lines, payload = _unbundle(Path(path).read_bytes(), KERNEL_MAGIC, path)
    cfg, lam, acs, kernels, residuals = None, None, None, {}, {}
    for line in lines:
        kind, _, rest = line.partition(" ")
        if kind == "config":
            d = dict(kv.split("=", 1) for kv in rest.split())
            cfg = GrappaConfig(int(d["kx_taps"]), int(d["n_source_lines_per_side"]),
                               float(d["lambda_rel"]),
                               None if d["max_span"] == "None" else int(d["max_span"]),
                               d["extrapolate"] == "True", float(d["cascade_max_residual"]))
        elif kind == "lambda_rel":
            lam = float(rest)
        elif kind == "acs":
            a, b = rest.split()
            acs = (int(a), int(b))
        elif kind == "kernel":
            offsets, taps, shape, off, nbytes, res = rest.split()
            geom = KernelGeometry(tuple(int(o) for o in offsets.split(",")), int(taps))
            shape = tuple(int(s) for s in shape.split(","))
            kernels[geom] = _take(payload, int(off), int(nbytes), "<c16", shape, path)
            residuals[geom] = float(res)
        else:
            raise FormatError(f"{path}: unknown record {kind!r}")
    if cfg is None or lam is None or acs is None:
        raise FormatError(f"{path}: incomplete kernel manifest")
    return GrappaKernelSet(kernels, lam, acs, cfg, residuals)


COMP_MAGIC = "rtrecon-compression 1"


def write_compression(path, m: CompressionMatrix) -> None:
    w = np.ascontiguousarray(m.weights, dtype="<c16")
    sv = " ".join(repr(float(s)) for s in m.singular_values)
    lines = [COMP_MAGIC, f"shape {w.shape[0]} {w.shape[1]}", f"singular_values {sv}"]
    atomic_write(path, _bundle(lines, [w.tobytes()]))


def read_compression(path) -> CompressionMatrix:
    lines, payload = _unbundle(Path(path).read_bytes(), COMP_MAGIC, path)
    rec = dict(line.split(" ", 1) for line in lines)
    try:
        nv, npys = (int(v) for v in rec["shape"].split())
        sv = np.array([float(s) for s in rec["singular_values"].split()])
    except (KeyError, ValueError) as e:
        raise FormatError(f"{path}: bad compression manifest") from e
    w = _take(payload, 0, len(payload), "<c16", (nv, npys), path)
    return CompressionMatrix(w, sv)


# PNG export

def export_png(image: np.ndarray, path, window: tuple[float, float] | None = None) -> None:
    from PIL import Image

    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise GridTypeError("PNG export needs a 2-D real image")
    lo, hi = (float(image.min()), float(image.max())) if window is None else window
    if hi > lo:
        scaled = np.clip((image - lo) / (hi - lo), 0.0, 1.0)
    else:
        scaled = np.full(image.shape, 0.5)
    q = np.round(scaled * 65535).astype(np.uint16)
    buf = _io.BytesIO()
    Image.fromarray(q).save(buf, format="PNG")
    atomic_write(path, buf.getvalue())


def import_png(path, window: tuple[float, float] = (0.0, 1.0)) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        q = np.array(im).astype(float)
    lo, hi = window
    return lo + q / 65535.0 * (hi - lo)


# reports

def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return "nan"
    return f"{v:.6g}"


def _json_value(v):
    if v is None or isinstance(v, str):
        return v
    v = float(v)
    if math.isinf(v) or math.isnan(v):
        return fmt(v)
    return float(f"{v:.6g}")


def aggregate_rows(rows: list[dict], keys: list[str], fields=METRIC_FIELDS) -> list[dict]:
    """Mean and population-std rows per group (group = key columns other than slice/label)."""
    group_keys = [k for k in keys if k not in ("slice", "label")]
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault(tuple(r.get(k) for k in group_keys), []).append(r)
    out = []
    for g, members in groups.items():
        for stat in ("mean", "std"):
            row = dict(zip(group_keys, g))
            for k in keys:
                row.setdefault(k, stat)
            for f in fields:
                vals = np.array([m[f] for m in members if m.get(f) is not None], dtype=float)
                if len(vals) == 0:
                    row[f] = None
                elif stat == "mean":
                    row[f] = float(vals.mean())
                else:
                    row[f] = float(vals.std()) if np.all(np.isfinite(vals)) else math.nan
            out.append(row)
    return out


def emit_rows(rows: list[dict], path, keys: list[str], fields=METRIC_FIELDS) -> tuple[Path, Path]:
    """Write ``<path>.csv`` and ``<path>.json``: data rows then mean/std aggregate rows."""
    path = Path(path)
    csv_path, json_path = path.with_suffix(".csv"), path.with_suffix(".json")
    if not rows:
        log.warning("no report rows; writing header-only files")
    agg = aggregate_rows(rows, keys, fields) if rows else []
    columns = list(keys) + list(fields)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows + agg:
        w.writerow([fmt(r.get(c)) for c in columns])
    atomic_write(csv_path, buf.getvalue())
    doc = {"columns": columns,
           "rows": [{c: _json_value(r.get(c)) for c in columns} for r in rows],
           "aggregate": [{c: _json_value(r.get(c)) for c in columns} for r in agg]}
    atomic_write(json_path, json.dumps(doc, indent=1, sort_keys=False) + "\n")
    return csv_path, json_path


def emit_report(reports: list[MetricsReport], path) -> tuple[Path, Path]:
    rows = [r.as_dict() for r in reports]
    return emit_rows(rows, path, ["label"])


def write_pairs(directory, pairs) -> list[Path]:
    """``pair_NNNNN.input.hdr`` / ``pair_NNNNN.ref.hdr`` plus ``pairs.txt`` (index, source)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written, index = [], []
    for i, p in enumerate(pairs):
        for tag, arr in (("input", p.input), ("ref", p.reference)):
            path = d / f"pair_{i:05d}.{tag}.hdr"
            write_grid(path, np.asarray(arr))
            written += [path, payload_path(path)]
        index.append(f"{i} {p.source}")
    atomic_write(d / "pairs.txt", "\n".join(index) + ("\n" if index else ""))
    return written + [d / "pairs.txt"]


def read_pairs(directory):
    from .dataset import TrainingPair

    d = Path(directory)
    listing = d / "pairs.txt"
    if not listing.exists():
        raise FormatError(f"{d}: no pairs.txt")
    out = []
    for line in listing.read_text().split("\n"):
        if not line.strip():
            continue
        i, src = (int(v) for v in line.split())
        x = read_grid(d / f"pair_{i:05d}.input.hdr")
        y = read_image(d / f"pair_{i:05d}.ref.hdr")
        out.append(TrainingPair(x, y, src))
    return out


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
