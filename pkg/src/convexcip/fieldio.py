"""Text containers for datasets and fields, and 8-bit PGM images.

Container layout (UTF-8, ``\\n`` line ends)::

    #convexcip v1
    # kind = dataset | field | stack
    # <key> = <value>            (metadata, one per line)
    [g0]                          (section marker)
    v,v,v,...                     (one row per time / per line of the array)

Floats are written with ``repr`` so that ``write(read(f))`` reproduces the
file byte for byte.  Dataset columns follow the node orders documented on
:class:`~convexcip.forward.BoundaryDataset`; field rows run along the last
grid axis, rows ordered row-major over the leading axes (x1 slowest).
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from .forward import BoundaryDataset
from .geometry import Domain, SpatialGrid, build_grid

MAGIC = "#convexcip v1"


class ParseError(ValueError):
    def __init__(self, msg, offset=None):
        super().__init__(f"{msg} (byte offset {offset})" if offset is not None else msg)
        self.offset = offset


def _fmt(values) -> str:
    return ",".join(repr(float(v)) for v in np.ravel(values))


def _grid_meta(grid: SpatialGrid) -> dict:
    return {
        "n": str(grid.n),
        "lo": _fmt(grid.domain.lo),
        "hi": _fmt(grid.domain.hi),
        "N": ",".join(str(v) for v in grid.N),
    }


def _write(path, meta: dict, sections: list[tuple[str, np.ndarray]]):
    out = io.StringIO()
    out.write(MAGIC + "\n")
    for key, val in meta.items():
        out.write(f"# {key} = {val}\n")
    for name, arr in sections:
        out.write(f"[{name}]\n")
        arr = np.asarray(arr, dtype=float)
        rows = arr.reshape(-1, arr.shape[-1]) if arr.ndim > 1 else arr.reshape(1, -1)
        for row in rows:
            out.write(_fmt(row) + "\n")
    Path(path).write_bytes(out.getvalue().encode())


def _read(path):
    raw = Path(path).read_bytes()
    try:
        text = raw.decode()
    except UnicodeDecodeError as exc:
        raise ParseError("container is not UTF-8 text", exc.start) from None
    offset = 0
    meta, sections, current = {}, {}, None
    for i, line in enumerate(text.split("\n")):
        start = offset
        offset += len(line.encode()) + 1
        if i == 0:
            if line != MAGIC:
                raise ParseError(f"missing magic line {MAGIC!r}", 0)
            continue
        if not line:
            continue
        if line.startswith("#"):
            if current is not None or "=" not in line:
                raise ParseError(f"malformed header line {line!r}", start)
            key, val = line[1:].split("=", 1)
            meta[key.strip()] = val.strip()
        elif line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = []
        else:
            if current is None:
                raise ParseError("data row before any section marker", start)
            try:
                sections[current].append([float(v) for v in line.split(",")])
            except ValueError:
                raise ParseError(f"non-numeric value in section [{current}]", start) from None
    if "kind" not in meta:
        raise ParseError("header lacks 'kind'", len(MAGIC) + 1)
    return meta, sections


def _grid_from(meta) -> SpatialGrid:
    try:
        n = int(meta["n"])
        lo = tuple(float(v) for v in meta["lo"].split(","))
        hi = tuple(float(v) for v in meta["hi"].split(","))
        N = tuple(int(v) for v in meta["N"].split(","))
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad grid header: {exc}") from None
    return build_grid(Domain(n, lo, hi), N)


def _section(sections, name, shape):
    if name not in sections:
        raise ParseError(f"missing section [{name}]")
    rows = sections[name]
    if any(len(r) != len(rows[0]) for r in rows):
        raise ParseError(f"ragged rows in section [{name}]")
    arr = np.array(rows, dtype=float)
    if arr.size != int(np.prod(shape)):
        raise ParseError(f"section [{name}] has {arr.size} values, expected shape {shape}")
    return arr.reshape(shape)


def write_dataset(path, ds: BoundaryDataset):
    meta = {"kind": "dataset", **_grid_meta(ds.grid), "times": _fmt(ds.times)}
    for key, val in ds.provenance.items():
        meta[f"provenance.{key}"] = str(val)
    _write(path, meta, [("g0", ds.g0), ("g1", ds.g1)])


def read_dataset(path) -> BoundaryDataset:
    meta, sections = _read(path)
    if meta["kind"] != "dataset":
        raise ParseError(f"expected a dataset, found kind={meta['kind']}")
    grid = _grid_from(meta)
    times = np.array([float(v) for v in meta["times"].split(",")])
    nb = int(grid.boundary_mask.sum())
    nf = int(np.prod(grid.N[1:]))
    g0 = _section(sections, "g0", (len(times), nb))
    g1 = _section(sections, "g1", (len(times), nf))
    prov = {k.split(".", 1)[1]: v for k, v in meta.items() if k.startswith("provenance.")}
    return BoundaryDataset(grid, times, g0, g1, prov)


def write_field(path, grid: SpatialGrid, values: np.ndarray, **extra):
    """Write a scalar field (shape ``grid.N``) or a stack (``(m, *grid.N)``)."""
    values = np.asarray(values, dtype=float)
    kind = "field" if values.shape == grid.N else "stack"
    if kind == "stack" and values.shape[1:] != grid.N:
        raise ValueError(f"array shape {values.shape} does not fit grid {grid.N}")
    meta = {"kind": kind, **_grid_meta(grid)}
    if kind == "stack":
        meta["layers"] = str(values.shape[0])
    meta.update({k: str(v) for k, v in extra.items()})
    _write(path, meta, [("values", values)])


def read_field(path):
    """Return ``(grid, values, meta)``."""
    meta, sections = _read(path)
    if meta["kind"] not in ("field", "stack"):
        raise ParseError(f"expected a field, found kind={meta['kind']}")
    grid = _grid_from(meta)
    shape = grid.N if meta["kind"] == "field" else (int(meta["layers"]),) + grid.N
    return grid, _section(sections, "values", shape), meta


# ---------------------------------------------------------------- PGM

def read_pgm(path_or_bytes):
    """Parse a binary (P5) PGM; returns ``(image, maxval)``."""
    data = path_or_bytes if isinstance(path_or_bytes, bytes) else Path(path_or_bytes).read_bytes()
    pos = 0

    def token():
        nonlocal pos
        while pos < len(data):
            if data[pos:pos + 1] == b"#":
                while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif data[pos:pos + 1].isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ParseError("unexpected end of PGM header", start)
        return data[start:pos], start

    magic, _ = token()
    if magic != b"P5":
        raise ParseError(f"not a binary PGM (magic {magic!r})", 0)
    vals = []
    for name in ("width", "height", "maxval"):
        tok, at = token()
        if not tok.isdigit() or int(tok) <= 0:
            raise ParseError(f"bad {name} {tok!r}", at)
        vals.append(int(tok))
    W, H, maxval = vals
    if maxval > 255:
        raise ParseError(f"only 8-bit PGM supported (maxval {maxval})", pos)
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ParseError("missing whitespace after maxval", pos)
    pos += 1
    need = W * H
    if len(data) - pos < need:
        raise ParseError(f"pixel data truncated: {len(data) - pos} of {need} bytes", pos)
    img = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos).reshape(H, W)
    return img.copy(), maxval


def pgm_bytes(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.uint8)
    H, W = img.shape
    return f"P5 {W} {H} 255\n".encode() + img.tobytes()


def field_to_image(values: np.ndarray, lo=None, hi=None) -> np.ndarray:
    """Map a 2-D field linearly from ``[lo, hi]`` (default: its range) to 0..255.

    Rows run from high x2 to low x2.  A degenerate range renders as 128.
    """
    f = np.asarray(values, dtype=float)
    lo = float(np.min(f)) if lo is None else lo
    hi = float(np.max(f)) if hi is None else hi
    if not hi > lo:
        img = np.full(f.shape, 128, dtype=np.uint8)
    else:
        img = np.rint(np.clip((f - lo) / (hi - lo), 0, 1) * 255).astype(np.uint8)
    # array axis 0 is x1 (horizontal); image rows are x2, top row = largest x2
    return img.T[::-1]


def write_pgm(path, values: np.ndarray, lo=None, hi=None):
    Path(path).write_bytes(pgm_bytes(field_to_image(values, lo, hi)))


def render_field(path_prefix, values: np.ndarray) -> list[Path]:
    """Write PGM image(s): one for 2-D, per-slice plus ``_mid`` for 3-D."""
    values = np.asarray(values)
    prefix = Path(path_prefix)
    if values.ndim == 2:
        out = prefix.with_suffix(".pgm")
        write_pgm(out, values)
        return [out]
    lo, hi = float(values.min()), float(values.max())  # one scale for all slices
    paths = []
    for s in range(values.shape[2]):
        p = prefix.parent / f"{prefix.name}_z{s:03d}.pgm"
        write_pgm(p, values[:, :, s], lo, hi)
        paths.append(p)
    mid = prefix.parent / f"{prefix.name}_mid.pgm"
    write_pgm(mid, values[:, :, values.shape[2] // 2], lo, hi)
    paths.append(mid)
    return paths
