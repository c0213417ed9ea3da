"""YMF1 snapshot files: one text header line, then little-endian complex128 data.

Header: ``YMF1 field=<name> kind=<scalar|metric|form|endo> n=<n> grid=<a,b,...>
rank=<r> t=<real> components=<c>`` plus any extra ``key=value`` metadata.  Data
is row-major with real and imaginary parts interleaved; real fields are stored
with zero imaginary part so every file has the same layout.  Shapes by kind:

    scalar        (*grid,)
    metric, endo  (*grid, r, r)
    form          (*grid, r, r, components)   components = n*n, index j*n + k
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

MAGIC = "YMF1"
KINDS = ("scalar", "metric", "form", "endo")
_DTYPE = np.dtype("<c16")
_RESERVED = ("field", "kind", "n", "grid", "rank", "t", "components")


class SnapshotError(ValueError):
    pass


@dataclass
class Snapshot:
    field: str
    kind: str
    n: int
    grid: tuple[int, ...]
    rank: int
    t: float
    data: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def components(self) -> int:
        return self.data.shape[-1] if self.kind == "form" else 1


def expected_shape(kind: str, n: int, grid, rank: int, components: int = 1) -> tuple[int, ...]:
    grid = tuple(grid)
    if kind == "scalar":
        return grid
    if kind in ("metric", "endo"):
        return grid + (rank, rank)
    if kind == "form":
        return grid + (rank, rank, components)
    raise SnapshotError(f"unknown kind {kind!r}")


def form_layout(F: np.ndarray) -> np.ndarray:
    """``(n, n, *grid, r, r)`` curvature components to the snapshot layout ``(*grid, r, r, n*n)``."""
    n = F.shape[0]
    flat = F.reshape((n * n,) + F.shape[2:])
    return np.moveaxis(flat, 0, -1)


def header_line(snap: Snapshot) -> str:
    parts = [MAGIC, f"field={snap.field}", f"kind={snap.kind}", f"n={snap.n}",
             "grid=" + ",".join(str(g) for g in snap.grid), f"rank={snap.rank}",
             f"t={float(snap.t)!r}", f"components={snap.components}"]
    for k, v in snap.extra.items():
        if k in _RESERVED or any(c.isspace() for c in f"{k}{v}") or "=" in k:
            raise SnapshotError(f"bad metadata entry {k}={v}")
        parts.append(f"{k}={v}")
    return " ".join(parts)


def emit_snapshot(path: str, field: str, kind: str, values: np.ndarray, n: int,
                  grid, rank: int, t: float, **extra) -> Snapshot:
    """Write one field; raises :class:`SnapshotError` on bad shapes or non-finite data."""
    if kind not in KINDS:
        raise SnapshotError(f"unknown kind {kind!r}")
    data = np.asarray(values)
    comps = data.shape[-1] if kind == "form" and data.ndim else 1
    want = expected_shape(kind, n, grid, rank, comps)
    if data.shape != want:
        raise SnapshotError(f"{field}: shape {data.shape} does not match kind {kind} {want}")
    if not np.all(np.isfinite(data)):
        raise SnapshotError(f"{field}: field has non-finite values")
    snap = Snapshot(field, kind, int(n), tuple(int(g) for g in grid), int(rank), float(t),
                    data, {k: str(v) for k, v in extra.items()})
    payload = np.ascontiguousarray(data, dtype=_DTYPE).tobytes()
    tmp = path + ".part"
    with open(tmp, "wb") as fh:
        fh.write((header_line(snap) + "\n").encode("ascii"))
        fh.write(payload)
    os.replace(tmp, path)
    return snap


def parse_header(line: str) -> dict:
    tokens = line.split()
    if not tokens or tokens[0] != MAGIC:
        raise SnapshotError("not a YMF1 file")
    out = {}
    for tok in tokens[1:]:
        if "=" not in tok:
            raise SnapshotError(f"bad header token {tok!r}")
        k, v = tok.split("=", 1)
        out[k] = v
    missing = [k for k in _RESERVED if k not in out]
    if missing:
        raise SnapshotError(f"header lacks {', '.join(missing)}")
    return out


def read_snapshot(path: str) -> Snapshot:
    with open(path, "rb") as fh:
        raw = fh.read()
    nl = raw.find(b"\n")
    if nl < 0:
        raise SnapshotError("missing header line")
    try:
        head = parse_header(raw[:nl].decode("ascii"))
        kind = head["kind"]
        n, rank, comps = int(head["n"]), int(head["rank"]), int(head["components"])
        grid = tuple(int(g) for g in head["grid"].split(","))
        t = float(head["t"])
    except (UnicodeDecodeError, ValueError) as exc:
        raise SnapshotError(f"bad header: {exc}") from exc
    shape = expected_shape(kind, n, grid, rank, comps)
    body = raw[nl + 1:]
    count = int(np.prod(shape, dtype=np.int64))
    if len(body) != count * _DTYPE.itemsize:
        raise SnapshotError(f"payload has {len(body)} bytes, header implies {count * _DTYPE.itemsize}")
    data = np.frombuffer(body, dtype=_DTYPE).reshape(shape).astype(complex)
    extra = {k: v for k, v in head.items() if k not in _RESERVED}
    return Snapshot(head["field"], kind, n, grid, rank, t, data, extra)


def summarize(snap: Snapshot) -> dict:
    d = snap.data
    re = d.real
    return {"min_re": float(np.min(re)), "max_re": float(np.max(re)), "mean_re": float(np.mean(re)),
            "max_abs": float(np.max(np.abs(d))), "max_abs_im": float(np.max(np.abs(d.imag))),
            "rms": float(np.sqrt(np.mean(np.abs(d) ** 2)))}


def inspect_snapshot(path: str) -> str:
    """Header line and summary statistics as printable text."""
    snap = read_snapshot(path)
    lines = [header_line(snap), f"shape: {snap.data.shape}"]
    for k, v in summarize(snap).items():
        lines.append(f"{k}: {v:.17g}")
    return "\n".join(lines)
