import numpy as np
import pytest

from ymflow import bundle as bd
from ymflow import flow as fl
from ymflow.manifold import build_torus
from ymflow.snapshot import (SnapshotError, emit_snapshot, form_layout, inspect_snapshot,
                             parse_header, read_snapshot)


def test_identity_metric_round_trips_bitwise(tmp_path):
    grid = (8, 8)
    H = np.broadcast_to(np.eye(2, dtype=complex), grid + (2, 2)).copy()
    path = tmp_path / "m.ymf"
    emit_snapshot(str(path), "metric", "metric", H, 1, grid, 2, 0.0)
    snap = read_snapshot(str(path))
    assert snap.data.tobytes() == H.tobytes()
    assert (snap.field, snap.kind, snap.n, snap.grid, snap.rank, snap.t) == ("metric", "metric", 1, grid, 2, 0.0)


def test_random_field_round_trips_to_full_precision(tmp_path):
    rng = np.random.default_rng(3)
    f = rng.normal(size=(8, 10)) * 1e-300 + rng.normal(size=(8, 10)) * 1j
    path = tmp_path / "f.ymf"
    emit_snapshot(str(path), "f", "scalar", f, 1, (8, 10), 1, 0.1 + 0.2, step=7)
    snap = read_snapshot(str(path))
    assert np.array_equal(snap.data, f) and snap.t == 0.1 + 0.2 and snap.extra == {"step": "7"}


def test_sigma_header(tmp_path):
    path = tmp_path / "sigma.ymf"
    emit_snapshot(str(path), "sigma", "scalar", np.ones((8, 8)), 1, (8, 8), 2, 0.0)
    head = parse_header(path.read_bytes().split(b"\n", 1)[0].decode())
    assert head["field"] == "sigma" and head["kind"] == "scalar"
    # payload is little-endian complex128, interleaved (re, im)
    body = path.read_bytes().split(b"\n", 1)[1]
    assert np.frombuffer(body, "<f8")[:2].tolist() == [1.0, 0.0]


def test_curvature_snapshot_shape_rank2_n2(tmp_path):
    T = build_torus(2, [1j, 1j], [8, 8, 8, 8])
    b = bd.direct_sum(bd.make_line_bundle(T, [1, 0]), bd.make_line_bundle(T, [0, 1]))
    s = fl.initial_state(b)
    path = tmp_path / "F.ymf"
    emit_snapshot(str(path), "curvature", "form", form_layout(s.F), 2, T.grid, 2, s.t)
    snap = read_snapshot(str(path))
    assert snap.data.shape == (8, 8, 8, 8, 2, 2, 4) and snap.components == 4
    assert "components=4" in inspect_snapshot(str(path))
    # component c = j * n + k holds F[j, k]
    assert np.array_equal(snap.data[..., 1], s.F[0, 1])


def test_emit_rejects_bad_input(tmp_path):
    p = str(tmp_path / "x.ymf")
    with pytest.raises(SnapshotError):
        emit_snapshot(p, "x", "scalar", np.ones((8, 9)), 1, (8, 8), 1, 0.0)
    with pytest.raises(SnapshotError):
        emit_snapshot(p, "x", "scalar", np.full((8, 8), np.nan), 1, (8, 8), 1, 0.0)
    with pytest.raises(SnapshotError):
        emit_snapshot(p, "x", "tensor", np.ones((8, 8)), 1, (8, 8), 1, 0.0)
    with pytest.raises(SnapshotError):
        emit_snapshot(p, "x", "scalar", np.ones((8, 8)), 1, (8, 8), 1, 0.0, note="two words")
    assert not (tmp_path / "x.ymf").exists()
    with pytest.raises(OSError):
        emit_snapshot(str(tmp_path / "missing" / "x.ymf"), "x", "scalar", np.ones((8, 8)), 1, (8, 8), 1, 0.0)


def test_read_rejects_corrupt_files(tmp_path):
    p = tmp_path / "x.ymf"
    emit_snapshot(str(p), "x", "scalar", np.ones((8, 8)), 1, (8, 8), 1, 0.0)
    raw = p.read_bytes()
    p.write_bytes(raw[:-8])
    with pytest.raises(SnapshotError, match="payload"):
        read_snapshot(str(p))
    p.write_bytes(b"YMF2 " + raw[5:])
    with pytest.raises(SnapshotError):
        read_snapshot(str(p))
    p.write_bytes(raw.replace(b"rank=1 ", b""))
    with pytest.raises(SnapshotError, match="rank"):
        read_snapshot(str(p))
