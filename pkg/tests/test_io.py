import struct

import numpy as np
import pytest

from coldpop import io
from coldpop.errors import DataError


def test_emb_layout(tmp_path):
    p = io.write_emb(tmp_path / "m.emb", np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
    raw = p.read_bytes()
    assert raw[:4] == b"EMB1"
    assert struct.unpack("<II", raw[4:12]) == (2, 3)
    assert np.frombuffer(raw[12:], dtype="<f4").tolist() == [1, 2, 3, 4, 5, 6]


@pytest.mark.parametrize("shape", [(0, 0), (0, 5), (5, 0), (1, 1), (1, 7), (9, 3)])
def test_emb_round_trip_shapes(tmp_path, rng, shape):
    x = rng.normal(size=shape).astype(np.float32)
    back = io.read_emb(io.write_emb(tmp_path / "m.emb", x))
    assert back.shape == shape and back.tobytes() == x.tobytes()


def test_emb_bad_magic(tmp_path):
    (tmp_path / "m.emb").write_bytes(b"EMB2" + struct.pack("<II", 0, 0))
    with pytest.raises(DataError, match="magic"):
        io.read_emb(tmp_path / "m.emb")


def test_emb_truncated(tmp_path):
    p = io.write_emb(tmp_path / "m.emb", np.ones((2, 2)))
    p.write_bytes(p.read_bytes()[:-2])
    with pytest.raises(DataError):
        io.read_emb(p)
    p.write_bytes(b"EMB")
    with pytest.raises(DataError):
        io.read_emb(p)


def test_emb_refuses_non_finite(tmp_path):
    with pytest.raises(DataError):
        io.write_emb(tmp_path / "m.emb", np.array([[np.nan]]))


def test_csv_fallback(tmp_path, rng):
    x = rng.normal(size=(4, 3))
    p = io.write_matrix_csv(tmp_path / "m.csv", x)
    assert p.read_text().splitlines()[0] == "dim0,dim1,dim2"
    np.testing.assert_array_equal(io.read_matrix(p), x)
    q = io.write_emb(tmp_path / "m.emb", x)
    np.testing.assert_allclose(io.read_matrix(q), x, rtol=1e-6)


def test_csv_bad_header(tmp_path):
    (tmp_path / "m.csv").write_text("a,b\n1,2\n")
    with pytest.raises(DataError):
        io.read_matrix_csv(tmp_path / "m.csv")


def test_sidecar_and_json(tmp_path):
    target = tmp_path / "fig.csv"
    side = io.write_sidecar(target, {"seed": 3, "values": np.arange(2), "x": np.float32(0.5)})
    assert side == io.sidecar_path(target) and side.name == "fig.csv.json"
    text = side.read_text()
    assert text.endswith("\n") and '"values": [\n' in text and '"seed": 3' in text
