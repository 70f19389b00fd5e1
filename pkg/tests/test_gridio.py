import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from fuzzydiff import Grid, RngStream, ValidationError, randn_grid, read_grid, write_grid
from fuzzydiff.gridio import write_pgm, write_ppm, write_preview


def test_roundtrip_bit_exact(tmp_path):
    g = randn_grid((5, 7, 3), RngStream(1, 0))
    path = tmp_path / "g.fdg"
    write_grid(path, g)
    assert read_grid(path) == g


@given(
    arrays(
        np.float64,
        array_shapes(min_dims=3, max_dims=3, min_side=1, max_side=5),
        elements=st.floats(-1e12, 1e12),
    )
)
@settings(max_examples=25, deadline=None)
def test_roundtrip_property(tmp_path_factory, vals):
    path = tmp_path_factory.mktemp("io") / "g.fdg"
    g = Grid(vals)
    write_grid(path, g)
    assert read_grid(path) == g


def test_header_layout(tmp_path):
    g = Grid(np.array([[[1.5]]]))
    path = tmp_path / "one.fdg"
    write_grid(path, g)
    blob = path.read_bytes()
    assert blob[:4] == b"FDG1"
    assert blob[4:16] == (1).to_bytes(4, "little") * 3
    assert np.frombuffer(blob[16:], dtype="<f8")[0] == 1.5
    assert len(blob) == 24


def test_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.fdg"
    path.write_bytes(b"NOPE" + bytes(12))
    with pytest.raises(ValidationError, match="magic"):
        read_grid(path)


def test_rejects_truncated_payload(tmp_path):
    g = randn_grid((2, 2, 1), RngStream(2, 0))
    path = tmp_path / "t.fdg"
    write_grid(path, g)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValidationError, match="size"):
        read_grid(path)


def test_rejects_non_finite_payload(tmp_path):
    path = tmp_path / "nan.fdg"
    blob = b"FDG1" + (1).to_bytes(4, "little") * 3 + np.array([np.nan]).tobytes()
    path.write_bytes(blob)
    with pytest.raises(ValidationError):
        read_grid(path)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_grid(tmp_path / "absent.fdg")


def test_pgm_quantization(tmp_path):
    g = Grid(np.array([0.0, 0.5, 1.0, -0.3, 1.7, 0.25]).reshape(2, 3, 1))
    path = tmp_path / "p.pgm"
    write_pgm(path, g)
    blob = path.read_bytes()
    header, pixels = blob.split(b"\n255\n", 1)
    assert header == b"P5\n3 2"
    assert list(pixels) == [0, 128, 255, 0, 255, 64]


def test_pgm_uses_channel_zero(tmp_path):
    vals = np.zeros((1, 2, 3))
    vals[:, :, 0] = [0.0, 1.0]
    vals[:, :, 1] = 0.5
    path = tmp_path / "c0.pgm"
    write_pgm(path, Grid(vals))
    assert path.read_bytes().endswith(bytes([0, 255]))


def test_ppm_requires_three_channels(tmp_path):
    with pytest.raises(ValidationError):
        write_ppm(tmp_path / "x.ppm", Grid(np.zeros((2, 2, 1))))
    write_ppm(tmp_path / "ok.ppm", Grid(np.zeros((2, 2, 3))))
    blob = (tmp_path / "ok.ppm").read_bytes()
    assert blob.startswith(b"P6\n2 2\n255\n")
    assert len(blob) == len(b"P6\n2 2\n255\n") + 12


def test_preview_picks_format(tmp_path):
    mono = write_preview(tmp_path / "a", Grid(np.zeros((2, 2, 1))))
    rgb = write_preview(tmp_path / "b", Grid(np.zeros((2, 2, 3))))
    assert mono.suffix == ".pgm"
    assert rgb.suffix == ".ppm"
    assert mono.exists() and rgb.exists()
