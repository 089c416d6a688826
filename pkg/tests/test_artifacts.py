import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from strattack.artifacts import group_heatmap, read_delta, read_pgm, write_delta, write_pgm
from strattack.errors import DimensionError, FormatError
from strattack.grouping import Dims, make_groups


def test_delta_round_trip(tmp_path):
    d = np.random.default_rng(0).normal(size=(3, 5, 2))
    write_delta(tmp_path / "d.f64", d)
    assert np.array_equal(read_delta(tmp_path / "d.f64"), d)
    assert (tmp_path / "d.json").exists()
    assert (tmp_path / "d.f64").stat().st_size == 8 * d.size


def test_delta_size_mismatch(tmp_path):
    write_delta(tmp_path / "d.f64", np.zeros((2, 2, 1)))
    with open(tmp_path / "d.f64", "ab") as f:
        f.write(bytes(8))
    with pytest.raises(FormatError):
        read_delta(tmp_path / "d.f64")


def test_delta_bad_sidecar(tmp_path):
    write_delta(tmp_path / "d.f64", np.zeros((2, 2, 1)))
    (tmp_path / "d.json").write_text('{"width": 2}')
    with pytest.raises(FormatError):
        read_delta(tmp_path / "d.f64")


@settings(max_examples=25, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6))))
def test_pgm_round_trip(tmp_path_factory, img):
    path = tmp_path_factory.mktemp("pgm") / "x.pgm"
    write_pgm(path, img)
    assert np.array_equal(read_pgm(path), img)


def test_pgm_header_and_errors(tmp_path):
    write_pgm(tmp_path / "a.pgm", np.zeros((2, 3), np.uint8))
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n3 2\n255\n")
    (tmp_path / "b.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(FormatError):
        read_pgm(tmp_path / "b.pgm")
    (tmp_path / "c.pgm").write_bytes(b"P5\n2 2\n255\n\0")
    with pytest.raises(FormatError):
        read_pgm(tmp_path / "c.pgm")


def test_pgm_comment_skipped(tmp_path):
    (tmp_path / "a.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n\x01\x02")
    assert read_pgm(tmp_path / "a.pgm").tolist() == [[1, 2]]


def test_heatmap_zero_is_black():
    spec = make_groups(Dims(4, 4), 2, 2)
    assert np.all(group_heatmap(np.zeros((4, 4, 1)), spec) == 0)


def test_heatmap_single_group_bright_cell():
    spec = make_groups(Dims(6, 4), 2, 2)
    d = np.zeros((4, 6, 1))
    d[2:4, 4:6] = 0.3  # window p=2, q=1
    heat = group_heatmap(d, spec)
    assert heat.shape == (2, 3)
    assert heat[1, 2] == 255 and heat.sum() == 255


def test_heatmap_mnist_shape_and_scaling():
    spec = make_groups(Dims(28, 28), 2, 2)
    d = np.zeros((28, 28, 1))
    d[0:2, 0:2] = 1.0
    d[0:2, 2:4] = 0.5
    heat = group_heatmap(d, spec)
    assert heat.shape == (14, 14)
    assert heat[0, 0] == 255 and heat[0, 1] == 128
    with pytest.raises(DimensionError):
        group_heatmap(np.zeros((27, 28, 1)), spec)
