import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from nnxva.bsde import init_state, train
from nnxva.exposure import ExposureProfile
from nnxva.io import (CUBE_MAGIC, FormatError, load_checkpoint, load_paths, read_cube, read_exposure_csv,
                      read_params, save_checkpoint, save_paths, write_cube, write_exposure_csv, write_loss_csv,
                      write_params, write_text)
from nnxva.market import TimeGrid

from support import tiny_problems, xccy_model


def test_cube_header_layout(tmp_path):
    a = np.arange(24.0).reshape(2, 3, 4)
    write_cube(tmp_path / "c.bin", a)
    raw = (tmp_path / "c.bin").read_bytes()
    assert raw[:8] == CUBE_MAGIC == b"XVAPATHS"
    assert struct.unpack_from("<I3Q", raw, 8) == (1, 2, 3, 4)
    assert len(raw) == 36 + 8 * 24
    # row-major with the factor index outermost
    assert struct.unpack_from("<d", raw, 36 + 8 * 5)[0] == a[0, 1, 1]


def test_cube_round_trip_and_2d_promotion(tmp_path):
    a = np.random.default_rng(0).normal(size=(5, 7))
    write_cube(tmp_path / "c.bin", a)
    assert np.array_equal(read_cube(tmp_path / "c.bin"), a[None])
    with pytest.raises(FormatError):
        write_cube(tmp_path / "d.bin", np.zeros(3))


def test_cube_rejects_bad_magic_and_truncation(tmp_path):
    write_cube(tmp_path / "c.bin", np.ones((1, 2, 2)))
    raw = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"NOTACUBE" + raw[8:])
    with pytest.raises(FormatError, match="not a cube"):
        read_cube(tmp_path / "bad.bin")
    (tmp_path / "short.bin").write_bytes(raw[:-8])
    with pytest.raises(FormatError, match="truncated"):
        read_cube(tmp_path / "short.bin")


def test_params_round_trip_and_truncation(tmp_path):
    p = np.random.default_rng(1).normal(size=166)
    write_params(tmp_path / "n.bin", (1, 11, 11, 1), p)
    w, q = read_params(tmp_path / "n.bin")
    assert w == (1, 11, 11, 1) and np.array_equal(p, q)
    raw = (tmp_path / "n.bin").read_bytes()
    (tmp_path / "short.bin").write_bytes(raw[:-1])
    with pytest.raises(FormatError):
        read_params(tmp_path / "short.bin")
    write_cube(tmp_path / "cube.bin", np.ones((1, 1, 1)))
    with pytest.raises(FormatError, match="not a parameter"):
        read_params(tmp_path / "cube.bin")


def test_paths_round_trip(tmp_path):
    grid = TimeGrid.build(0.5, 12)
    paths = xccy_model().simulate(grid, 16, 3)
    save_paths(tmp_path, paths, "abc")
    back, h = load_paths(tmp_path)
    assert h == "abc" and back.names == paths.names
    for name in ("times", "factors", "increments", "diffusion", "numeraire"):
        assert np.array_equal(getattr(back, name), getattr(paths, name))


def test_checkpoint_round_trip_and_hash_check(tmp_path):
    fwd, _, spec = tiny_problems(0)
    st0, _ = train(fwd, init_state(fwd, spec, 0), 3)
    save_checkpoint(tmp_path, st0, "h1")
    st1 = load_checkpoint(tmp_path, "h1")
    assert np.array_equal(st1.flat(), st0.flat())
    assert np.array_equal(st1.adam.m, st0.adam.m) and st1.adam.step == st0.adam.step
    with pytest.raises(FormatError, match="config hash"):
        load_checkpoint(tmp_path, "h2")


def test_csv_headers_and_hash(tmp_path):
    write_loss_csv(tmp_path / "loss.csv", [1.0, 0.5], "h")
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines == ["# config_hash=h", "step,loss", "0,1.0", "1,0.5"]
    write_text(tmp_path / "t.txt", "v0 = 1\n", "h")
    assert (tmp_path / "t.txt").read_text() == "# config_hash=h\nv0 = 1\n"


def test_exposure_csv_round_trip(tmp_path):
    prof = ExposureProfile(np.array([0.0, 0.5, 0.5]), np.array(["post", "pre", "post"]), np.array([1.0, 2.0, 0.5]),
                           np.array([0.1, 0.2, 0.05]), np.array([0.0, -1.0, -0.25]), np.zeros(3), True, "amc")
    write_exposure_csv(tmp_path / "e.csv", prof, "h")
    text = (tmp_path / "e.csv").read_text().splitlines()
    assert text[2] == "date_years,epe,epe_se,ene,ene_se,side,method"
    back = read_exposure_csv(tmp_path / "e.csv")
    assert back.method == "amc" and back.discounted
    assert back.side.tolist() == prof.side.tolist()
    for name in ("times", "epe", "epe_se", "ene", "ene_se"):
        assert np.array_equal(getattr(back, name), getattr(prof, name))


@settings(max_examples=25, deadline=None)
@given(a=arrays(float, st.tuples(st.integers(1, 3), st.integers(1, 4), st.integers(1, 5)),
                elements=st.floats(allow_nan=False, width=64)))
def test_cube_round_trip_property(tmp_path_factory, a):
    path = tmp_path_factory.mktemp("cube") / "c.bin"
    write_cube(path, a)
    assert np.array_equal(read_cube(path), a)
