import numpy as np
import pytest

from gmlab.data import DatasetSpec, checkerboard, generate, load_csv, two_moons
from gmlab.errors import ConfigError, ValidationError
from gmlab.rng import stream

COMPONENTS = [{"weight": 0.3, "mean": [-1.0], "variance": 0.2}, {"weight": 0.7, "mean": [2.0], "variance": 0.5}]


class TestDatasetSpec:
    @pytest.mark.parametrize("kw", [{"kind": "spiral"}, {"kind": "checkerboard", "n": 0},
                                    {"kind": "checkerboard", "params": {"noise": 1}},
                                    {"kind": "gaussian_mixture"}, {"kind": "csv_file"}])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            DatasetSpec(**kw)

    def test_from_config(self):
        spec = DatasetSpec.from_config({"kind": "two_moons", "n": 10, "seed": 3, "noise": 0.1})
        assert (spec.n, spec.seed, spec.params) == (10, 3, {"noise": 0.1})
        with pytest.raises(ConfigError):
            DatasetSpec.from_config({"n": 3})

    def test_mixture(self):
        assert DatasetSpec("checkerboard").mixture() is None
        gm = DatasetSpec("gaussian_mixture", params={"components": COMPONENTS}).mixture()
        assert gm.n_components == 2


def test_checkerboard_support():
    pts = checkerboard(20000, stream(0, "data"))
    assert np.all(np.abs(pts) <= 2)
    cells = np.floor(pts + 2).astype(int)
    assert np.all((cells.sum(axis=1) % 2) == 0)
    counts = np.bincount(cells[:, 0] * 4 + cells[:, 1], minlength=16)
    assert np.count_nonzero(counts) == 8
    assert counts[counts > 0].min() > 0.8 * 20000 / 8


def test_two_moons_arcs():
    pts = two_moons(5000, stream(0, "data"))
    upper = np.isclose(np.hypot(pts[:, 0], pts[:, 1]), 1.0) & (pts[:, 1] >= 0)
    lower = np.isclose(np.hypot(pts[:, 0] - 1.0, pts[:, 1] - 0.5), 1.0) & (pts[:, 1] <= 0.5)
    assert np.all(upper | lower)
    assert abs(upper.mean() - 0.5) < 0.03


def test_generate_deterministic():
    spec = DatasetSpec("gaussian_mixture", n=500, seed=2, params={"components": COMPONENTS})
    a = generate(spec)
    assert a.shape == (500, 1) and np.array_equal(a, generate(spec))
    assert not np.array_equal(a, generate(DatasetSpec("gaussian_mixture", 500, 3, spec.params)))


class TestCsv:
    def test_round_trip(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("1.0,2.0\n\n3,4.5\n")
        np.testing.assert_array_equal(load_csv(p), [[1.0, 2.0], [3.0, 4.5]])
        spec = DatasetSpec("csv_file", params={"path": str(p)})
        assert generate(spec).shape == (2, 2)

    @pytest.mark.parametrize("text,line", [("1,2\n3,x\n", ":2:"), ("1,2\n3\n", ":2:"), ("x,y\n1,2\n", ":1:")])
    def test_errors_name_the_line(self, tmp_path, text, line):
        p = tmp_path / "bad.csv"
        p.write_text(text)
        with pytest.raises(ValidationError, match=line):
            load_csv(p)

    def test_empty(self, tmp_path):
        p = tmp_path / "empty.csv"
        p.write_text("\n")
        with pytest.raises(ValidationError):
            load_csv(p)
