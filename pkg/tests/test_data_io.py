import os

import numpy as np
import pytest

from deepida import io
from deepida.data import MultiViewDataset
from deepida.errors import InvalidSpec, IoError, ParseError, ShapeMismatch
from deepida.simgen import NonlinearSimSpec, gen_nonlinear


def small():
    return gen_nonlinear(NonlinearSimSpec(p=(50, 8), n=(6, 5), seed=2))


def test_dataset_validation():
    with pytest.raises(ShapeMismatch):
        MultiViewDataset([np.ones((3, 2)), np.ones((4, 2))], [1, 2, 1])
    d = MultiViewDataset([np.ones((3, 2)), np.zeros((3, 1))], [1, 2, 1])
    assert d.feature_names == [["v1_f1", "v1_f2"], ["v2_f1"]]
    assert d.views[0].dtype == np.float64


def test_subset_and_select():
    d = small()
    s = d.subset([0, 0, 3])
    assert s.n_samples == 3
    np.testing.assert_array_equal(s.views[1][0], s.views[1][1])
    f = d.select_features([[1, 4], [0]])
    assert f.n_features == [2, 1]
    assert f.feature_names[0] == ["v1_f2", "v1_f5"]
    assert f.signal_mask[0].tolist() == [True, True]


def test_archive_deterministic_and_round_trip():
    arrays = {"b": np.arange(6.0).reshape(2, 3), "a": np.array([1, 2, 3])}
    one = io.archive_bytes({"kind": "test", "x": 1}, arrays)
    two = io.archive_bytes({"x": 1, "kind": "test"}, dict(reversed(list(arrays.items()))))
    assert one == two
    manifest, back = io.read_archive_bytes(one, kind="test")
    assert manifest["format"] == "deepida" and manifest["version"] == 1
    np.testing.assert_array_equal(back["b"], arrays["b"])
    assert back["a"].dtype == np.int64
    with pytest.raises(InvalidSpec):
        io.read_archive_bytes(one, kind="other")
    with pytest.raises(InvalidSpec):
        io.read_archive_bytes(b"not a zip")


def test_dataset_csv_round_trip(tmp_path):
    d = small()
    paths = io.save_dataset(d, tmp_path)
    back = io.load_dataset(paths, tmp_path / "labels.csv", tmp_path / "mask.csv")
    for a, b in zip(d.views, back.views):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(back.labels, d.labels)
    assert back.feature_names == d.feature_names
    for a, b in zip(d.signal_mask, back.signal_mask):
        np.testing.assert_array_equal(a, b)
    assert (tmp_path / "provenance.json").exists()


def test_csv_errors(tmp_path):
    p = tmp_path / "v.csv"
    p.write_text("a,b\n1,2\n3\n")
    with pytest.raises(ParseError, match="line 3"):
        io.read_matrix_csv(p)
    p.write_text("a,b\n1,x\n")
    with pytest.raises(ParseError, match="line 2"):
        io.read_matrix_csv(p)
    lab = tmp_path / "labels.csv"
    lab.write_text("label\n1\n2.5\n")
    with pytest.raises(ParseError, match="line 3"):
        io.read_labels_csv(lab)


def test_load_errors(tmp_path):
    d = small()
    paths = io.save_dataset(d, tmp_path)
    with pytest.raises(IoError, match="view 2"):
        io.load_dataset([paths[0], str(tmp_path / "missing.csv")], tmp_path / "labels.csv")
    io.write_labels_csv(tmp_path / "short.csv", d.labels[:-1])
    with pytest.raises(ShapeMismatch):
        io.load_dataset(paths, tmp_path / "short.csv")


def test_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(IoError):
        io.save_dataset(small(), os.path.join(blocker, "sub"))
