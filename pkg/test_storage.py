import json

import numpy as np
import pytest

from errors import InvalidInputError
from storage import (RunStorage, load_dataset_csv, load_labeled_csv, load_measure_csv,
                     load_unlabeled_csv)
from structures import LabeledDataset, UnlabeledDataset


def write(path, text):
    path.write_text(text)
    return str(path)


def test_labeled_csv_with_string_labels(tmp_path):
    path = write(tmp_path / "s.csv", "x0,x1,label\n0.0,1.0,cat\n2.5,3.0,dog\n")
    S = load_labeled_csv(path)
    np.testing.assert_allclose(S.points, [[0.0, 1.0], [2.5, 3.0]])
    assert S.labels.tolist() == ["cat", "dog"]


def test_integer_labels_are_parsed(tmp_path):
    S = load_labeled_csv(write(tmp_path / "s.csv", "x0,label\n0.5,1\n1.5,0\n"))
    assert S.labels.tolist() == [1, 0]


def test_unlabeled_ignores_label_column(tmp_path):
    path = write(tmp_path / "t.csv", "x0,x1,label\n0,1,a\n2,3,b\n")
    T = load_unlabeled_csv(path)
    assert T.points.shape == (2, 2)
    assert isinstance(load_dataset_csv(path), LabeledDataset)
    assert isinstance(load_dataset_csv(write(tmp_path / "u.csv", "x0,x1\n0,1\n")), UnlabeledDataset)


def test_measure_weights(tmp_path):
    mu = load_measure_csv(write(tmp_path / "m.csv", "x0,weight\n0,1\n1,3\n"))
    np.testing.assert_allclose(mu.weights, [0.25, 0.75])
    uniform = load_measure_csv(write(tmp_path / "n.csv", "x0\n0\n1\n"))
    np.testing.assert_allclose(uniform.weights, [0.5, 0.5])


@pytest.mark.parametrize("text", [
    "",
    "x0,x1\n",
    "x0,x1\n1.0\n",
    "x0,x1\n1.0,abc\n",
])
def test_malformed_files(tmp_path, text):
    with pytest.raises(InvalidInputError):
        load_unlabeled_csv(write(tmp_path / "bad.csv", text))


def test_missing_file(tmp_path):
    with pytest.raises(InvalidInputError):
        load_labeled_csv(str(tmp_path / "absent.csv"))


def test_labeled_needs_label_column(tmp_path):
    with pytest.raises(InvalidInputError):
        load_labeled_csv(write(tmp_path / "u.csv", "x0,x1\n0,1\n"))


def test_negative_measure_weights(tmp_path):
    with pytest.raises(InvalidInputError):
        load_measure_csv(write(tmp_path / "m.csv", "x0,weight\n0,-1\n1,3\n"))


class TestRunStorage:
    def test_creates_directory(self, tmp_path):
        storage = RunStorage(str(tmp_path / "nested" / "run"))
        assert (tmp_path / "nested" / "run").is_dir()
        assert storage.path("a.csv").endswith("a.csv")

    def test_dataset_reloads_exactly(self, tmp_path, rng):
        points = rng.normal(size=(5, 3))
        labels = np.array([0, 1, 1, 2, 0])
        storage = RunStorage(str(tmp_path))
        loaded = load_labeled_csv(storage.save_dataset("d.csv", points, labels))
        np.testing.assert_array_equal(loaded.points, points)
        np.testing.assert_array_equal(loaded.labels, labels)

    def test_plan_long_form(self, tmp_path):
        path = RunStorage(str(tmp_path)).save_plan("plan.csv", np.array([[0.5, 0.0], [0.0, 0.5]]))
        lines = open(path).read().splitlines()
        assert lines[0] == "row,col,mass"
        assert lines[1] == "0,0,0.5"
        assert len(lines) == 5

    def test_json_is_sorted_and_native(self, tmp_path):
        storage = RunStorage(str(tmp_path))
        storage.save_json("r.json", {"b": np.float64(0.1), "a": np.arange(3), "c": {"z": np.int64(4)}})
        text = (tmp_path / "r.json").read_text()
        assert text.index('"a"') < text.index('"b"')
        assert storage.load_json("r.json") == {"a": [0, 1, 2], "b": 0.1, "c": {"z": 4}}
        assert json.loads(text)["b"] == 0.1
