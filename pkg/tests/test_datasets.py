import numpy as np
import pytest

from robusthalf.core import Dataset, Halfspace
from robusthalf.datagen import PlantSpec, generate
from robusthalf.datasets import read_dataset, read_json_lines, read_model, write_dataset, write_json_lines, write_model
from robusthalf.errors import InvalidHypothesisError, InvalidInputError


def test_dataset_files_are_exact(tmp_path):
    S = generate(PlantSpec(d=4, m=50, gamma=0.1, p="inf", seed=3))
    paths = write_dataset(S, tmp_path / "data.csv")
    assert [p.name for p in paths] == ["data.csv", "data.json"]
    back = read_dataset(paths[0])
    assert np.array_equal(back.X, S.X)
    assert np.array_equal(back.y, S.y)
    assert back.metadata == S.metadata
    assert (tmp_path / "data.csv").read_text().splitlines()[0] == "y,x1,x2,x3,x4"


def test_dataset_without_sidecar(tmp_path):
    path = tmp_path / "plain.csv"
    path.write_text("y,x1\n1,0.5\n-1,-0.25\n")
    S = read_dataset(path)
    assert S.metadata is None
    assert S.y.tolist() == [1, -1]


@pytest.mark.parametrize(
    "text",
    [
        "",
        "a,x1\n1,0.5\n",
        "y,x1\n",
        "y,x1\n1,abc\n",
        "y,x1\n1,0.5,0.3\n",
        "y,x1,x2\n1,0.5\n",
        "y,x1\n1,nan\n",
        "y,x1\n2,0.5\n",
    ],
)
def test_malformed_datasets(tmp_path, text):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(InvalidInputError):
        read_dataset(path)


def test_missing_dataset(tmp_path):
    with pytest.raises(InvalidInputError):
        read_dataset(tmp_path / "nope.csv")


def test_model_round_trip(tmp_path):
    h = Halfspace(np.array([0.25, -0.5]), 0.125)
    path = write_model(h, tmp_path / "model.json", q=2)
    back, raw = read_model(path)
    assert np.array_equal(back.w, h.w)
    assert back.b0 == h.b0
    assert raw.q == 2.0


def test_model_file_validation(tmp_path):
    path = tmp_path / "model.json"
    path.write_text('{"w": []}')
    with pytest.raises(InvalidInputError):
        read_model(path)
    path.write_text('{"w": [0.0, 0.0]}')
    with pytest.raises(InvalidHypothesisError):
        read_model(path)


def test_json_lines(tmp_path):
    rows = [{"index": 0, "status": "robust"}, {"index": 1, "z": np.array([1.0, 2.0])}]
    path = write_json_lines(rows, tmp_path / "out.jsonl")
    assert read_json_lines(path) == [{"index": 0, "status": "robust"}, {"index": 1, "z": [1.0, 2.0]}]


def test_awkward_decimals_survive_and_bytes_repeat(tmp_path):
    X = np.array([[0.1 + 0.2, 1e-300], [-2.0 / 3.0, 5e-324], [123456789.123456789, -0.0]])
    S = Dataset(X, np.array([1, -1, 1]))
    first = write_dataset(S, tmp_path / "a.csv")[0]
    second = write_dataset(S, tmp_path / "b.csv")[0]
    assert first.read_bytes() == second.read_bytes()
    back = read_dataset(first)
    assert np.array_equal(back.X, X)
    assert back.y.tolist() == [1, -1, 1]
    assert first.read_text().splitlines()[1].split(",")[0] == "1"
