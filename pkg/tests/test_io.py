import json

import numpy as np
import pytest

from conftest import random_model
from deepin.errors import FormatError
from deepin.harness.config import load_config
from deepin.harness.io import (
    FORMAT_VERSION,
    load_model,
    model_to_document,
    read_dataset,
    save_model,
    write_dataset,
)
from deepin.model import PenaltyConfig
from deepin.numerics import make_rng


class TestDataset:
    def test_hand_written(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x1,x2,y\n1,2,3\n4.5,-1e-3,0\n7,8,9\n")
        X, y, names = read_dataset(path)
        np.testing.assert_array_equal(X, [[1, 2], [4.5, -1e-3], [7, 8]])
        np.testing.assert_array_equal(y, [3, 0, 9])
        assert names == ["x1", "x2"]

    def test_response_in_the_middle(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,target,b\n1,2,3\n")
        X, y, names = read_dataset(path, "target")
        assert names == ["a", "b"] and X.tolist() == [[1, 3]] and y.tolist() == [2]

    def test_roundtrip_exact(self, tmp_path):
        rng = make_rng(0)
        X = rng.standard_normal((20, 3)) * 10.0 ** rng.integers(-8, 8, size=(20, 3))
        y = rng.standard_normal(20)
        write_dataset(tmp_path / "r.csv", X, y)
        X2, y2, _ = read_dataset(tmp_path / "r.csv")
        assert X2.tobytes() == X.tobytes() and y2.tobytes() == y.tobytes()

    def test_lf_line_endings(self, tmp_path):
        write_dataset(tmp_path / "r.csv", np.ones((2, 1)), np.ones(2))
        assert b"\r" not in (tmp_path / "r.csv").read_bytes()

    def test_nan_cell_location(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x1,x2,x3,y\n1,2,NaN,0\n")
        with pytest.raises(FormatError, match="row 2, column x3"):
            read_dataset(path)

    @pytest.mark.parametrize("text,match", [
        ("x1,y\n1,abc\n", "row 2, column y"),
        ("x1,y\n1,2,3\n", "row 2 has 3 fields"),
        ("x1,z\n1,2\n", "response column"),
        ("x1,y\n", "no data rows"),
        ("", "empty"),
    ])
    def test_errors(self, tmp_path, text, match):
        path = tmp_path / "d.csv"
        path.write_text(text)
        with pytest.raises(FormatError, match=match):
            read_dataset(path)


class TestModelFile:
    def test_roundtrip_bitwise(self, tmp_path):
        m = random_model(3, d=5, hidden=(4, 4))
        m.row_mask[1] = False
        m.apply_masks()
        save_model(m, tmp_path / "m.json", PenaltyConfig(0.1, 0.2), seed=7)
        back, pen, seed = load_model(tmp_path / "m.json")
        assert back.B.tobytes() == m.B.tobytes()
        assert back.net.theta.tobytes() == m.net.theta.tobytes()
        assert back.row_mask.tolist() == m.row_mask.tolist()
        assert pen == PenaltyConfig(0.1, 0.2) and seed == 7
        X = make_rng(1).standard_normal((100, 5))
        assert back.predict(X).tobytes() == m.predict(X).tobytes()

    def test_truncated_file(self, tmp_path):
        save_model(random_model(0), tmp_path / "m.json")
        text = (tmp_path / "m.json").read_text()
        (tmp_path / "m.json").write_text(text[: len(text) // 2])
        with pytest.raises(FormatError, match="malformed"):
            load_model(tmp_path / "m.json")

    def test_future_version_with_unknown_field(self, tmp_path):
        doc = model_to_document(random_model(0))
        doc["format_version"] = FORMAT_VERSION + 1
        doc["optimizer_state"] = {}
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(FormatError, match="format_version"):
            load_model(tmp_path / "m.json")

    def test_unknown_field_same_version(self, tmp_path):
        doc = model_to_document(random_model(0))
        doc["extra"] = 1
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(FormatError, match="unknown fields"):
            load_model(tmp_path / "m.json")

    def test_shape_mismatch(self, tmp_path):
        doc = model_to_document(random_model(0))
        doc["B"]["values"].pop()
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(FormatError):
            load_model(tmp_path / "m.json")


class TestConfig:
    def test_defaults(self):
        cfg = load_config()
        assert cfg.method == "deepin" and cfg.hidden == [32, 32]
        assert cfg.synthetic_spec().d == 200

    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"data": {"d": 20, "n": 100}, "penalty": {"lam1": 0.1}}))
        cfg = load_config(path, {"seed": 5})
        assert cfg.seed == 5 and cfg.penalty_config().lam1 == 0.1
        assert cfg.synthetic_spec(seed=9).seed == 9

    @pytest.mark.parametrize("doc", [{"lambda1": 1}, {"penalty": {"lam5": 1}},
                                     {"training": {"epoch": 3}}])
    def test_unknown_keys(self, tmp_path, doc):
        path = tmp_path / "c.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(FormatError, match="unknown keys"):
            load_config(path)

    def test_malformed(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{")
        with pytest.raises(FormatError):
            load_config(path)
