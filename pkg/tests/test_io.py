"""Persistence-layer tests: CSV datasets, JSON parameters, manifests.

Byte-level reproducibility is the contract here, so several tests compare
whole file contents rather than parsed values.
"""
from __future__ import annotations

import json

import numpy as np
import pytest

from ifa.io import (
    canonical_json,
    config_hash,
    item_names,
    params_from_dict,
    params_to_dict,
    read_dataset_csv,
    read_json,
    sha256_file,
    sha256_text,
    write_dataset_csv,
    write_json,
    write_manifest,
    write_trajectory_csv,
)
from ifa.models import MISSING, Dataset, ItemParams, Link, ModelKind
from ifa.simulate import SimSpec, simulate


class TestCanonicalJson:
    def test_key_order_is_normalized(self):
        a = canonical_json({"b": 1, "a": [2, 3]})
        b = canonical_json({"a": [2, 3], "b": 1})
        assert a == b
        assert a.endswith("\n")
        assert json.loads(a) == {"a": [2, 3], "b": 1}

    def test_config_hash_tracks_values_not_order(self):
        base = config_hash({"seed": 1, "n": 100})
        assert config_hash({"n": 100, "seed": 1}) == base
        assert config_hash({"seed": 2, "n": 100}) != base
        assert len(base) == 64

    def test_sha256_text_matches_file(self, tmp_path):
        text = canonical_json({"x": 1})
        path = tmp_path / "x.json"
        write_json(path, {"x": 1})
        assert sha256_file(path) == sha256_text(text)
        assert read_json(path) == {"x": 1}


class TestDatasetCsv:
    def test_round_trip_with_missing(self, tmp_path):
        data, _, _ = simulate(
            SimSpec(n_persons=40, n_items=6, missing_rate=0.2, seed=1)
        )
        path = tmp_path / "data.csv"
        write_dataset_csv(path, data)
        back = read_dataset_csv(path)
        np.testing.assert_array_equal(back.responses, data.responses)

    def test_header_and_na_text(self, tmp_path):
        responses = np.array([[1, MISSING], [0, 2]])
        path = tmp_path / "tiny.csv"
        write_dataset_csv(path, Dataset.from_responses(responses))
        text = path.read_text()
        assert text == "item_1,item_2\n1,NA\n0,2\n"

    def test_custom_names_validated(self, tmp_path):
        data = Dataset.from_responses(np.array([[0, 1], [1, 0]]))
        with pytest.raises(ValueError):
            write_dataset_csv(tmp_path / "bad.csv", data, names=["only_one"])

    def test_invalid_cell_names_row_and_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("alpha,beta\n1,0\n2,oops\n")
        with pytest.raises(ValueError, match=r"row 2, column 'beta': invalid cell 'oops'"):
            read_dataset_csv(path)

    def test_ragged_row_rejected(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("a,b\n1\n")
        with pytest.raises(ValueError, match="row 1: expected 2 cells, found 1"):
            read_dataset_csv(path)

    def test_negative_code_rejected(self, tmp_path):
        path = tmp_path / "neg.csv"
        path.write_text("a,b\n1,-2\n")
        with pytest.raises(ValueError, match="negative category code -2"):
            read_dataset_csv(path)

    def test_empty_and_header_only_rejected(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        with pytest.raises(ValueError, match="empty"):
            read_dataset_csv(empty)
        header_only = tmp_path / "header.csv"
        header_only.write_text("a,b\n")
        with pytest.raises(ValueError, match="no data rows"):
            read_dataset_csv(header_only)


class TestParamsJson:
    def make_items(self):
        return [
            ItemParams(ModelKind.GRADED, np.array([-0.5, 0.7]), np.array([1.1, 0.0])),
            ItemParams(ModelKind.GRADED, np.array([0.0, 0.4]), np.array([0.3, 0.8])),
        ]

    def test_round_trip(self, tmp_path):
        items = self.make_items()
        corr = np.array([[1.0, 0.3], [0.3, 1.0]])
        thetas = np.array([[0.5, -0.2], [1.0, 0.1]])
        payload = params_to_dict(
            items, model=ModelKind.GRADED, link=Link.PROBIT, k=2,
            estimator="em_quadrature", seed=9, correlation=corr, thetas=thetas,
        )
        path = tmp_path / "params.json"
        write_json(path, payload)
        back_items, extras = params_from_dict(read_json(path))
        for orig, back in zip(items, back_items):
            assert back.kind == orig.kind
            np.testing.assert_array_equal(back.intercepts, orig.intercepts)
            np.testing.assert_array_equal(back.loadings, orig.loadings)
        assert extras["k"] == 2
        assert extras["link"] == "probit"
        assert extras["names"] == item_names(2)
        np.testing.assert_array_equal(extras["correlation"], corr)
        np.testing.assert_array_equal(extras["thetas"], thetas)

    def test_optional_fields_default_to_none(self):
        payload = params_to_dict(
            self.make_items(), model=ModelKind.GRADED, link=Link.LOGIT, k=2
        )
        assert "seed" not in payload and "thetas" not in payload
        _, extras = params_from_dict(payload)
        assert extras["correlation"] is None
        assert extras["thetas"] is None

    def test_identical_fits_produce_identical_bytes(self, tmp_path):
        items = self.make_items()
        for name in ("a.json", "b.json"):
            write_json(
                tmp_path / name,
                params_to_dict(items, model=ModelKind.GRADED, link=Link.LOGIT, k=2),
            )
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


class TestTrajectoryCsv:
    def test_values_round_trip_through_repr(self, tmp_path):
        path = tmp_path / "trail.csv"
        rows = [(1, -1234.567891234567), (2, -1200.0000000001)]
        write_trajectory_csv(path, ["iteration", "loglik"], rows)
        lines = path.read_text().splitlines()
        assert lines[0] == "iteration,loglik"
        for line, (it, ll) in zip(lines[1:], rows):
            got_it, got_ll = line.split(",")
            assert int(got_it) == it
            assert float(got_ll) == ll  # repr() keeps the exact double


class TestManifest:
    def test_structure_and_determinism(self, tmp_path):
        config = {"seed": 3, "estimator": "svd"}
        for name in ("m1.json", "m2.json"):
            write_manifest(
                tmp_path / name,
                command="fit",
                seed=3,
                config=config,
                inputs={"data": "abc123"},
                outputs=["params.json", "manifest.json"],
            )
        assert (tmp_path / "m1.json").read_bytes() == (tmp_path / "m2.json").read_bytes()
        payload = read_json(tmp_path / "m1.json")
        assert sorted(payload) == [
            "command", "config", "config_hash", "inputs", "outputs", "seed",
        ]
        assert payload["config_hash"] == config_hash(config)
        assert payload["outputs"] == sorted(payload["outputs"])
        assert "time" not in canonical_json(payload).lower()
