"""Tests for CSV parsing, token-preserving output and model JSON persistence."""

import numpy as np
import pytest

from app.models.mixture import GaussianMixtureModel, MixtureModel
from app.services.dataset_io import format_value, load_model, read_dataset, save_model, write_imputed, write_matrix
from app.utils.errors import DatasetFormatError


class TestReadDataset:
    """Test CSV parsing."""

    def test_header_and_missing_tokens(self, tmp_path):
        """Header detected; empty fields and NaN in any case are missing."""
        path = tmp_path / "data.csv"
        path.write_text("a,b,c\n1.5,,3\nnan,2,NaN\n4,5,6\n")
        table = read_dataset(path)
        assert table.header == ("a", "b", "c")
        np.testing.assert_array_equal(
            table.dataset.mask, [[True, False, True], [False, True, False], [True, True, True]]
        )
        assert table.dataset.values[0, 0] == 1.5
        assert table.dataset.feature_names == ("a", "b", "c")

    def test_headerless(self, tmp_path):
        """An all-numeric first row is data."""
        path = tmp_path / "data.csv"
        path.write_text("1,2\n3,4\n")
        table = read_dataset(path)
        assert table.header is None
        assert table.dataset.n_samples == 2

    def test_non_numeric_cell(self, tmp_path):
        """A non-numeric data cell reports its line and column."""
        path = tmp_path / "data.csv"
        path.write_text("x,y\n1,2\n3,abc\n")
        with pytest.raises(DatasetFormatError) as exc:
            read_dataset(path)
        assert "line 3, column 2" in exc.value.message
        assert exc.value.exit_code == 2

    def test_short_row(self, tmp_path):
        """A truncated line is a format error, not a missing cell."""
        path = tmp_path / "data.csv"
        path.write_text("1,2,3,4\n5,6,7\n")
        with pytest.raises(DatasetFormatError) as exc:
            read_dataset(path)
        assert "line 2" in exc.value.message

    def test_short_row_after_header(self, tmp_path):
        """Field counts are checked against the header line too."""
        path = tmp_path / "data.csv"
        path.write_text("a,b,c,d\n1,2,3,4\n5,6,7\n8,9,10,11\n")
        with pytest.raises(DatasetFormatError) as exc:
            read_dataset(path)
        assert "line 3" in exc.value.message
        assert exc.value.exit_code == 2

    def test_long_row(self, tmp_path):
        """A line with an extra field is rejected."""
        path = tmp_path / "data.csv"
        path.write_text("1,2\n3,4,5\n")
        with pytest.raises(DatasetFormatError):
            read_dataset(path)

    def test_trailing_empty_field_is_missing(self, tmp_path):
        """An empty last field on a full-width line stays a missing cell."""
        path = tmp_path / "data.csv"
        path.write_text("1,2,3\n4,5,\n")
        table = read_dataset(path)
        np.testing.assert_array_equal(table.dataset.mask[1], [True, True, False])

    def test_missing_file(self, tmp_path):
        """A missing input file is a format error."""
        with pytest.raises(DatasetFormatError):
            read_dataset(tmp_path / "absent.csv")


class TestWriteImputed:
    """Test token-preserving output."""

    def test_complete_file_round_trips(self, tmp_path):
        """Without missing cells the output is byte-identical to the input."""
        source = tmp_path / "in.csv"
        source.write_bytes(b"x1,x2,x3\n1.50,2,3e1\n-0.0,7.250,1\n")
        table = read_dataset(source)
        target = tmp_path / "out.csv"
        write_imputed(target, table, table.dataset.values)
        assert target.read_bytes() == source.read_bytes()

    def test_imputed_cells_full_precision(self, tmp_path):
        """Imputed cells are written as shortest round-trip floats."""
        source = tmp_path / "in.csv"
        source.write_text("1.0,,3.0\n4.0,5.0,6.0\n")
        table = read_dataset(source)
        imputed = table.dataset.filled(1.0 / 3.0)
        target = tmp_path / "out.csv"
        write_imputed(target, table, imputed)
        assert target.read_text() == f"1.0,{format_value(1.0 / 3.0)},3.0\n4.0,5.0,6.0\n"
        assert float(format_value(1.0 / 3.0)) == 1.0 / 3.0

    def test_masked_matrix(self, tmp_path):
        """write_matrix leaves masked cells empty."""
        target = tmp_path / "m.csv"
        write_matrix(target, np.array([[1.0, 2.0]]), ["a", "b"], mask=np.array([[True, False]]))
        assert target.read_text() == "a,b\n1.0,\n"


class TestModelJson:
    """Test model persistence."""

    def test_round_trip(self, tmp_path):
        """Saved models load back with the same method and parameters."""
        fem_model = MixtureModel(
            weights=[0.25, 0.75],
            means=np.array([[0.0, 1.0], [2.0, 3.0]]),
            scatters=np.stack([np.eye(2), np.array([[1.5, 0.2], [0.2, 0.5]])]),
        )
        path = tmp_path / "model.json"
        save_model(path, fem_model, "fem")
        method, loaded = load_model(path)
        assert method == "fem" and isinstance(loaded, MixtureModel)
        np.testing.assert_array_equal(loaded.scatters, fem_model.scatters)

        gmm_model = GaussianMixtureModel(weights=[1.0], means=np.zeros((1, 2)), scatters=4.0 * np.eye(2)[None])
        save_model(path, gmm_model, "gmm")
        method, loaded = load_model(path)
        assert method == "gmm" and isinstance(loaded, GaussianMixtureModel)

    def test_invalid_json(self, tmp_path):
        """Garbage model files raise DatasetFormatError."""
        path = tmp_path / "model.json"
        path.write_text("{not json")
        with pytest.raises(DatasetFormatError):
            load_model(path)
