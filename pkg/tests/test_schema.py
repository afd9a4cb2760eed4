import numpy as np
import pytest

from src.models.csv_handler import load_csv, write_csv
from src.models.descriptives import summarize, summary_frame
from src.models.excel_handler import ExcelHandler, load_table
from src.models.schema import INTERVENTIONAL, NATURAL_PSE, CausalDataset, CausalSchema, Variable, VariableKind
from src.utils.errors import DataError, DataValidationError, ParseError, SchemaError


def write_text(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestSchema:
    def test_contrast_values_must_differ(self):
        with pytest.raises(SchemaError, match="must differ"):
            CausalSchema((), Variable("d", VariableKind.BINARY), (1, 1),
                         (Variable("l", VariableKind.BINARY), Variable("x", VariableKind.BINARY)),
                         Variable("y", VariableKind.BINARY))

    def test_contrast_outside_treatment_support(self):
        with pytest.raises(SchemaError):
            CausalSchema((), Variable("d", VariableKind.BINARY), (2, 0),
                         (Variable("l", VariableKind.BINARY), Variable("x", VariableKind.BINARY)),
                         Variable("y", VariableKind.BINARY))

    def test_duplicate_names_rejected(self):
        with pytest.raises(SchemaError, match="distinct"):
            CausalSchema((), Variable("d", VariableKind.BINARY), (1, 0),
                         (Variable("l", VariableKind.BINARY), Variable("l", VariableKind.BINARY)),
                         Variable("y", VariableKind.BINARY))

    def test_ordinal_needs_levels(self):
        with pytest.raises(SchemaError):
            Variable("l", VariableKind.ORDINAL)
        assert Variable("b", VariableKind.BINARY).levels == 2

    def test_parents_by_mode(self, binary_schema):
        assert binary_schema.parents_of("L") == ["v", "d"]
        assert binary_schema.parents_of("X", NATURAL_PSE) == ["v", "d", "l"]
        assert binary_schema.parents_of("X", INTERVENTIONAL) == ["v", "d"]
        assert binary_schema.parents_of("Y", INTERVENTIONAL) == ["v", "d", "l", "x"]

    def test_dict_round_trip(self, mixed_schema):
        assert CausalSchema.from_dict(mixed_schema.to_dict()) == mixed_schema


class TestDataset:
    def test_columns_are_read_only(self, binary_schema):
        ds = CausalDataset(binary_schema, {n: [0.0, 1.0] for n in "vdlxy"})
        with pytest.raises(ValueError):
            ds.column("v")[0] = 1.0

    def test_take_repeats_rows(self, binary_schema):
        ds = CausalDataset(binary_schema, {n: [0.0, 1.0, 1.0] for n in "vdlxy"})
        assert ds.take([1, 1, 0]).column("d").tolist() == [1.0, 1.0, 0.0]

    def test_non_integer_discrete_value(self, binary_schema):
        columns = {n: [0.0, 1.0] for n in "vdlxy"}
        columns["x"] = [0.0, 0.5]
        with pytest.raises(DataValidationError):
            CausalDataset(binary_schema, columns)


class TestCSV:
    def test_three_rows(self, tmp_path, binary_schema):
        path = write_text(tmp_path, "v,d,l,x,y\n0,1,0,1,1\n1,0,0,0,0\n1,1,1,1,0\n")
        assert load_csv(path, binary_schema).n == 3

    def test_column_order_and_extra_columns(self, tmp_path, binary_schema):
        path = write_text(tmp_path, "id,y,x,l,d,v\nA,1,0,1,1,0\nB,0,1,0,0,1\n")
        ds = load_csv(path, binary_schema)
        assert ds.column("v").tolist() == [0.0, 1.0]
        assert ds.column("y").tolist() == [1.0, 0.0]

    def test_missing_column_named(self, tmp_path, binary_schema):
        path = write_text(tmp_path, "v,d,l,y\n0,1,0,1\n")
        with pytest.raises(SchemaError) as info:
            load_csv(path, binary_schema)
        assert info.value.column == "x"
        assert "'x'" in str(info.value)

    def test_ordinal_out_of_support_row(self, tmp_path, mixed_schema):
        path = write_text(tmp_path, "v,d,l,x,y\n0.5,1,5,2,0.1\n-1.2,0,7,0,2.5\n")
        with pytest.raises(DataValidationError) as info:
            load_csv(path, mixed_schema)
        assert info.value.column == "l"
        assert info.value.row == 3

    def test_unparseable_cell(self, tmp_path, binary_schema):
        path = write_text(tmp_path, "v,d,l,x,y\n0,1,0,1,1\n0,yes,0,1,1\n")
        with pytest.raises(ParseError) as info:
            load_csv(path, binary_schema)
        assert (info.value.row, info.value.column) == (3, "d")

    def test_blank_cell_rejected(self, tmp_path, binary_schema):
        path = write_text(tmp_path, "v,d,l,x,y\n0,1,,1,1\n")
        with pytest.raises(DataValidationError) as info:
            load_csv(path, binary_schema)
        assert info.value.column == "l"

    def test_missing_file(self, tmp_path, binary_schema):
        with pytest.raises(DataError):
            load_csv(str(tmp_path / "absent.csv"), binary_schema)

    def test_write_then_load(self, tmp_path, mixed_schema):
        ds = CausalDataset(mixed_schema, {
            "v": [0.1, 1.0 / 3.0, -2.5e-7], "d": [1, 0, 1], "l": [0, 5, 3],
            "x": [0, 12, 4], "y": [np.pi, -1.0, 1e10],
        })
        path = str(tmp_path / "out.csv")
        write_csv(ds, path)
        loaded = load_csv(path, mixed_schema)
        for name in mixed_schema.names:
            assert np.array_equal(loaded.column(name), ds.column(name))

    def test_random_floats_survive_write_then_load(self, tmp_path):
        schema = CausalSchema(
            confounders=(Variable("v", VariableKind.CONTINUOUS),),
            treatment=Variable("d", VariableKind.BINARY),
            contrast=(1.0, 0.0),
            mediators=(Variable("l", VariableKind.CONTINUOUS), Variable("x", VariableKind.CONTINUOUS)),
            outcome=Variable("y", VariableKind.CONTINUOUS),
        )
        rng = np.random.default_rng(20)
        n = 3_000
        ds = CausalDataset(schema, {
            "v": rng.normal(size=n), "d": rng.integers(0, 2, size=n).astype(float),
            "l": rng.uniform(-1e6, 1e6, size=n), "x": rng.standard_cauchy(size=n),
            "y": rng.normal(scale=1e-9, size=n),
        })
        path = str(tmp_path / "random.csv")
        write_csv(ds, path)
        loaded = load_csv(path, schema)
        for name in schema.names:
            assert np.array_equal(loaded.column(name), ds.column(name)), name


class TestExcel:
    def test_workbook_round_trip(self, tmp_path, binary_schema):
        ds = CausalDataset(binary_schema, {n: [0.0, 1.0, 1.0, 0.0] for n in "vdlxy"})
        path = str(tmp_path / "data.xlsx")
        ExcelHandler().save_dataset(ds, path)
        loaded = load_table(path, binary_schema)
        assert loaded.n == 4
        assert loaded.column("d").tolist() == [0.0, 1.0, 1.0, 0.0]

    def test_unknown_extension(self, tmp_path, binary_schema):
        with pytest.raises(DataError, match="Unsupported"):
            load_table(str(tmp_path / "data.parquet"), binary_schema)


class TestDescriptives:
    def test_two_point_column(self, binary_schema):
        ds = CausalDataset(binary_schema, {n: [0.0, 1.0] for n in "vdlxy"})
        summary = summarize(ds)["v"]
        assert summary.mean == pytest.approx(0.5)
        assert summary.sd == pytest.approx(0.70710678, abs=1e-6)

    def test_constant_column(self, mixed_schema):
        ds = CausalDataset(mixed_schema, {"v": [3, 3, 3], "d": [0, 1, 0], "l": [1, 2, 3],
                                          "x": [0, 0, 1], "y": [3, 3, 3]})
        assert summarize(ds)["y"].sd == 0.0

    def test_binary_frequencies(self, binary_schema):
        ds = CausalDataset(binary_schema, {n: [0.0, 0.0, 1.0, 1.0] for n in "vdlxy"})
        assert summarize(ds)["l"].frequencies == {0: 2, 1: 2}

    def test_single_row_has_no_sd(self, binary_schema):
        ds = CausalDataset(binary_schema, {n: [1.0] for n in "vdlxy"})
        assert summarize(ds)["y"].sd is None

    def test_frame_has_one_row_per_variable(self, binary_schema):
        ds = CausalDataset(binary_schema, {n: [0.0, 1.0] for n in "vdlxy"})
        frame = summary_frame(summarize(ds))
        assert frame["name"].tolist() == ["v", "d", "l", "x", "y"]
        assert frame.loc[0, "frequencies"] == "0:1;1:1"
