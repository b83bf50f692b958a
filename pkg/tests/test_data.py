import numpy as np
import pytest

from riesztmle.data import (
    ColumnRole,
    Dataset,
    ParseError,
    SchemaError,
    assign_folds,
    load_csv,
    write_csv,
)


def simple_schema():
    return {
        "L1": ColumnRole("baseline-covariate"),
        "A": ColumnRole("treatment", 1),
        "Y": ColumnRole("outcome"),
    }


def two_phase_schema():
    schema = simple_schema()
    schema["S"] = ColumnRole("baseline-covariate")
    schema["D"] = ColumnRole("sampling-indicator")
    return schema


class TestColumnRole:
    def test_parse_timed(self):
        role = ColumnRole.parse("treatment:2")
        assert role.kind == "treatment" and role.t == 2

    def test_parse_plain(self):
        assert ColumnRole.parse("outcome") == ColumnRole("outcome")

    def test_rejects_unknown_kind(self):
        with pytest.raises(SchemaError):
            ColumnRole("exposure")

    def test_treatment_needs_time(self):
        with pytest.raises(SchemaError):
            ColumnRole("treatment")


class TestDatasetValidation:
    def test_requires_single_outcome(self):
        cols = {"Y1": np.zeros(3), "Y2": np.zeros(3)}
        schema = {"Y1": ColumnRole("outcome"), "Y2": ColumnRole("outcome")}
        with pytest.raises(SchemaError, match="outcome"):
            Dataset(cols, schema)

    def test_treatment_times_contiguous(self):
        cols = {"A1": np.zeros(3), "A3": np.zeros(3), "Y": np.zeros(3)}
        schema = {
            "A1": ColumnRole("treatment", 1),
            "A3": ColumnRole("treatment", 3),
            "Y": ColumnRole("outcome"),
        }
        with pytest.raises(SchemaError, match="contiguous"):
            Dataset(cols, schema)

    def test_sampling_indicator_binary(self):
        cols = {"D": np.array([0.0, 2.0]), "Y": np.zeros(2)}
        schema = {"D": ColumnRole("sampling-indicator"), "Y": ColumnRole("outcome")}
        with pytest.raises(SchemaError, match="sampling"):
            Dataset(cols, schema)

    def test_missing_requires_gating(self):
        cols = {"L1": np.array([1.0, np.nan]), "A": np.zeros(2), "Y": np.zeros(2)}
        with pytest.raises(SchemaError, match="missing"):
            Dataset(cols, simple_schema())

    def test_columns_read_only(self):
        ds = Dataset({"L1": np.ones(2), "A": np.zeros(2), "Y": np.ones(2)}, simple_schema())
        with pytest.raises(ValueError):
            ds.columns["Y"][0] = 5.0


class TestLoadCsv:
    def test_three_row_parse(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("L1,A,Y\n0.5,1,0\n-0.25,0,1\n2.0,1,1\n")
        ds = load_csv(p, simple_schema())
        assert ds.n == 3
        np.testing.assert_array_equal(ds.columns["L1"], [0.5, -0.25, 2.0])
        np.testing.assert_array_equal(ds.columns["A"], [1.0, 0.0, 1.0])

    def test_missing_declared_column(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("L1,Y\n0.5,0\n")
        with pytest.raises(SchemaError, match="'A'"):
            load_csv(p, simple_schema())

    def test_non_numeric_cell_location(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("L1,A,Y\n0.5,1,0\nbad,0,1\n")
        with pytest.raises(ParseError, match=r"row 1.*'L1'"):
            load_csv(p, simple_schema())

    def test_two_phase_missing_cells_accepted(self, tmp_path):
        # Six-row fixture: S observed exactly where D=1.
        p = tmp_path / "d.csv"
        p.write_text(
            "L1,A,Y,S,D\n"
            "0.1,1,1,2.5,1\n"
            "0.2,0,0,,0\n"
            "0.3,1,0,1.5,1\n"
            "0.4,0,1,0.5,1\n"
            "0.5,1,0,,0\n"
            "0.6,0,1,3.5,1\n"
        )
        ds = load_csv(p, two_phase_schema())
        assert ds.n == 6
        np.testing.assert_array_equal(ds.is_missing("S"), [0, 1, 0, 0, 1, 0])
        assert not ds.is_missing("L1").any()

    def test_missing_cell_on_sampled_row_rejected(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("L1,A,Y,S,D\n0.1,1,1,,1\n0.2,0,0,1.0,1\n")
        with pytest.raises(SchemaError, match="'S'"):
            load_csv(p, two_phase_schema())

    def test_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(7)
        cols = {
            "L1": rng.standard_normal(20),
            "A": rng.integers(0, 2, 20).astype(float),
            "Y": rng.integers(0, 2, 20).astype(float),
        }
        ds = Dataset(cols, simple_schema())
        p = tmp_path / "out.csv"
        write_csv(ds, p)
        back = load_csv(p, simple_schema())
        for name in cols:
            np.testing.assert_array_equal(back.columns[name], ds.columns[name])

    def test_round_trip_with_mask(self, tmp_path):
        schema = two_phase_schema()
        rng = np.random.default_rng(11)
        d = rng.integers(0, 2, 15).astype(float)
        s = rng.standard_normal(15)
        s[d == 0] = np.nan
        cols = {
            "L1": rng.standard_normal(15),
            "A": rng.integers(0, 2, 15).astype(float),
            "Y": rng.integers(0, 2, 15).astype(float),
            "S": s,
            "D": d,
        }
        ds = Dataset(cols, schema, mask={"S": d == 1})
        p = tmp_path / "out.csv"
        write_csv(ds, p)
        back = load_csv(p, schema)
        np.testing.assert_array_equal(back.is_missing("S"), ds.is_missing("S"))
        obs = d == 1
        np.testing.assert_array_equal(back.columns["S"][obs], ds.columns["S"][obs])


class TestFolds:
    def test_even_split(self):
        folds = assign_folds(10, 5, seed=3)
        sizes = np.bincount(folds.fold_index, minlength=5)
        np.testing.assert_array_equal(sizes, [2, 2, 2, 2, 2])

    def test_uneven_split(self):
        folds = assign_folds(10, 3, seed=3)
        sizes = sorted(np.bincount(folds.fold_index, minlength=3), reverse=True)
        assert sizes == [4, 3, 3]

    def test_deterministic(self):
        a = assign_folds(57, 4, seed=99)
        b = assign_folds(57, 4, seed=99)
        np.testing.assert_array_equal(a.fold_index, b.fold_index)

    def test_seed_changes_assignment(self):
        a = assign_folds(57, 4, seed=99)
        b = assign_folds(57, 4, seed=100)
        assert not np.array_equal(a.fold_index, b.fold_index)

    def test_partition_property(self):
        for seed in range(5):
            n = 20 + 7 * seed
            folds = assign_folds(n, 4, seed=seed)
            assert sorted(np.concatenate([folds.fold_rows(j) for j in range(4)])) == list(range(n))

    def test_k_exceeding_n_rejected(self):
        with pytest.raises(ValueError):
            assign_folds(3, 5, seed=0)
