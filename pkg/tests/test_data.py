import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import make_dataset
from mempate.data import (ROLE_COMPLIANCE_X, ROLE_INTERCEPT, ROLE_TREATMENT, ROLE_TREATMENT_X, Dataset,
                          OutcomeTransform, Schema, build_design, design_builder, load_dataset,
                          predictor_builder, standardize_outcome, write_dataset)
from mempate.errors import DataError, DegenerateOutcomeError

SCHEMA = Schema(outcome="y", treatment="a", source="site", primary="P", covariates=("x1",))


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_source_lacking_an_arm_is_rejected(tmp_path):
    p = write(tmp_path, "site,y,a,x1\nP,1,1,0\nP,2,0,1\nS1,3,1,2\n")
    with pytest.raises(DataError, match="S1.*lacks both arms"):
        load_dataset(p, SCHEMA)


def test_non_binary_treatment_names_row_and_column(tmp_path):
    p = write(tmp_path, "site,y,a,x1\nP,1,1,0\nP,2,2,1\n")
    with pytest.raises(DataError, match=r"row 2, column 'a'"):
        load_dataset(p, SCHEMA)
    with pytest.raises(DataError, match=r"row 2, column 'a'"):
        load_dataset(p, SCHEMA, strict=False)


def test_application_sized_file(tmp_path):
    rng = np.random.default_rng(1)
    lines = ["site,y,a,x1"]
    for label, n in (("P", 102), ("S1", 323), ("S2", 591)):
        a = np.arange(n) % 2
        for i in range(n):
            lines.append(f"{label},{rng.normal()!r},{a[i]},{rng.normal()!r}")
    data = load_dataset(write(tmp_path, "\n".join(lines) + "\n"), SCHEMA)
    assert data.H == 2
    assert data.n_by_source()["P"] == 102
    assert data.sources == ("P", "S1", "S2")


def test_missing_values_strict_and_lenient(tmp_path):
    p = write(tmp_path, "site,y,a,x1\nP,1,1,0\nP,NA,0,1\nP,2,0,\nP,3,0,1\nP,4,1,2\n")
    with pytest.raises(DataError, match="row 2.*row 3"):
        load_dataset(p, SCHEMA)
    data = load_dataset(p, SCHEMA, strict=False)
    assert data.n == 3 and data.n_dropped == 2


def test_missing_column_and_primary(tmp_path):
    p = write(tmp_path, "site,y,a\nP,1,1\nP,2,0\n")
    with pytest.raises(DataError, match="'x1'"):
        load_dataset(p, SCHEMA)
    p = write(tmp_path, "site,y,a,x1\nQ,1,1,0\nQ,2,0,1\n", "e.csv")
    with pytest.raises(DataError, match="primary label 'P' absent"):
        load_dataset(p, SCHEMA)


def test_delimiter_and_declared_order(tmp_path):
    p = write(tmp_path, "site;y;a;x1\nP;1;1;0\nP;2;0;1\nB;1;1;0\nB;2;0;1\nA;1;1;0\nA;2;0;1\n")
    schema = Schema("y", "a", "site", "P", ("x1",), supplemental=("A", "B"))
    assert load_dataset(p, schema, delimiter=";").sources == ("P", "A", "B")


def test_round_trip(tmp_path):
    data = make_dataset(sizes=(7, 6, 5), p=2, seed=4, compliance=True)
    schema = Schema("y", "a", "site", "P", ("x1", "x2"), compliance="c")
    write_dataset(data, tmp_path / "r.csv", schema)
    assert load_dataset(tmp_path / "r.csv", schema).equals(data)


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=3, max_size=20), st.integers(0, 10 ** 6))
def test_round_trip_property(ys, seed):
    import tempfile
    from pathlib import Path

    n = len(ys)
    a = np.arange(n) % 2
    data = Dataset(y=np.array(ys), a=a, source=np.array(["P"] * n, dtype=object),
                   X=np.random.default_rng(seed).normal(size=(n, 1)), sources=("P",), covariate_names=("x1",))
    with tempfile.TemporaryDirectory() as d:
        write_dataset(data, Path(d) / "r.csv", SCHEMA)
        assert load_dataset(Path(d) / "r.csv", SCHEMA).equals(data)


def _two_rows():
    return Dataset(y=np.array([0.0, 1.0]), a=np.array([1, 0]), source=np.array(["P", "P"], dtype=object),
                   X=np.array([[3.0], [-1.0]]), sources=("P",), covariate_names=("x1",))


def test_design_simple():
    ds = build_design(_two_rows(), ["x1"])
    np.testing.assert_array_equal(ds.by_source["P"].values, [[1, 1, 3], [1, 0, -1]])
    assert ds.by_source["P"].column_roles[:2] == (ROLE_INTERCEPT, ROLE_TREATMENT)


def test_design_interaction_product():
    data = Dataset(y=np.array([0.0, 1.0]), a=np.array([1, 0]), source=np.array(["P", "P"], dtype=object),
                   X=np.array([[2.0], [5.0]]), sources=("P",), covariate_names=("x1",))
    D = build_design(data, ["x1", "A:x1"]).by_source["P"]
    np.testing.assert_array_equal(D.values[0], [1, 1, 2, 2])
    assert D.column_roles[-1] == ROLE_TREATMENT_X


def test_application_formula_has_nine_columns():
    data = make_dataset(sizes=(10,), p=3, compliance=True)
    data = Dataset(y=data.y, a=data.a, source=data.source, X=data.X, sources=data.sources,
                   covariate_names=("age", "cpd", "ftnd"), c=data.c)
    D = build_design(data, ["A", "C", "age", "cpd", "ftnd", "A×age", "C×cpd", "A×cpd"]).by_source["P"]
    assert D.d == 9
    assert D.compliance_col == 2
    assert D.column_roles.count(ROLE_COMPLIANCE_X) == 1


def test_design_errors():
    data = _two_rows()
    with pytest.raises(DataError, match="unknown covariate 'age'"):
        build_design(data, ["age"])
    with pytest.raises(DataError, match="compliance"):
        build_design(data, ["C:x1"])


def test_designs_align_across_sources():
    data = make_dataset(sizes=(8, 9, 10), p=2)
    ds = build_design(data, ["x1", "x2", "A:x2"])
    roles = {D.column_roles for D in ds.by_source.values()}
    assert len(roles) == 1
    pooled = ds.pooled(data, ["P", "S2"])
    assert pooled.n == 18


def test_counterfactual_rows_recompute_interactions():
    data = make_dataset(sizes=(6,), p=1, compliance=True)
    b = design_builder(data.covariate_names, ["x1", "A:x1", "C:x1"])
    D1 = b.build(data, treatment=1, compliance=1).values
    np.testing.assert_array_equal(D1[:, 1], 1)
    np.testing.assert_array_equal(D1[:, 2], 1)
    np.testing.assert_allclose(D1[:, 4], data.X[:, 0])
    np.testing.assert_allclose(D1[:, 5], data.X[:, 0])
    D0 = b.build(data, treatment=0, compliance=1).values
    np.testing.assert_array_equal(D0[:, 4], 0)


def test_predictor_builder_layout():
    data = make_dataset(sizes=(6,), p=2, compliance=True)
    assert predictor_builder(data, include_compliance=True).column_names == ("A", "C", "x1", "x2")


@pytest.mark.parametrize("y, expected", [((0, 1), (-0.5, 0.5)), ((1, 3), (-0.5, 0.5))])
def test_standardize_examples(y, expected):
    z, t = standardize_outcome(y)
    np.testing.assert_allclose(z, expected)
    np.testing.assert_allclose(t.inverse(z), y)


def test_standardize_constant():
    with pytest.raises(DegenerateOutcomeError):
        standardize_outcome([5, 5, 5])


@given(arrays(float, st.integers(2, 50), elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_standardize_properties(y):
    assume(np.ptp(y) > 1e-3)
    z, t = standardize_outcome(y)
    assert abs(z.mean()) < 1e-12
    assert abs(np.ptp(z) - 1.0) < 1e-12
    np.testing.assert_allclose(t.inverse(z), y, rtol=1e-12, atol=1e-12 * np.abs(y).max())


def test_transform_requires_positive_scale():
    with pytest.raises(DataError):
        OutcomeTransform(0.0, 0.0)


def test_dataset_invariants():
    with pytest.raises(DataError, match="undeclared"):
        Dataset(y=np.zeros(2), a=np.array([0, 1]), source=np.array(["P", "Z"], dtype=object),
                X=np.zeros((2, 1)), sources=("P",), covariate_names=("x1",))
    with pytest.raises(DataError, match="reserved"):
        Dataset(y=np.zeros(2), a=np.array([0, 1]), source=np.array(["P", "P"], dtype=object),
                X=np.zeros((2, 1)), sources=("P",), covariate_names=("A",))
    data = make_dataset(sizes=(4,))
    with pytest.raises(ValueError):
        data.y[0] = 1.0
