import numpy as np
import pandas as pd
import pytest

from fairfed.data import (
    SYNTH_GROUP_SHIFT,
    CsvSchema,
    DataError,
    Dataset,
    PartitionSpec,
    apply_standardization,
    continuous_columns,
    federated_standardize,
    fit_standardization,
    generate_synthetic,
    load_csv,
    partition,
    site_schema,
    split,
    write_sites,
)


def make_dataset(values, outcomes=None, groups=None, **aux) -> Dataset:
    features = np.asarray(values, dtype=float).reshape(len(values), -1)
    n = features.shape[0]
    return Dataset(
        feature_names=tuple(f"f{j}" for j in range(features.shape[1])),
        features=features,
        outcomes=outcomes if outcomes is not None else [1 if i % 2 else -1 for i in range(n)],
        groups=groups if groups is not None else [i % 2 for i in range(n)],
        aux=aux,
    )


SCHEMA = CsvSchema(features=("age", "score"), outcome="died", group="sex", aux=("race",))


def write_csv(path, rows, header="age,score,died,sex,race"):
    path.write_text("\n".join([header, *rows]) + "\n")
    return path


class TestLoadCsv:
    def test_outcomes_are_mapped_to_plus_minus_one(self, tmp_path):
        # given a 4-row file with a 0/1 outcome column
        path = write_csv(
            tmp_path / "cohort.csv",
            ["50,1.5,0,F,A", "61,0.5,1,M,B", "70,2.5,1,F,A", "45,3.0,0,M,C"],
        )
        # when it is loaded
        ds = load_csv(path, SCHEMA)
        # then outcomes are -1/+1 and row order is preserved
        assert ds.n == 4
        assert ds.outcomes.tolist() == [-1, 1, 1, -1]
        assert ds.features[:, 0].tolist() == [50, 61, 70, 45]
        # and the two sensitive values map in sorted order
        assert ds.groups.tolist() == [0, 1, 0, 1]
        assert ds.aux["race"].tolist() == ["A", "B", "A", "C"]

    def test_declared_group_order(self, tmp_path):
        path = write_csv(tmp_path / "cohort.csv", ["50,1,0,F,A", "61,0,1,M,B"])
        schema = SCHEMA.model_copy(update={"group_order": ("M", "F")})
        assert load_csv(path, schema).groups.tolist() == [1, 0]

    def test_three_group_values_rejected(self, tmp_path):
        path = write_csv(
            tmp_path / "cohort.csv", ["50,1,0,F,A", "61,0,1,M,B", "70,2,1,X,A"]
        )
        with pytest.raises(DataError, match="non-binary sensitive column") as err:
            load_csv(path, SCHEMA)
        assert err.value.column == "sex"

    def test_na_feature_cell_is_located(self, tmp_path):
        path = write_csv(tmp_path / "cohort.csv", ["50,1,0,F,A", "NA,0,1,M,B"])
        with pytest.raises(DataError, match="'NA'") as err:
            load_csv(path, SCHEMA)
        assert err.value.row == 3
        assert err.value.column == "age"

    def test_missing_column(self, tmp_path):
        path = write_csv(tmp_path / "cohort.csv", ["50,0,F,A"], header="age,died,sex,race")
        with pytest.raises(DataError, match="missing column"):
            load_csv(path, SCHEMA)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(DataError, match="empty file"):
            load_csv(path, SCHEMA)

    def test_non_binary_outcome(self, tmp_path):
        path = write_csv(tmp_path / "cohort.csv", ["50,1,2,F,A"])
        with pytest.raises(DataError, match="not binary"):
            load_csv(path, SCHEMA)


def test_dataset_rejects_bad_labels():
    with pytest.raises(DataError):
        make_dataset([[1.0], [2.0]], outcomes=[0, 1])
    with pytest.raises(DataError):
        make_dataset([[1.0], [2.0]], groups=[0, 2])
    with pytest.raises(DataError):
        make_dataset([[1.0], [np.nan]])


def test_examples_iterate_rows():
    ds = make_dataset([[1.0], [2.0]], race=np.array(["A", "B"], dtype=object))
    rows = list(ds.examples())
    assert [r.outcome for r in rows] == [-1, 1]
    assert [r.aux["race"] for r in rows] == ["A", "B"]


class TestStandardization:
    def test_single_client(self):
        params, (out,) = federated_standardize([make_dataset([1.0, 2.0, 3.0])], ["f0"])
        assert params.means == {"f0": 2.0}
        assert params.sds == {"f0": 1.0}
        assert out.features[:, 0].tolist() == [-1.0, 0.0, 1.0]

    def test_pooling_matches_single_client(self):
        pooled, (single,) = federated_standardize([make_dataset([1.0, 2.0, 3.0])], ["f0"])
        params, outs = federated_standardize(
            [make_dataset([1.0, 2.0]), make_dataset([3.0])], ["f0"]
        )
        assert params == pooled
        assert np.concatenate([o.features[:, 0] for o in outs]).tolist() == single.features[
            :, 0
        ].tolist()

    def test_constant_column_rejected(self):
        with pytest.raises(DataError, match="zero"):
            fit_standardization([make_dataset([5.0, 5.0, 5.0])], ["f0"])

    def test_other_columns_untouched(self):
        ds = make_dataset([[1.0, 0.0], [2.0, 1.0], [3.0, 1.0]])
        params = fit_standardization([ds], ["f0"])
        out = apply_standardization(ds, params)
        assert out.features[:, 1].tolist() == [0.0, 1.0, 1.0]

    def test_continuous_columns_skip_binary(self):
        ds = make_dataset([[1.5, 0.0], [2.0, 1.0], [3.0, 1.0]])
        assert continuous_columns(ds) == ["f0"]
        assert continuous_columns(ds, ["f1"]) == ["f1"]

    def test_commutes_with_partitioning(self):
        cohort = generate_synthetic(400, 3, 1.0, seed=3)
        spec = PartitionSpec(attribute="race", clients=3, seed=1)
        names = list(cohort.feature_names)

        # standardize the cohort, then partition
        _, (whole,) = federated_standardize([cohort], names)
        first = partition(whole, spec)
        # partition, then standardize federatedly
        _, second = federated_standardize(partition(cohort, spec), names)

        for a, b in zip(first, second):
            np.testing.assert_allclose(a.features, b.features, rtol=0, atol=1e-12)


class TestPartition:
    def test_quantile_bands_without_exchange(self):
        ages = np.arange(100, 0, -1).astype(float)
        ds = make_dataset(np.zeros((100, 1)), age=ages)
        spec = PartitionSpec(attribute="age", strategy="quantile-bands", clients=4, skew=1.0)
        sites = partition(ds, spec)
        assert [s.n for s in sites] == [25, 25, 25, 25]
        assert sites[0].aux["age"].max() < sites[1].aux["age"].min()
        assert sites[3].aux["age"].min() == 76

    def test_full_skew_sends_each_category_home(self):
        race = np.array(["a", "b", "c", "d"] * 10, dtype=object)
        ds = make_dataset(np.zeros((40, 1)), race=race)
        sites = partition(ds, PartitionSpec(attribute="race", clients=4, skew=1.0, seed=9))
        assert [sorted(set(s.aux["race"])) for s in sites] == [["a"], ["b"], ["c"], ["d"]]

    @pytest.mark.parametrize(
        "spec",
        (
            PartitionSpec(attribute="race", clients=4, skew=0.8, seed=1),
            PartitionSpec(attribute="race", clients=6, skew=0.5, seed=2),
            PartitionSpec(attribute="age", strategy="quantile-bands", clients=4, seed=3),
            PartitionSpec(attribute="age", strategy="quantile-bands", clients=6, skew=0.3),
        ),
    )
    def test_rows_are_preserved(self, spec):
        cohort = generate_synthetic(600, 2, 1.0, seed=5)
        cohort = Dataset(
            cohort.feature_names,
            cohort.features,
            cohort.outcomes,
            cohort.groups,
            {**cohort.aux, "row": np.arange(cohort.n)},
        )
        sites = partition(cohort, spec)
        assert len(sites) == spec.clients
        ids = np.sort(np.concatenate([s.aux["row"] for s in sites]))
        assert ids.tolist() == list(range(cohort.n))

    def test_deterministic(self):
        cohort = generate_synthetic(300, 2, 1.0, seed=5)
        spec = PartitionSpec(attribute="race", clients=4, seed=11)
        a, b = partition(cohort, spec), partition(cohort, spec)
        assert all(np.array_equal(x.features, y.features) for x, y in zip(a, b))

    def test_too_many_clients(self):
        ds = make_dataset(np.zeros((3, 1)), race=np.array(["a", "b", "c"], dtype=object))
        with pytest.raises(DataError):
            partition(ds, PartitionSpec(attribute="race", clients=4))

    def test_missing_attribute(self):
        ds = make_dataset(np.zeros((10, 1)))
        with pytest.raises(DataError, match="missing"):
            partition(ds, PartitionSpec(attribute="race"))

    def test_spec_validates_client_count(self):
        with pytest.raises(ValueError):
            PartitionSpec(attribute="race", clients=1)


class TestSplit:
    def test_seventy_thirty(self):
        train, test = split(make_dataset(np.arange(100.0)), 0.7, seed=0)
        assert (train.n, test.n) == (70, 30)

    def test_deterministic(self):
        ds = make_dataset(np.arange(10.0))
        a, b = split(ds, 0.7, seed=4), split(ds, 0.7, seed=4)
        assert np.array_equal(a[0].features, b[0].features)
        assert np.array_equal(a[1].features, b[1].features)

    def test_union_is_input(self):
        ds = make_dataset(np.arange(50.0))
        train, test = split(ds, 0.7, seed=1)
        values = np.sort(np.concatenate([train.features[:, 0], test.features[:, 0]]))
        assert values.tolist() == list(np.arange(50.0))

    @pytest.mark.parametrize("fraction", (0.0, 1.0, 0.01))
    def test_empty_side_rejected(self, fraction):
        with pytest.raises(DataError):
            split(make_dataset(np.arange(10.0)), fraction, seed=0)


class TestSynthetic:
    @staticmethod
    def rate_gap(ds: Dataset) -> float:
        positive = ds.outcomes == 1
        return abs(positive[ds.groups == 0].mean() - positive[ds.groups == 1].mean())

    def test_no_bias_means_group_independent_outcomes(self):
        assert self.rate_gap(generate_synthetic(20000, 4, 0.0, seed=0)) < 0.02

    def test_large_bias_separates_groups(self):
        assert self.rate_gap(generate_synthetic(20000, 4, 2.0, seed=0)) > 0.10

    def test_only_x0_carries_the_group(self):
        ds = generate_synthetic(20000, 3, 0.0, seed=0)
        gaps = ds.features[ds.groups == 1].mean(axis=0) - ds.features[ds.groups == 0].mean(axis=0)
        assert gaps[0] == pytest.approx(SYNTH_GROUP_SHIFT, abs=0.05)
        assert np.all(np.abs(gaps[1:]) < 0.05)

    def test_deterministic(self):
        a = generate_synthetic(100, 3, 1.0, seed=7)
        b = generate_synthetic(100, 3, 1.0, seed=7)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.outcomes, b.outcomes)
        assert a.aux["race"].tolist() == b.aux["race"].tolist()

    def test_attributes(self):
        ds = generate_synthetic(500, 3, 1.0, seed=1)
        assert set(ds.aux["race"]) <= {"A", "B", "C", "D", "E"}
        assert ds.aux["age"].min() >= 18 and ds.aux["age"].max() <= 100

    @pytest.mark.parametrize("n, d", ((9, 2), (100, 0)))
    def test_preconditions(self, n, d):
        with pytest.raises(DataError):
            generate_synthetic(n, d, 1.0, seed=0)


def test_write_sites_round_trip(tmp_path):
    sites = partition(
        generate_synthetic(200, 2, 1.0, seed=2), PartitionSpec(attribute="race", clients=3)
    )
    manifest = write_sites(sites, tmp_path)

    frame = pd.read_csv(manifest)
    assert frame["n"].tolist() == [s.n for s in sites]
    assert frame["file"].tolist() == ["client_0.csv", "client_1.csv", "client_2.csv"]

    back = load_csv(tmp_path / "client_1.csv", site_schema(sites[1]))
    assert np.array_equal(back.outcomes, sites[1].outcomes)
    assert np.array_equal(back.groups, sites[1].groups)
    np.testing.assert_allclose(back.features, sites[1].features)
