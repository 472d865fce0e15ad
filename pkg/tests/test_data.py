import numpy as np
import pytest

from conftest import make_dataset, make_record
from fedsim.data import (Dataset, SyntheticSpec, generate_synthetic, load_csv,
                         partition_by_hospital, save_csv, standardize,
                         train_test_split)
from fedsim.errors import EmptyDatasetError, IntegrityError, SchemaError


def write_csv(path, text):
    path.write_text(text, encoding="utf-8")
    return path


# ---------------------------------------------------------------- load_csv


def test_load_csv_valid_rows(tmp_path):
    path = write_csv(tmp_path / "d.csv",
                     "hospital_id,stay_id,label,apache,age\n"
                     "1,100,0,12.5,64\n"
                     "1,101,1,30.0,71\n"
                     "2,102,0,7.25,55\n")
    ds = load_csv(path)
    assert len(ds) == 3
    assert ds.schema == ("apache", "age")
    assert ds.dropped_rows == 0
    assert ds.records[1].label == 1
    np.testing.assert_array_equal(ds.records[0].features, [12.5, 64.0])


def test_load_csv_drops_incomplete_row(tmp_path):
    path = write_csv(tmp_path / "d.csv",
                     "hospital_id,stay_id,label,apache,age\n"
                     "1,100,0,12.5,64\n"
                     "1,101,1,30.0,\n"
                     "2,102,0,7.25,55\n")
    ds = load_csv(path)
    assert len(ds) == 2
    assert ds.dropped_rows == 1


def test_load_csv_missing_required_column(tmp_path):
    path = write_csv(tmp_path / "d.csv", "hospital_id,label,apache\n1,0,3.0\n")
    with pytest.raises(SchemaError):
        load_csv(path)


def test_load_csv_missing_feature_column(tmp_path):
    path = write_csv(tmp_path / "d.csv",
                     "hospital_id,stay_id,label,apache\n1,100,0,3.0\n")
    with pytest.raises(SchemaError):
        load_csv(path, schema=("apache", "age"))


def test_load_csv_all_rows_dropped(tmp_path):
    path = write_csv(tmp_path / "d.csv",
                     "hospital_id,stay_id,label,apache\n1,100,0,oops\n")
    with pytest.raises(EmptyDatasetError):
        load_csv(path)


def test_load_csv_duplicate_stay_id(tmp_path):
    path = write_csv(tmp_path / "d.csv",
                     "hospital_id,stay_id,label,apache\n1,100,0,1.0\n2,100,1,2.0\n")
    with pytest.raises(IntegrityError):
        load_csv(path)


def test_save_load_roundtrip(tmp_path):
    spec = SyntheticSpec(hospital_count=4, min_size=5, max_size=9,
                         feature_dim=3, client_shift_strength=0.2,
                         base_positive_rate=0.4, seed=2)
    ds = generate_synthetic(spec)
    path = tmp_path / "out.csv"
    save_csv(path, ds)
    back = load_csv(path)
    assert len(back) == len(ds)
    np.testing.assert_array_equal(back.feature_matrix(), ds.feature_matrix())
    np.testing.assert_array_equal(back.labels(), ds.labels())


# ---------------------------------------------------------------- partition


def test_partition_groups_by_hospital():
    ds = make_dataset([
        (1, 0, [0.0, 0.0], 0),
        (1, 1, [1.0, 0.0], 1),
        (2, 2, [0.0, 1.0], 0),
        (3, 3, [1.0, 1.0], 1),
        (3, 4, [2.0, 2.0], 0),
    ])
    shards = partition_by_hospital(ds)
    assert [s.hospital_id for s in shards] == [1, 2, 3]
    assert [s.size for s in shards] == [2, 1, 2]


def test_partition_single_hospital_is_identity():
    ds = make_dataset([(5, i, [float(i), 0.0], i % 2) for i in range(4)])
    shards = partition_by_hospital(ds)
    assert len(shards) == 1
    assert [r.stay_id for r in shards[0].records] == [0, 1, 2, 3]


def test_partition_completeness_multiset():
    spec = SyntheticSpec(hospital_count=20, min_size=3, max_size=30,
                         feature_dim=4, client_shift_strength=1.0,
                         base_positive_rate=0.3, seed=5)
    ds = generate_synthetic(spec)
    shards = partition_by_hospital(ds)
    assert len(shards) == 20
    ids = sorted(r.stay_id for s in shards for r in s.records)
    assert ids == sorted(r.stay_id for r in ds.records)


# ---------------------------------------------------------------- split


def test_split_counts_basic():
    ds = make_dataset([(1, i, [float(i), 0.0], i % 2) for i in range(10)])
    shards = partition_by_hospital(ds)
    train, test = train_test_split(shards, 0.3, seed=0)
    assert train[0].size == 7
    assert len(test) == 3


def test_split_pooled_size_within_rounding_bound():
    spec = SyntheticSpec(hospital_count=15, min_size=3, max_size=40,
                         feature_dim=3, client_shift_strength=0.5,
                         base_positive_rate=0.3, seed=8)
    shards = partition_by_hospital(generate_synthetic(spec))
    total = sum(s.size for s in shards)
    # Oracle: per-shard round-half-up, clamped to keep one training record.
    expected = sum(min(int(np.floor(0.3 * s.size + 0.5)), s.size - 1)
                   for s in shards)
    train, test = train_test_split(shards, 0.3, seed=4)
    assert len(test) == expected
    assert abs(len(test) - 0.3 * total) <= len(shards) / 2


def test_split_deterministic():
    ds = make_dataset([(h, 10 * h + i, [float(i), float(h)], i % 2)
                       for h in range(3) for i in range(7)])
    shards = partition_by_hospital(ds)
    t1, s1 = train_test_split(shards, 0.3, seed=9)
    t2, s2 = train_test_split(shards, 0.3, seed=9)
    assert [r.stay_id for r in s1.records] == [r.stay_id for r in s2.records]
    for a, b in zip(t1, t2):
        assert [r.stay_id for r in a.records] == [r.stay_id for r in b.records]


def test_split_disjoint_and_complete():
    spec = SyntheticSpec(hospital_count=8, min_size=2, max_size=25,
                         feature_dim=3, client_shift_strength=0.5,
                         base_positive_rate=0.4, seed=3)
    shards = partition_by_hospital(generate_synthetic(spec))
    train, test = train_test_split(shards, 0.3, seed=2)
    train_ids = {r.stay_id for s in train for r in s.records}
    test_ids = test.stay_ids()
    assert not train_ids & test_ids
    all_ids = {r.stay_id for s in shards for r in s.records}
    assert train_ids | test_ids == all_ids
    assert len(train_ids) + len(test_ids) == len(all_ids)


def test_split_keeps_one_training_record():
    ds = make_dataset([(1, 0, [1.0, 2.0], 0), (1, 1, [3.0, 4.0], 1)])
    shards = partition_by_hospital(ds)
    train, test = train_test_split(shards, 0.9, seed=0)
    assert train[0].size == 1
    assert len(test) == 1


def test_split_rejects_bad_fraction():
    ds = make_dataset([(1, 0, [1.0, 2.0], 0)])
    with pytest.raises(ValueError):
        train_test_split(partition_by_hospital(ds), 1.0, seed=0)


# ---------------------------------------------------------------- standardize


def test_standardize_identity_when_already_standard():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(400, 3))
    X = (X - X.mean(axis=0)) / X.std(axis=0)
    ds = make_dataset([(1, i, X[i], int(i % 2)) for i in range(400)],
                      schema=("a", "b", "c"))
    shards = partition_by_hospital(ds)
    test = Dataset(ds.schema, [])
    out_shards, _, _ = standardize(shards, test)
    np.testing.assert_allclose(out_shards[0].feature_matrix(), X, atol=1e-9)


def test_standardize_constant_feature_maps_to_zero():
    ds = make_dataset([(1, i, [5.0, float(i)], i % 2) for i in range(6)])
    shards = partition_by_hospital(ds)
    out_shards, _, _ = standardize(shards, Dataset(ds.schema, []))
    assert np.all(out_shards[0].feature_matrix()[:, 0] == 0.0)


def test_standardize_training_moments():
    spec = SyntheticSpec(hospital_count=6, min_size=20, max_size=60,
                         feature_dim=5, client_shift_strength=1.5,
                         base_positive_rate=0.3, seed=11)
    shards = partition_by_hospital(generate_synthetic(spec))
    train, test = train_test_split(shards, 0.3, seed=1)
    out_shards, _, _ = standardize(train, test)
    pooled = np.concatenate([s.feature_matrix() for s in out_shards])
    assert np.abs(pooled.mean(axis=0)).max() < 1e-9
    assert np.abs(pooled.std(axis=0) - 1.0).max() < 1e-9


def test_standardize_fit_ignores_test_records():
    train_ds = make_dataset([(1, i, [float(i)], 0 if i < 2 else 1)
                             for i in range(4)], schema=("x",))
    test_ds = make_dataset([(1, 99, [1000.0], 1)], schema=("x",))
    shards = partition_by_hospital(train_ds)
    _, _, transform = standardize(shards, test_ds)
    assert transform.mean[0] == pytest.approx(1.5)


def test_standardize_double_application_differs():
    # Guard against accidentally applying the fitted transform twice.
    rng = np.random.default_rng(14)
    X = rng.normal(loc=3.0, scale=2.5, size=(50, 2))
    ds = make_dataset([(1, i, X[i], int(i % 2)) for i in range(50)])
    shards = partition_by_hospital(ds)
    out_shards, _, transform = standardize(shards, Dataset(ds.schema, []))
    once = out_shards[0].feature_matrix()
    twice = transform.apply(once)
    assert not np.allclose(once, twice)


# ---------------------------------------------------------------- generator


def test_generate_zero_shift_means_agree():
    spec = SyntheticSpec(hospital_count=2, min_size=4000, max_size=4000,
                         feature_dim=6, client_shift_strength=0.0,
                         base_positive_rate=0.3, seed=21)
    shards = partition_by_hospital(generate_synthetic(spec))
    a, b = (s.feature_matrix() for s in shards)
    bound = 4.0 / np.sqrt(min(len(a), len(b)))
    assert np.abs(a.mean(axis=0) - b.mean(axis=0)).max() < bound


def test_generate_degenerate_size_law():
    spec = SyntheticSpec(hospital_count=7, min_size=13, max_size=13,
                         feature_dim=3, client_shift_strength=0.5,
                         base_positive_rate=0.4, seed=1)
    shards = partition_by_hospital(generate_synthetic(spec))
    assert [s.size for s in shards] == [13] * 7


def test_generate_sizes_within_bounds():
    spec = SyntheticSpec(hospital_count=40, min_size=5, max_size=500,
                         feature_dim=3, client_shift_strength=0.5,
                         base_positive_rate=0.4, seed=6)
    shards = partition_by_hospital(generate_synthetic(spec))
    assert len(shards) == 40
    assert all(5 <= s.size <= 500 for s in shards)


def test_generate_positive_rate_calibrated():
    spec = SyntheticSpec(hospital_count=10, min_size=600, max_size=600,
                         feature_dim=8, client_shift_strength=0.5,
                         base_positive_rate=0.3, seed=17)
    ds = generate_synthetic(spec)
    assert len(ds) >= 5000
    assert abs(ds.labels().mean() - 0.3) < 0.05


def test_generate_deterministic():
    spec = SyntheticSpec(hospital_count=5, min_size=10, max_size=30,
                         feature_dim=4, client_shift_strength=0.7,
                         base_positive_rate=0.25, seed=33)
    a = generate_synthetic(spec)
    b = generate_synthetic(spec)
    np.testing.assert_array_equal(a.feature_matrix(), b.feature_matrix())
    np.testing.assert_array_equal(a.labels(), b.labels())


def test_generate_shift_strength_controls_mean_norm():
    spec = SyntheticSpec(hospital_count=3, min_size=3000, max_size=3000,
                         feature_dim=5, client_shift_strength=2.0,
                         base_positive_rate=0.3, seed=9)
    shards = partition_by_hospital(generate_synthetic(spec))
    for shard in shards:
        norm = np.linalg.norm(shard.feature_matrix().mean(axis=0))
        assert norm == pytest.approx(2.0, abs=0.15)


# ---------------------------------------------------------------- invariants


def test_dataset_rejects_duplicate_stay_ids():
    with pytest.raises(IntegrityError):
        make_dataset([(1, 7, [0.0, 0.0], 0), (2, 7, [1.0, 1.0], 1)])


def test_dataset_rejects_nonfinite_features():
    with pytest.raises(IntegrityError):
        make_dataset([(1, 0, [np.inf, 0.0], 0)])


def test_dataset_rejects_wrong_width():
    with pytest.raises(IntegrityError):
        make_dataset([(1, 0, [1.0, 2.0, 3.0], 0)])


def test_shard_rejects_foreign_records():
    from fedsim.data import ClientShard
    with pytest.raises(IntegrityError):
        ClientShard(1, [make_record(2, 0, [1.0], 0)])


def test_synthetic_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(0, 1, 2, 3, 0.5, 0.3, 0)
    with pytest.raises(ValueError):
        SyntheticSpec(1, 5, 2, 3, 0.5, 0.3, 0)
    with pytest.raises(ValueError):
        SyntheticSpec(1, 1, 2, 3, 0.5, 1.5, 0)
