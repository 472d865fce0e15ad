import numpy as np
import pytest

from fedsim.data import (Dataset, Record, SyntheticSpec, generate_synthetic,
                         partition_by_hospital, standardize, train_test_split)


def make_record(hospital_id, stay_id, features, label):
    return Record(hospital_id, stay_id, np.asarray(features, dtype=np.float64), label)


def make_dataset(rows, schema=("f0", "f1")):
    """rows: iterable of (hospital_id, stay_id, features, label)."""
    return Dataset(schema, [make_record(*row) for row in rows])


def toy_separable(n=200, seed=0):
    """Two linearly separable 2-d blobs with a deterministic margin."""
    rng = np.random.default_rng(seed)
    half = n // 2
    X = np.concatenate([
        rng.normal(loc=(-2.0, -2.0), scale=0.5, size=(half, 2)),
        rng.normal(loc=(2.0, 2.0), scale=0.5, size=(n - half, 2)),
    ])
    y = np.concatenate([np.zeros(half), np.ones(n - half)])
    return X, y


@pytest.fixture(scope="session")
def mixed_cohort():
    """20 hospitals sized 50-500, standardized 70/30 split."""
    spec = SyntheticSpec(hospital_count=20, min_size=50, max_size=500,
                         feature_dim=10, client_shift_strength=0.5,
                         base_positive_rate=0.3, seed=7)
    dataset = generate_synthetic(spec)
    shards = partition_by_hospital(dataset)
    train_shards, test_set = train_test_split(shards, 0.3, seed=1)
    return standardize(train_shards, test_set)[:2]


@pytest.fixture(scope="session")
def small_hospital_cohort():
    """30 hospitals sized 5-50, standardized 70/30 split."""
    spec = SyntheticSpec(hospital_count=30, min_size=5, max_size=50,
                         feature_dim=10, client_shift_strength=0.5,
                         base_positive_rate=0.3, seed=13)
    dataset = generate_synthetic(spec)
    shards = partition_by_hospital(dataset)
    train_shards, test_set = train_test_split(shards, 0.3, seed=1)
    return standardize(train_shards, test_set)[:2]
