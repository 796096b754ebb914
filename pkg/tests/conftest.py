import sys
from pathlib import Path

import pytest
from hypothesis import settings

from cdblt.data import ImbalanceProfile, make_exponential_longtail, make_gaussian_blobs, split_balanced

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def blob_splits(num_classes=4, dims=5, n_max=120, mu=0.1, val=20, test=30, sep=3.0, seed=0):
    pool = make_gaussian_blobs(num_classes, dims, [n_max + val + test] * num_classes, sep, seed)
    validation, rest = split_balanced(pool, val, seed + 1)
    test_set, rest = split_balanced(rest, test, seed + 2)
    train = make_exponential_longtail(rest, ImbalanceProfile("exponential", mu=mu, n_max=n_max), seed + 3)
    return {"train": train, "validation": validation, "test": test_set}


@pytest.fixture(scope="session")
def small_splits():
    return blob_splits()
