import numpy as np
import pytest

from wscoreset.experiment import gaussian_blobs
from wscoreset.metric import Dataset


@pytest.fixture
def line10():
    return Dataset(points=np.arange(10.0)[:, None])


@pytest.fixture
def blobs60():
    return gaussian_blobs([30, 30], seed=0)


@pytest.fixture
def grouped60():
    return gaussian_blobs([30, 30], seed=0, group_spec={"g": 2})
