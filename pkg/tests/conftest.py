import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sgdlab.instances import l1, lms3, q1  # noqa: E402


@pytest.fixture
def Q1():
    return q1()


@pytest.fixture
def L1():
    return l1()


@pytest.fixture
def LMS3():
    return lms3()
