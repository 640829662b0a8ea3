import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from problem import interval, l_shape, make_order, rectangle  # noqa: E402


@pytest.fixture
def unit_interval():
    return interval(0.0, 1.0)


@pytest.fixture
def unit_square():
    return rectangle(0.0, 1.0, 0.0, 1.0)


@pytest.fixture
def lshape():
    return l_shape()


@pytest.fixture(params=[0.25, 0.5, 0.75], ids=lambda s: f"s={s}")
def order(request):
    return make_order(request.param)


@pytest.fixture
def half():
    return make_order(0.5)
