import os
import sys

import pytest

_here = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, os.path.join(_here, "..", "..", "python"))


@pytest.fixture(scope="session")
def data_dir():
    d = os.environ.get("EIL_DATA_DIR")
    if not d or not os.path.isdir(d):
        pytest.skip("EIL_DATA_DIR does not point at prepared data")
    return d
