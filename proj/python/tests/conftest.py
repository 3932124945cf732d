import pytest

bdgp = pytest.importorskip("bdgp")
