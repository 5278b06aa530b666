"""Shared fixtures: cones and foliation tables are expensive, build them once."""
import pytest

from cylcone.cone_spectra import make_cone
from cylcone.foliation import build_foliation


@pytest.fixture(scope="session")
def cone33():
    return make_cone(3, 3)


@pytest.fixture(scope="session")
def cone24():
    return make_cone(2, 4)


@pytest.fixture(scope="session")
def table33(cone33):
    return build_foliation(cone33)
