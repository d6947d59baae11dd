import pytest

from xsmesh.xsdata import generate_material


@pytest.fixture(scope="session")
def material20():
    """Desk-scale material: 20 nuclides, 1,000 gridpoints, 5 channels."""
    return generate_material(1, 20, 1000, 5)


@pytest.fixture(scope="session")
def big_material():
    """Full problem shape: 250 nuclides, 10,000 gridpoints, 5 channels."""
    return generate_material(1, 250, 10000, 5)
