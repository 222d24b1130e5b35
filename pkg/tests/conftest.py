import pytest

import progda.model as model_mod


@pytest.fixture(autouse=True)
def strict_edge_checks():
    """Assert edge-matrix invariants on every forward pass in the test build."""
    previous = model_mod.STRICT_EDGE_CHECKS
    model_mod.STRICT_EDGE_CHECKS = True
    yield
    model_mod.STRICT_EDGE_CHECKS = previous
