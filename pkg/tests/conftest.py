import pytest
from hypothesis import HealthCheck, settings

from tests.helpers import reference_w

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def w_ref():
    return reference_w()
