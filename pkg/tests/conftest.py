import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_drone():
    from trustdsem.cohortsim import drone_config, gen_drone_cohort
    return gen_drone_cohort(drone_config(n_participants=24, seed=11))


@pytest.fixture(scope="session")
def small_drone_fit(small_drone):
    from trustdsem.estimation import em_fit
    from trustdsem.pathmodel import build_paper_diagram
    return em_fit(build_paper_diagram(), small_drone)
