from dataclasses import replace

import pytest
from hypothesis import settings

from pemfreq.scenario import load_bundled

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def small_scenario(n_devices=4000, eta_max=1.0, fast_init=True, **kw):
    s = load_bundled().subsampled(n_devices).with_eta_max(eta_max)
    s = replace(s, simulation=replace(s.simulation, fast_init=fast_init, assumption_policy="ignore"))
    return replace(s, **kw) if kw else s


@pytest.fixture
def reference_scenario():
    return load_bundled()
