import os

from hypothesis import HealthCheck, settings

# One deterministic profile for the whole suite: no wall-clock deadlines in
# CI containers, reproducible example choice.
settings.register_profile(
    "suite",
    deadline=None,
    derandomize=True,
    max_examples=int(os.environ.get("HYPOTHESIS_MAX_EXAMPLES", "60")),
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")
