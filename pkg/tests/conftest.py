import os

from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from gaussvasicek.kernels import Family, Kernel

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# the parameter sets exercised by the acceptance suite
ACCEPTANCE_KERNELS = [
    Kernel(Family.EX1, H=0.3),
    Kernel(Family.EX1, H=0.75),
    Kernel(Family.EX2, Hp=0.5, K=0.5),
    Kernel(Family.EX3, H=0.25),
    Kernel(Family.EX4, H=0.25),
    Kernel(Family.EX5, Hp=0.5, K=0.5),
    Kernel(Family.EX5, Hp=0.5, K=1.5),
    Kernel(Family.EX6, H=0.4, a=1.0, b=2.0),
    Kernel(Family.EX7, H=0.25),
]
ALL_KERNELS = ACCEPTANCE_KERNELS + [Kernel(Family.FBM, H=0.3), Kernel(Family.FBM, H=0.7)]


def kernel_id(k):
    return str(k)


_unit = st.floats(0.05, 0.95)
_small = st.floats(0.05, 0.45)


@st.composite
def kernels(draw, families=None):
    """Random admissible kernels, kept away from parameter-range edges."""
    fam = draw(st.sampled_from(families or list(Family)))
    if fam is Family.EX1:
        H = draw(st.one_of(st.floats(0.05, 0.45), st.floats(0.55, 0.95)))
        return Kernel(fam, H=H)
    if fam in (Family.EX3, Family.EX4, Family.EX7):
        return Kernel(fam, H=draw(_small))
    # product families: keep the effective index H'K at least 0.05 as well
    if fam is Family.EX2:
        Hp = draw(st.floats(0.06, 0.95))
        return Kernel(fam, Hp=Hp, K=draw(st.floats(0.05 / Hp, 0.95)))
    if fam is Family.EX5:
        Hp = draw(_unit)
        K = draw(st.floats(0.05 / Hp, min(1.95, 0.95 / Hp)))
        return Kernel(fam, Hp=Hp, K=K)
    if fam is Family.EX6:
        a = draw(st.floats(-3, 3))
        b = draw(st.floats(-3, 3).filter(lambda b: abs(a) + abs(b) > 0.1))
        return Kernel(fam, H=draw(_unit), a=a, b=b)
    return Kernel(fam, H=draw(_unit))


# PASS/FAIL lines from the acceptance suite, repeated after the test run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
