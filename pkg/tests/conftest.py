import math

import pytest

from hdcycle.model import CycleSpec


def closed_form_return(spec, k, n, x):
    """Return map written out by hand, without any domain bookkeeping."""
    y = spec.sign_t2 * (x - 1.0) - 1.0
    y = spec.lam ** n * y
    y = spec.sign_t1 * y + spec.t
    return spec.beta ** k * y


def closed_form_fixed_point(spec, k, n):
    a = spec.beta ** k * spec.sign_t1 * spec.sign_t2 * spec.lam ** n
    b = closed_form_return(spec, k, n, 0.0)
    if a == 1.0:
        return None, a
    return b / (1.0 - a), a


@pytest.fixture
def dyadic():
    return CycleSpec(0.5, 2.0)


@pytest.fixture
def dyadic_t():
    return CycleSpec(0.5, 2.0, t=0.5 ** 4)


def close(a, b, tol=1e-12):
    return math.isclose(a, b, rel_tol=tol, abs_tol=tol)
