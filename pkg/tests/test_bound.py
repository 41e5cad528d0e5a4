import math

import pytest

from snds.bound import bound_diagnostic, optimal_dvc
from snds.errors import DomainError


def test_optimal_dvc_of_e():
    assert optimal_dvc(math.e) == pytest.approx(1.0)


def test_optimal_dvc_of_thousand_e():
    assert optimal_dvc(2718.2818) == pytest.approx(1000.0, abs=1e-3)


def test_gap_term_peaks_at_stationary_point():
    # (d ln(N/d) - ln delta)/N is concave in d, so N/e is its maximum.
    values = [bound_diagnostic(1000, d, 0.05).gap_term for d in (300, 1000 / math.e, 450)]
    assert values[1] > values[0] and values[1] > values[2]
    assert values == pytest.approx([0.364188, 0.370875, 0.362324], abs=1e-6)


def test_bound_is_square_root():
    v = bound_diagnostic(500, 20, 0.1)
    assert v.bound == pytest.approx(math.sqrt(v.gap_term))
    assert v.gap_term == pytest.approx((20 * math.log(25) - math.log(0.1)) / 500)


@pytest.mark.parametrize("args", [(0, 1, 0.5), (10, 0, 0.5), (10, 1, 0.0), (10, 1, 1.0)])
def test_domain(args):
    with pytest.raises(DomainError):
        bound_diagnostic(*args)
