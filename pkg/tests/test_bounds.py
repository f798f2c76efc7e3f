import math

import pytest

from robustdmb.bounds import (admb_regret_bound, batch_size_policy, dmb_regret_bound,
                              good_period_examples_bound, mawo_mu_bound, propagation_bound,
                              serial_psi_bound)


def test_serial_psi_by_hand():
    # 2*4*1 + 2*2*1*10
    assert serial_psi_bound(2.0, 1.0, 1.0, 100) == pytest.approx(48.0)
    assert serial_psi_bound(2.0, 1.0, 0.0, 10**6) == 8.0


def test_dmb_bound_matches_definition():
    b, mu, D, L, s2, m = 32, 10, 2.0, 1.0, 2.0, 100_000
    n = math.ceil(m / (b + mu))
    want = (b + mu) * (2 * D * D * L + 2 * D * math.sqrt(s2 / b) * math.sqrt(n))
    assert dmb_regret_bound(b, mu, D, L, s2, m) == pytest.approx(want, rel=1e-15)


def test_dmb_bound_with_no_drops_and_unit_batch_is_serial():
    assert dmb_regret_bound(1, 0, 2.0, 1.0, 3.0, 1000) == serial_psi_bound(2.0, 1.0, 3.0, 1000)


def test_dmb_bound_grows_with_mu():
    vals = [dmb_regret_bound(16, mu, 2.0, 1.0, 2.0, 10**5) for mu in range(0, 100, 7)]
    assert vals == sorted(vals)


def test_dmb_bound_rejects_bad_args():
    with pytest.raises(ValueError):
        dmb_regret_bound(0, 0, 1, 1, 1, 10)
    with pytest.raises(ValueError):
        dmb_regret_bound(4, -1, 1, 1, 1, 10)


def test_mawo_mu_bound():
    assert mawo_mu_bound(8, 1.0, 1.0, 0.0) == 24.0
    assert mawo_mu_bound(10, 2.0, 0.5, 0.25) == pytest.approx(32.5)
    with pytest.raises(ValueError):
        mawo_mu_bound(-1, 1, 1, 1)


def test_propagation_and_period():
    assert propagation_bound(1.0, 3) == 9.0
    assert good_period_examples_bound(32, 1.0, 3, 8) == 32 + 2 * 9 * 8


@pytest.mark.parametrize("m,rho,want", [(10**5, 0.3, 32), (10**4, 0.25, 10), (1, 0.3, 1),
                                        (2, 0.01, 2), (10**6, 0.49, 871)])
def test_batch_size_policy(m, rho, want):
    assert batch_size_policy(m, rho) == want


@pytest.mark.parametrize("rho", [0.0, 0.5, -0.1, 0.7])
def test_batch_size_policy_open_interval(rho):
    with pytest.raises(ValueError):
        batch_size_policy(1000, rho)


def test_admb_exact_sum_below_closed_form_when_m_at_least_period():
    for b in (1, 8, 64):
        for dp in (1, 3, 10):
            for m in (10**3, 10**5):
                ab = admb_regret_bound(b, 1.0, dp, 8, 2.0, 1.0, 2.0, m)
                if m >= ab.period:
                    assert ab.exact <= ab.closed_form


def test_admb_closed_form_can_fail_below_one_period():
    # a single example with a long period: the sum has one term of size mu * psi
    ab = admb_regret_bound(1, 1.0, 2, 8, 2.0, 1.0, 1.0, 1)
    assert ab.period > 4 and ab.exact > ab.closed_form


def test_admb_bound_uses_natural_log():
    ab = admb_regret_bound(4, 1.0, 1, 1, 1.0, 1.0, 0.0, 100)
    assert ab.closed_form == pytest.approx(2 * ab.period * (1 + math.log(100)))
