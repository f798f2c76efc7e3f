"""Closed-form regret and delay bounds used to check simulated runs."""
import math
from typing import NamedTuple


def serial_psi_bound(D: float, L: float, sigma2: float, m: float) -> float:
    """Serial variance-based regret bound ``2 D^2 L + 2 D sigma sqrt(m)``."""
    if m < 0:
        raise ValueError("m must be >= 0")
    return 2.0 * D * D * L + 2.0 * D * math.sqrt(sigma2) * math.sqrt(m)


def dmb_regret_bound(b: int, mu: int, D: float, L: float, sigma2: float, m: int) -> float:
    """Expected regret of synchronous mini-batching with ``mu`` dropped inputs per batch."""
    if b < 1 or mu < 0:
        raise ValueError("need b >= 1 and mu >= 0")
    period = b + mu
    return period * serial_psi_bound(D, L, sigma2 / b, math.ceil(m / period))


def mawo_mu_bound(M: float, T: float, tau_c: float, tau_u: float) -> float:
    """Inputs dropped per master update: ``M (T + 2 tau_c + tau_u)``."""
    if min(M, T, tau_c, tau_u) < 0:
        raise ValueError("arguments must be non-negative")
    return M * (T + 2.0 * tau_c + tau_u)


def propagation_bound(t: float, d_prime: int) -> float:
    """Time for a predictor to reach every good node: ``(t + 2) d'``."""
    return (t + 2.0) * d_prime


def good_period_examples_bound(b: int, t: float, d_prime: int, M: float) -> float:
    """Examples after which every good node has one more update: ``b + 2 (t+2) d' M``."""
    return b + 2.0 * (t + 2.0) * d_prime * M


class AdmbBound(NamedTuple):
    exact: float
    closed_form: float
    period: float


def admb_regret_bound(b, t, d_prime, M, D, L, sigma2, m) -> AdmbBound:
    """Regret over examples in good periods, as a sum and its closed-form cap.

    The sum runs over ``ceil(m / mu)`` periods with ``mu = b + 2 (t+2) d' M``;
    the closed form uses the natural logarithm.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    mu = good_period_examples_bound(b, t, d_prime, M)
    n = math.ceil(m / mu)
    exact = math.fsum(mu / j * serial_psi_bound(D, L, sigma2 / b, j) for j in range(1, n + 1))
    sigma = math.sqrt(sigma2)
    closed = (2.0 * D * D * L * mu * (1.0 + math.log(m))
              + 4.0 * D * sigma * math.sqrt((1.0 + 2.0 * (t + 2.0) * d_prime * M / b) * m))
    return AdmbBound(exact, closed, mu)


def batch_size_policy(m: int, rho: float) -> int:
    """Batch size ``ceil(m ** rho)``, at least 1, for ``rho`` in (0, 1/2)."""
    if not 0.0 < rho < 0.5:
        raise ValueError("rho must lie in the open interval (0, 1/2)")
    if m <= 1:
        return 1
    # guard against 10.000000000000002 style overshoot
    return max(1, math.ceil(round(m ** rho, 9)))
