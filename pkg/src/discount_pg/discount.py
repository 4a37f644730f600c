"""Discount-factor growth rules computed from cost values.

With ``s`` the smallest eigenvalue of ``Q + K'RK`` and ``J_hat`` an estimate of
the discounted cost, the rate is ``alpha = s / (2 J_hat - s)`` and the new
discount is ``(1 + alpha) * gamma``. Doubling the estimate in the denominator
absorbs an estimation error of up to half the true cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import EstimateBelowBoundError


@dataclass(frozen=True)
class DiscountStep:
    gamma_old: float
    alpha: float
    gamma_new: float
    sigma_term: float
    j_hat: float


def update_rate(j_hat: float, sigma_term: float) -> float:
    if not math.isfinite(j_hat):
        raise ValueError(f"cost estimate is not finite ({j_hat}); refusing to grow the discount")
    denom = 2.0 * j_hat - sigma_term
    if denom <= 0:
        raise EstimateBelowBoundError(
            f"estimate {j_hat:.6g} is below half the stage-cost floor {sigma_term:.6g}"
        )
    return sigma_term / denom


def update_rate_noise(j_add: float, sigma_term: float, gamma: float) -> float:
    """Rate for the additive-noise cost, which equals ``gamma/(1-gamma)`` times the initial-state cost."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("additive-noise rate needs 0 < gamma < 1")
    if not math.isfinite(j_add):
        raise ValueError(f"cost estimate is not finite ({j_add}); refusing to grow the discount")
    denom = 2.0 * (1.0 / gamma - 1.0) * j_add - sigma_term
    if denom <= 0:
        raise EstimateBelowBoundError(
            f"rescaled estimate {(1.0 / gamma - 1.0) * j_add:.6g} is below half the floor {sigma_term:.6g}"
        )
    return sigma_term / denom


def lower_bound_rate(sigma_q: float, j_bar: float, gamma0: float | None = None) -> float:
    """Uniform floor on ``alpha`` when every cost along the run stays below ``j_bar``.

    Without ``gamma0`` this is the initial-state form ``s / (3 J_bar - s)``.
    With ``gamma0`` it is the additive-noise form ``s / (2 (1/g0 - 1) J_bar - s)``.
    """
    if gamma0 is None:
        if not j_bar > sigma_q > 0:
            raise ValueError("need j_bar > sigma_q > 0")
        return sigma_q / (3.0 * j_bar - sigma_q)
    if not 0.0 < gamma0 < 1.0:
        raise ValueError("need 0 < gamma0 < 1")
    denom = 2.0 * (1.0 / gamma0 - 1.0) * j_bar - sigma_q
    if denom <= 0:
        raise ValueError("rate floor undefined: denominator is not positive")
    return sigma_q / denom


def discount_step(gamma: float, j_hat: float, sigma_term: float, additive_noise: bool = False) -> DiscountStep:
    if additive_noise:
        alpha = update_rate_noise(j_hat, sigma_term, gamma)
    else:
        alpha = update_rate(j_hat, sigma_term)
    return DiscountStep(gamma, alpha, (1.0 + alpha) * gamma, sigma_term, j_hat)
