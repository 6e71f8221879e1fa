from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..exceptions import ParameterError, ShapeError
from ..models.base import UNCONDITIONAL, BaseDenoiser, Condition
from ..numerics import Grid


@dataclass(frozen=True)
class GuidanceSpec:
    """
    Classifier-free guidance with an optional style term:
    `eps(0) + s (eps(c) - eps(0)) + s_style (eps(c_style) - eps(c))`.
    """

    s: float = 1.0
    s_style: float = 0.0
    style: Optional[str] = None

    def __post_init__(self):
        if self.s_style != 0.0 and not self.style:
            raise ParameterError("`s_style` needs a `style` label")

    @property
    def style_condition(self) -> Optional[Condition]:
        return Condition.style_label(self.style) if self.style else None


NO_GUIDANCE = GuidanceSpec()


def guided_eps(eps_uncond, eps_cond, eps_style, g: GuidanceSpec) -> Grid:
    """
    Evaluated as `(1 - s) eps(0) + (s - s_style) eps(c) + s_style eps(c_style)`,
    skipping zero-coefficient terms so the reductions are exact. Inputs whose
    coefficient is zero may be `None`.
    """
    terms = [(1.0 - g.s, eps_uncond, "unconditional"), (g.s - g.s_style, eps_cond, "conditional")]
    if g.s_style != 0.0:
        if eps_style is None:
            raise ParameterError("`s_style` is nonzero but no style prediction was given")
        terms.append((g.s_style, eps_style, "style"))
    result = None
    for coef, eps, what in terms:
        if coef == 0.0:
            continue
        if eps is None:
            raise ParameterError(f"Guidance needs the {what} prediction")
        eps = np.asarray(eps, dtype=np.float64)
        if result is not None and eps.shape != result.shape:
            raise ShapeError(f"Guidance inputs have different shapes {eps.shape}, {result.shape}")
        term = eps if coef == 1.0 else coef * eps
        result = term if result is None else result + term
    assert result is not None
    return np.array(result, dtype=np.float64)


def guided_prediction(
    model: BaseDenoiser, z_t, t: int, cond: Condition, g: GuidanceSpec = NO_GUIDANCE
) -> Grid:
    """
    Queries `model` only for the predictions `g` gives a nonzero weight.
    """
    if cond == UNCONDITIONAL:
        eps_uncond = model.predict_eps(z_t, t, UNCONDITIONAL)
        if g.s_style == 0.0:
            return eps_uncond
        eps_style = model.predict_eps(z_t, t, g.style_condition)
        return guided_eps(eps_uncond, eps_uncond, eps_style, g)
    eps_uncond = model.predict_eps(z_t, t, UNCONDITIONAL) if g.s != 1.0 else None
    eps_cond = model.predict_eps(z_t, t, cond) if g.s != g.s_style else None
    eps_style = (
        model.predict_eps(z_t, t, g.style_condition) if g.s_style != 0.0 else None
    )
    return guided_eps(eps_uncond, eps_cond, eps_style, g)
