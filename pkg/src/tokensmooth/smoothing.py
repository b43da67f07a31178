"""Risk -> scale factor mapping and the logit-sign analysis behind it."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ValidationError

# within this distance of 1 the log ratio is replaced by its limit (the linear map)
SMOOTHNESS_EPS = 1e-6


@dataclass(frozen=True)
class SmoothingParams:
    min_scale: float = 0.5
    smoothness: float = 10.0

    def __post_init__(self):
        if not (0.0 < self.min_scale <= 1.0):
            raise ConfigError(f"min_scale must lie in (0, 1], got {self.min_scale}")
        if not (self.smoothness > 0.0 and math.isfinite(self.smoothness)):
            raise ConfigError(f"smoothness must be a positive finite number, got {self.smoothness}")


def scale_factor(risk: float, params: SmoothingParams) -> float:
    """S = 1 - (1 - min_scale) * log(1 + (smoothness - 1) * risk) / log(smoothness)."""
    if not (0.0 <= risk <= 1.0):
        raise ValidationError(f"risk must lie in [0, 1], got {risk}")
    m, s = params.min_scale, params.smoothness
    if abs(s - 1.0) <= SMOOTHNESS_EPS:
        frac = risk
    else:
        frac = math.log1p((s - 1.0) * risk) / math.log1p(s - 1.0)
    S = 1.0 - (1.0 - m) * frac
    return min(max(S, m), 1.0)


def emit_curve(params: SmoothingParams, steps: int) -> list[tuple[float, float]]:
    if steps < 2:
        raise ConfigError("steps must be >= 2")
    return [(r, scale_factor(r, params)) for r in np.linspace(0.0, 1.0, steps).tolist()]


def write_curve_csv(rows, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["risk", "scale"])
    for r, s in rows:
        w.writerow([repr(r), repr(s)])


def _softmax_at(logits: np.ndarray, index: int) -> float:
    z = logits - logits.max()
    e = np.exp(z)
    return float(e[index] / e.sum())


def softmax_shift(logits: Sequence[float], scaled_index: int, S: float) -> tuple[float, float]:
    """Probability of ``scaled_index`` before and after multiplying its logit by ``S``."""
    x = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(x)) or not math.isfinite(S):
        raise ValidationError("logits and scale must be finite")
    if not (0.0 < S <= 1.0):
        raise ValidationError(f"scale must lie in (0, 1], got {S}")
    before = _softmax_at(x, scaled_index)
    if S == 1.0:
        return before, before
    y = x.copy()
    y[scaled_index] *= S
    return before, _softmax_at(y, scaled_index)
