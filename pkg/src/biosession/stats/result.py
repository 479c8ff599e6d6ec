from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class TestResult:
    """Outcome of a hypothesis test or agreement measure.

    ``statistic_name`` is one of rho, r_pb, kappa, chi2, W, Z, U.  ``z`` holds
    the normal deviate when one was computed (Wilcoxon reports both W and Z).
    """

    __test__ = False  # keep pytest from collecting this class

    statistic_name: str
    statistic: float
    p_value: float
    n: int
    method: str  # "Exact" or "NormalApprox"
    n_per_group: tuple[int, ...] | None = None
    z: float | None = None
    alternative: str = "two-sided"

    def __post_init__(self):
        if not (0.0 <= self.p_value <= 1.0) and not math.isnan(self.p_value):
            object.__setattr__(self, "p_value", min(1.0, max(0.0, self.p_value)))


EXACT = "Exact"
NORMAL = "NormalApprox"
