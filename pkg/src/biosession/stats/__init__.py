"""Statistical procedures: correlations, rank tests, diagnostics, GLMs."""

from .correlation import cohens_kappa, kappa_band, point_biserial, spearman
from .diagnostics import (DistributionDiagnostics, VifReport, diagnostics, qq_pairs,
                          remove_outliers, vif, vif_filter)
from .glm import GlmFit, StandardizationWarning, deviance, fit_glm
from .nonparametric import friedman, mann_whitney_u, wilcoxon_signed_rank
from .result import EXACT, NORMAL, TestResult

__all__ = [
    "EXACT", "NORMAL", "TestResult",
    "spearman", "point_biserial", "cohens_kappa", "kappa_band",
    "friedman", "wilcoxon_signed_rank", "mann_whitney_u",
    "remove_outliers", "diagnostics", "qq_pairs", "DistributionDiagnostics",
    "vif", "vif_filter", "VifReport",
    "fit_glm", "GlmFit", "deviance", "StandardizationWarning",
]
