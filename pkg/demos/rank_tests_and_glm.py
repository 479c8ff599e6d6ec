"""Exact rank tests and a log-link GLM on simulated data.

Small samples get exact p-values from the rank-sum distributions; the
GLM recovers planted coefficients within their standard errors.

Run with ``python3 demos/rank_tests_and_glm.py``.
"""
import numpy as np

from biosession.stats import fit_glm, friedman, mann_whitney_u, spearman, wilcoxon_signed_rank
from biosession.synth import gen_glm_dataset

rng = np.random.default_rng(0)
before = rng.normal(80, 5, 10)
after = before - rng.normal(3, 2, 10)
w = wilcoxon_signed_rank(before, after)
print(f"Wilcoxon: W = {w.statistic:g}, p = {w.p_value:.4f} ({w.method})")

a, b = rng.normal(0, 1, 6), rng.normal(1.5, 1, 7)
u = mann_whitney_u(a, b)
print(f"Mann-Whitney: U = {u.statistic:g}, p = {u.p_value:.4f} ({u.method})")

blocks = rng.normal(size=(8, 3)) + np.array([0.0, 0.5, 1.0])
f = friedman(blocks)
print(f"Friedman: chi2 = {f.statistic:.3f}, p = {f.p_value:.4f}")

x = np.arange(7.0)
r = spearman(x, x ** 2 + rng.normal(0, 3, 7))
print(f"Spearman: rho = {r.statistic:.3f}, p = {r.p_value:.4f} ({r.method})")

for family in ("poisson", "gamma"):
    ds = gen_glm_dataset(family, (0.5, 0.3, -0.2, 0.1), n=500, seed=3)
    fit = fit_glm(ds.y, ds.X, family=family)
    print(f"\n{family} GLM (AIC {fit.aic:.1f}, pseudo-R2 {fit.pseudo_r2:.3f})")
    for name, c, se, true in zip(fit.names, fit.coef, fit.se, ds.beta):
        print(f"  {name:>10s}: {c:+.3f} +/- {se:.3f}  (planted {true:+.2f})")
