"""Poisson and Gamma GLMs with log link, fitted by IRLS."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special
from scipy import stats as sps

from ..errors import GlmOverflow, NotConverged

FAMILIES = ("poisson", "gamma")
_MAX_HALVINGS = 30
_STD_TOL = 1e-3


class StandardizationWarning(UserWarning):
    """A predictor column is not centred and scaled."""


@dataclass
class GlmFit:
    family: str
    names: list[str]
    coef: np.ndarray
    se: np.ndarray
    z: np.ndarray
    p: np.ndarray
    deviance: float
    null_deviance: float
    aic: float
    llf: float
    pseudo_r2: float
    converged: bool
    n: int
    n_iter: int
    dispersion: float
    fitted: np.ndarray = field(repr=False)
    deviance_history: list[float] = field(default_factory=list, repr=False)
    link: str = "log"

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "link": self.link,
            "n": self.n,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "deviance": self.deviance,
            "null_deviance": self.null_deviance,
            "aic": self.aic,
            "pseudo_r2": self.pseudo_r2,
            "dispersion": self.dispersion,
            "terms": [
                {"name": nm, "coef": float(c), "se": float(s), "z": float(zz), "p": float(pp)}
                for nm, c, s, zz, pp in zip(self.names, self.coef, self.se, self.z, self.p)
            ],
        }


def deviance(y: np.ndarray, mu: np.ndarray, family: str) -> float:
    if family == "poisson":
        return float(2 * np.sum(special.xlogy(y, y) - special.xlogy(y, mu) - (y - mu)))
    return float(2 * np.sum(-np.log(y / mu) + (y - mu) / mu))


def _irls_weights(mu, family):
    # (dmu/deta)^2 / V(mu) with dmu/deta = mu
    return mu if family == "poisson" else np.ones_like(mu)


@dataclass
class _Irls:
    beta: np.ndarray
    mu: np.ndarray
    deviance: float
    history: list[float]
    n_iter: int
    converged: bool


def _irls(y, X, offset, family, max_iter, tol) -> _Irls:
    mu = (y + y.mean()) / 2.0
    eta = np.log(mu)
    beta = None
    dev_old = deviance(y, mu, family)
    history: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = _irls_weights(mu, family)
        z = (eta - offset) + (y - mu) / mu
        sw = np.sqrt(w)
        step, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
        for _ in range(_MAX_HALVINGS + 1):
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                eta_new = offset + X @ step
                mu_new = np.exp(eta_new)
                dev_new = deviance(y, mu_new, family)
            ok = math.isfinite(dev_new) and np.all(np.isfinite(mu_new)) and np.all(mu_new > 0)
            if ok and (beta is None or dev_new <= dev_old * (1 + 1e-12) + 1e-12):
                break
            if beta is None:
                raise GlmOverflow("initial IRLS step produced a non-finite deviance")
            step = (beta + step) / 2.0
        else:
            raise GlmOverflow("step halving failed to reduce the deviance")
        beta, eta, mu = step, eta_new, mu_new
        history.append(dev_new)
        if abs(dev_old - dev_new) / (abs(dev_new) + 0.1) < tol:
            converged = True
            dev_old = dev_new
            break
        dev_old = dev_new
    return _Irls(beta, mu, dev_old, history, it, converged)


def _gamma_profile_llf(y, mu, dev) -> float:
    """Gamma log-likelihood with the shape at its maximum given ``mu``.

    The profiled shape nu solves log(nu) - digamma(nu) = D / (2n).
    """
    n = y.size
    target = dev / (2 * n)
    if target <= 0:
        return math.inf
    f = lambda nu: math.log(nu) - special.digamma(nu) - target
    nu = optimize.brentq(f, 1e-10, 1e15, xtol=1e-14, rtol=1e-14, maxiter=500)
    return float(np.sum(nu * np.log(nu / mu) + (nu - 1) * np.log(y) - nu * y / mu
                        - special.gammaln(nu)))


def _check_standardized(X, names):
    for j, nm in enumerate(names):
        col = X[:, j]
        if abs(col.mean()) > _STD_TOL or not (
                abs(col.std(ddof=1) - 1) < _STD_TOL or abs(col.std(ddof=0) - 1) < _STD_TOL):
            warnings.warn(f"predictor {nm!r} is not standardized (mean {col.mean():.3g}, "
                          f"sd {col.std(ddof=1):.3g})", StandardizationWarning, stacklevel=3)


def fit_glm(y, X=None, family: str = "poisson", max_iter: int = 100, tol: float = 1e-8,
            names=None, offset=None, check_standardized: bool = True) -> GlmFit:
    """Fit a log-link Poisson or Gamma GLM with an intercept.

    ``X`` holds the predictors only (n x p, p may be 0).  Standard errors come
    from the observed information; for Gamma they are scaled by the Pearson
    dispersion.  Gamma AIC uses the likelihood profiled over the shape and
    counts it as a parameter.  ``pseudo_r2`` is 1 - deviance / null deviance,
    where the null deviance is the deviance of the intercept-only fit.
    """
    family = family.lower()
    if family not in FAMILIES:
        raise ValueError(f"family must be one of {FAMILIES}")
    y = np.asarray(y, dtype=float).reshape(-1)
    n = y.size
    X = np.zeros((n, 0)) if X is None else np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != n:
        raise ValueError(f"X has {X.shape[0]} rows, y has {n}")
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(X.shape[1])]
    offset = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("y contains non-finite values")
    if family == "gamma" and np.any(y <= 0):
        raise ValueError("Gamma GLM requires y > 0")
    if family == "poisson" and np.any(y < 0):
        raise ValueError("Poisson GLM requires y >= 0")
    if check_standardized and X.shape[1]:
        _check_standardized(X, names)

    design = np.column_stack([np.ones(n), X])
    p = design.shape[1]
    res = _irls(y, design, offset, family, max_iter, tol)
    if X.shape[1] == 0:
        null = res
    else:
        null = _irls(y, design[:, :1], offset, family, max_iter, tol)

    mu = res.mu
    if family == "poisson":
        dispersion = 1.0
        info = design.T @ (design * mu[:, None])
        llf = float(np.sum(special.xlogy(y, mu) - mu - special.gammaln(y + 1)))
        aic = -2 * llf + 2 * p
    else:
        resid = (y - mu) / mu
        dispersion = float(np.sum(resid ** 2) / (n - p)) if n > p else math.nan
        info = design.T @ (design * (y / mu)[:, None])
        llf = _gamma_profile_llf(y, mu, res.deviance)
        aic = -2 * llf + 2 * (p + 1)
    try:
        cov = dispersion * np.linalg.inv(info)
        se = np.sqrt(np.diag(cov))
    except np.linalg.LinAlgError:
        se = np.full(p, math.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        zval = res.beta / se
    pval = 2 * sps.norm.sf(np.abs(zval))
    pseudo = 1.0 - res.deviance / null.deviance if null.deviance > 0 else 0.0

    fit = GlmFit(family=family, names=["const"] + names, coef=res.beta, se=se, z=zval, p=pval,
                 deviance=res.deviance, null_deviance=null.deviance, aic=float(aic),
                 llf=llf, pseudo_r2=float(pseudo), converged=res.converged, n=n,
                 n_iter=res.n_iter, dispersion=dispersion, fitted=mu,
                 deviance_history=res.history)
    if not res.converged:
        raise NotConverged(f"IRLS did not converge in {max_iter} iterations", fit=fit)
    return fit
