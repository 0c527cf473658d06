"""Logistic propensity scores and covariate balance diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

SCORE_CLIP = (0.01, 0.99)


@dataclass
class PropensityModel:
    """Fitted logistic model over standardized covariates.

    ``scores`` are the in-sample fitted probabilities clipped to the overlap
    window, ready for p/(1-p) control weighting.
    """

    names: list[str]
    coef: np.ndarray  # intercept first
    mean: np.ndarray
    sd: np.ndarray
    scores: np.ndarray
    converged: bool
    n_iter: int
    grad_norm: float = field(default=np.nan)
    clip: tuple = SCORE_CLIP

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        Z = (X - self.mean) / self.sd
        eta = self.coef[0] + Z @ self.coef[1:]
        p = _sigmoid(eta)
        return np.clip(p, *self.clip)


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    """Logistic function, stable for large |eta|."""
    out = np.empty_like(eta, dtype=float)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _check_separation(X: np.ndarray, y: np.ndarray, names: list[str]) -> None:
    for j, name in enumerate(names):
        t = X[y == 1, j]
        c = X[y == 0, j]
        if t.size and c.size and (t.min() > c.max() or t.max() < c.min()):
            raise ValueError(
                f"perfect separation: covariate '{name}' completely separates treated from control"
            )


def fit_propensity(
    covariates,
    treated_labels,
    max_iter: int = 100,
    tol: float = 1e-8,
    clip: tuple = SCORE_CLIP,
) -> PropensityModel:
    """Logistic regression of treatment on covariates via IRLS.

    Covariates are standardized internally. Scores are clipped to the
    overlap window ``clip`` (default ``[0.01, 0.99]``). Raises when a
    covariate perfectly separates the groups or the optimizer diverges.
    """
    if isinstance(covariates, pd.DataFrame):
        names = [str(c) for c in covariates.columns]
        X = covariates.to_numpy(dtype=float)
    else:
        X = np.asarray(covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        names = [f"x{j}" for j in range(X.shape[1])]
    y = np.asarray(treated_labels, dtype=float)
    if set(np.unique(y)) - {0.0, 1.0}:
        raise ValueError("treated labels must be binary 0/1")
    if y.sum() < 1 or (1 - y).sum() < 1:
        raise ValueError("need at least one treated and one control unit")

    _check_separation(X, y, names)

    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    Z = np.column_stack([np.ones(len(y)), (X - mean) / sd])

    beta = np.zeros(Z.shape[1])
    converged = False
    grad_norm = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        eta = Z @ beta
        p = _sigmoid(eta)
        grad = Z.T @ (y - p)
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm < tol:
            converged = True
            break
        w = np.maximum(p * (1.0 - p), 1e-10)
        H = (Z * w[:, None]).T @ Z
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        beta = beta + step
        if np.abs(beta).max() > 1e4:
            j = int(np.argmax(np.abs(beta[1:])))
            raise ValueError(
                f"perfect separation: coefficient for covariate '{names[j]}' diverged during fitting"
            )

    eta = Z @ beta
    p = _sigmoid(eta)
    if not converged and np.abs(beta).max() > 30:
        j = int(np.argmax(np.abs(beta[1:])))
        raise ValueError(
            f"perfect separation: coefficient for covariate '{names[j]}' diverged during fitting"
        )
    scores = np.clip(p, *clip)
    return PropensityModel(
        names=names,
        coef=beta,
        mean=mean,
        sd=sd,
        scores=scores,
        converged=converged,
        n_iter=it,
        grad_norm=grad_norm,
        clip=tuple(clip),
    )


def control_weights(scores: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Unit weight for treated rows, normalized p/(1-p) for controls."""
    labels = np.asarray(labels, dtype=bool)
    w = np.ones(len(scores))
    odds = scores[~labels] / (1.0 - scores[~labels])
    total = odds.sum()
    if total > 0:
        odds = odds * ((~labels).sum() / total)
    w[~labels] = odds
    return w


def balance_diagnostics(covariates, weights, treated_labels) -> pd.DataFrame:
    """Standardized mean differences per covariate, unweighted and weighted.

    SMD = (weighted mean_T − weighted mean_C) / pooled sd, the pooled sd
    taken from the unweighted groups. Covariates with zero pooled sd are
    flagged constant and given SMD 0.
    """
    if isinstance(covariates, pd.DataFrame):
        names = [str(c) for c in covariates.columns]
        X = covariates.to_numpy(dtype=float)
    else:
        X = np.asarray(covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        names = [f"x{j}" for j in range(X.shape[1])]
    y = np.asarray(treated_labels, dtype=bool)
    w = np.asarray(weights, dtype=float)
    if (w <= 0).any():
        raise ValueError("weights must be positive")

    rows = []
    for j, name in enumerate(names):
        xt, xc = X[y, j], X[~y, j]
        sd_pool = np.sqrt((xt.var(ddof=1) + xc.var(ddof=1)) / 2.0) if min(len(xt), len(xc)) > 1 else 0.0
        constant = sd_pool < 1e-12
        if constant:
            rows.append((name, 0.0, 0.0, True))
            continue
        smd_pre = (xt.mean() - xc.mean()) / sd_pool
        wt, wc = w[y], w[~y]
        mt = np.average(xt, weights=wt)
        mc = np.average(xc, weights=wc)
        rows.append((name, smd_pre, (mt - mc) / sd_pool, False))
    return pd.DataFrame(rows, columns=["covariate", "smd_pre", "smd_post", "constant"])
