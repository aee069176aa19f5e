"""Pattern-mixture multivariate lognormal model and its conjugate full conditionals.

Within holdings pattern ``i`` the log amounts of the held components are
multivariate normal with mean ``beta_{i,l} + x_l' b_l`` and covariance
``Sigma_i``. The reference pattern's effects ``beta`` are structurally
zero. Under the flat prior on ``b`` and the Jeffreys-type prior
``prod_i |Sigma_i|^{-(p_i+1)/2}``, ``b`` given everything else is normal
and each ``Sigma_i^{-1}`` is Wishart.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data_model import COMPONENT_NAMES, pattern_flags
from .variates import SPDError, mvn, wishart


class IdentificationError(ValueError):
    """The stacked design matrix does not have full column rank."""


class PatternSizeError(ValueError):
    """A holdings pattern has too few households for its covariance."""


@dataclass
class ModelParams:
    """Stacked coefficients ``b`` and one covariance per pattern (keyed by pattern index)."""

    b: np.ndarray
    sigma: dict = field(default_factory=dict)

    def __post_init__(self):
        for i, S in self.sigma.items():
            try:
                np.linalg.cholesky(S)
            except np.linalg.LinAlgError as exc:
                raise SPDError(f"Sigma of pattern {i} is not positive definite") from exc


@dataclass(frozen=True)
class CoefficientPosterior:
    mean: np.ndarray
    covariance: np.ndarray


@dataclass
class PatternBlock:
    """Households of one pattern: design rows per held component and fixed Gram blocks."""

    pattern: int
    rows: np.ndarray  # household indices into the full sample
    components: tuple  # held components, ascending
    Z: np.ndarray  # (p, m_i, d) design rows of each held component
    gram: np.ndarray  # (p, p, d, d) Z_a' Z_b

    @property
    def m(self):
        return len(self.rows)

    @property
    def p(self):
        return len(self.components)


class PatternModel:
    """Design matrices of the stacked regression, built once per dataset.

    Parameters
    ----------
    covariates : list of ndarray
        ``covariates[l]`` is ``(m, dim_l)`` with a leading column of ones;
        rows of households not holding ``l`` are ignored.
    holdings : ndarray (m, L) of 0/1
    patterns : ndarray (m,)
        1-based pattern index of each household.
    standardize : bool
        Center and scale non-constant covariate columns internally.
    """

    def __init__(self, covariates, holdings, patterns, standardize=True):
        holdings = np.asarray(holdings, dtype=bool)
        patterns = np.asarray(patterns, dtype=int)
        m, L = holdings.shape
        self.L = L
        self.m = m
        self.holdings = holdings
        self.patterns = patterns
        self.present = tuple(int(i) for i in np.unique(patterns))
        # effects are measured against pattern 1 (everything held) when present
        self.reference = 1 if 1 in self.present else self.present[0]

        self.center, self.scale, self.dims = [], [], []
        std_cov = []
        for l in range(L):
            X = np.asarray(covariates[l], dtype=float)
            held = holdings[:, l]
            c = np.zeros(X.shape[1])
            s = np.ones(X.shape[1])
            if standardize and X.shape[1] > 1 and held.any():
                Xh = X[held]
                c[1:] = Xh[:, 1:].mean(axis=0)
                sd = Xh[:, 1:].std(axis=0)
                s[1:] = np.where(sd > 0, sd, 1.0)
            self.center.append(c)
            self.scale.append(s)
            self.dims.append(X.shape[1])
            std_cov.append(np.where(held[:, None], (X - c) / s, 0.0))

        # column layout: coefficient blocks, then pattern effects
        self.columns = []
        self.block = []
        for l in range(L):
            start = len(self.columns)
            name = COMPONENT_NAMES[L][l]
            # a component nobody holds carries no coefficients
            if holdings[:, l].any():
                self.columns += [f"{name}:intercept"] + [f"{name}:x{j}" for j in range(1, self.dims[l])]
            self.block.append(slice(start, len(self.columns)))
        # a component's baseline is the reference pattern when it holds the
        # component, else the smallest present pattern that does
        self.baseline = {}
        for l in range(L):
            holding = [i for i in self.present if l in pattern_flags(i, L).held]
            if holding:
                self.baseline[l] = self.reference if self.reference in holding else holding[0]
        self.effect_col = {}
        for i in self.present:
            for l in pattern_flags(i, L).held:
                if i == self.baseline[l]:
                    continue
                self.effect_col[(i, l)] = len(self.columns)
                self.columns.append(f"pattern{i}:{COMPONENT_NAMES[L][l]}")
        self.d = len(self.columns)

        self.blocks = []
        for i in self.present:
            rows = np.flatnonzero(patterns == i)
            comps = pattern_flags(i, L).held
            if not np.all(holdings[np.ix_(rows, comps)]):
                raise ValueError(f"pattern {i}: holdings disagree with the pattern index")
            Z = np.zeros((len(comps), len(rows), self.d))
            for a, l in enumerate(comps):
                Z[a][:, self.block[l]] = std_cov[l][rows]
                if (i, l) in self.effect_col:
                    Z[a][:, self.effect_col[(i, l)]] = 1.0
            gram = np.einsum("amd,bme->abde", Z, Z)
            self.blocks.append(PatternBlock(i, rows, comps, Z, gram))
        self._check_identified()

    # -- structure -----------------------------------------------------
    def _check_identified(self):
        info = sum(np.einsum("aade->de", blk.gram) for blk in self.blocks)
        scale = np.sqrt(np.clip(np.diag(info), 1e-300, None))
        corr = info / np.outer(scale, scale)
        ev = np.linalg.eigvalsh(corr)
        if np.diag(info).min() > 0 and ev.min() > 1e-10 * ev.max():
            return
        bad, kept = [], []
        for j in range(self.d):
            trial = kept + [j]
            sub = info[np.ix_(trial, trial)]
            if np.diag(sub).min() <= 0 or np.linalg.matrix_rank(sub, tol=1e-10 * np.abs(sub).max()) < len(trial):
                bad.append(self.columns[j])
            else:
                kept.append(j)
        raise IdentificationError(
            "regression coefficients are not identified; unidentified columns: " + ", ".join(bad)
        )

    def check_pattern_sizes(self):
        """Raise unless every pattern has at least ``p_i + 1`` households."""
        small = [(b.pattern, b.m, b.p) for b in self.blocks if b.m < b.p + 1]
        if small:
            desc = ", ".join(f"pattern {i}: {m} households for {p} components" for i, m, p in small)
            raise PatternSizeError(
                f"too few households to estimate the covariance ({desc}); "
                "aggregate components (4-component model) or merge patterns"
            )

    def original_coefficients(self, b):
        """Map internal (standardized) coefficients to the original covariate scale."""
        b = np.asarray(b, dtype=float).copy()
        for l in range(self.L):
            sl = self.block[l]
            if sl.start == sl.stop:
                continue
            coef = b[sl]
            slopes = coef[1:] / self.scale[l][1:]
            coef[0] = coef[0] - np.dot(slopes, self.center[l][1:])
            coef[1:] = slopes
            b[sl] = coef
        return b

    def standardized_coefficients(self, b):
        """Inverse of :meth:`original_coefficients`."""
        b = np.asarray(b, dtype=float).copy()
        for l in range(self.L):
            sl = self.block[l]
            if sl.start == sl.stop:
                continue
            coef = b[sl]
            coef[0] = coef[0] + np.dot(coef[1:], self.center[l][1:])
            coef[1:] = coef[1:] * self.scale[l][1:]
            b[sl] = coef
        return b

    # -- per-sweep quantities ----------------------------------------
    def means(self, b):
        """``(m, L)`` array of ``beta_{i,l} + x_l' b_l`` (zero where not held)."""
        mu = np.zeros((self.m, self.L))
        for blk in self.blocks:
            mu[np.ix_(blk.rows, blk.components)] = (blk.Z @ b).T
        return mu

    def residual_matrix(self, blk: PatternBlock, Y, b):
        """``S_i = sum_k u_k u_k'`` with ``u_k = y_k - x_k b``."""
        U = Y[np.ix_(blk.rows, blk.components)] - (blk.Z @ b).T
        return U.T @ U


def coefficient_full_conditional(model: PatternModel, Y, sigmas) -> CoefficientPosterior:
    """Normal full conditional of the stacked coefficients.

    ``Sigma_b = (sum_k x_k' Sigma^{-1} x_k)^{-1}`` and
    ``b_hat = Sigma_b sum_k x_k' Sigma^{-1} y_k``.

    Parameters
    ----------
    model : PatternModel
    Y : ndarray (m, L)
        Log amounts; columns of unheld components are ignored.
    sigmas : dict
        Pattern index -> covariance matrix.
    """
    info = np.zeros((model.d, model.d))
    rhs = np.zeros(model.d)
    for blk in model.blocks:
        P = np.linalg.inv(sigmas[blk.pattern])
        info += np.einsum("ab,abde->de", P, blk.gram)
        Yi = Y[np.ix_(blk.rows, blk.components)]
        # sum_k sum_{a,b} P_ab z_ka y_kb
        rhs += np.einsum("amd,ma->d", blk.Z, Yi @ P.T)
    try:
        cf = np.linalg.cholesky(info)
    except np.linalg.LinAlgError as exc:
        raise IdentificationError("information matrix of the coefficients is singular") from exc
    inv_cf = np.linalg.solve(cf, np.eye(model.d))
    cov = inv_cf.T @ inv_cf
    mean = cov @ rhs
    return CoefficientPosterior(mean, 0.5 * (cov + cov.T))


def sigma_full_conditional(S, m: int, p: int | None = None):
    """Wishart parameters ``(df, scale)`` of the precision given residuals.

    Given the residual matrix ``S`` of ``m`` households the precision
    ``Sigma^{-1}`` is Wishart with ``df = m`` and scale ``S^{-1}``, so
    ``E[Sigma] = S / (m - p - 1)``.
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    p = S.shape[0] if p is None else p
    if m < p + 1:
        raise PatternSizeError(
            f"{m} households cannot identify a {p}x{p} covariance (need at least {p + 1}); "
            "aggregate components or merge patterns"
        )
    try:
        cf = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise SPDError("residual matrix is singular; residuals are degenerate") from exc
    inv_cf = np.linalg.solve(cf, np.eye(p))
    scale = inv_cf.T @ inv_cf
    return m, 0.5 * (scale + scale.T)


def draw_coefficients(model, Y, sigmas, rng):
    post = coefficient_full_conditional(model, Y, sigmas)
    return mvn(post.mean, post.covariance, rng)


def draw_sigma(S, m, rng):
    df, scale = sigma_full_conditional(S, m)
    prec = wishart(df, scale, rng)
    cov = np.linalg.inv(prec)
    return 0.5 * (cov + cov.T)


def component_full_conditional(mu, sigma, y, a: int):
    """Conditional normal of coordinate ``a`` given the other coordinates.

    Parameters
    ----------
    mu, y : array (p,)
        Mean vector and current values (``y[a]`` is ignored).
    sigma : array (p, p)

    Returns
    -------
    mean, sd : float
    """
    mu = np.asarray(mu, dtype=float)
    y = np.asarray(y, dtype=float)
    prec = np.linalg.inv(np.asarray(sigma, dtype=float))
    cmean, csd = conditional_moments(mu[None, :], y[None, :], prec, a)
    return float(cmean[0]), float(csd)


def conditional_moments(mu, Y, prec, a: int):
    """Vectorized conditional moments of coordinate ``a`` via the precision matrix.

    ``mean = mu_a - sum_{b != a} (Q_ab / Q_aa)(y_b - mu_b)`` and
    ``var = 1 / Q_aa``; ``mu`` and ``Y`` are ``(n, p)``.
    """
    q = prec[a] / prec[a, a]
    dev = Y - mu
    mean = mu[:, a] - (dev @ q - dev[:, a])
    return mean, 1.0 / np.sqrt(prec[a, a])


def log_prior(sigmas) -> float:
    """Log prior density up to a constant: ``sum_i -((p_i + 1)/2) log det Sigma_i``.

    The prior is improper; only differences are meaningful.
    """
    total = 0.0
    for S in (sigmas.values() if isinstance(sigmas, dict) else sigmas):
        S = np.atleast_2d(S)
        sign, logdet = np.linalg.slogdet(S)
        if sign <= 0:
            raise SPDError("covariance is not positive definite")
        total -= 0.5 * (S.shape[0] + 1) * logdet
    return float(total)
