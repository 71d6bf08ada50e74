"""Gaussian-mixture regression of the margin surface.

A full-covariance mixture is fitted over joint (parameters, margin) samples
with EM; the conditional mean of the margin given the parameters is then
closed-form, and so is its gradient, which downstream sensitivity scoring
relies on. Inputs are standardized per dimension before EM (parameter
scales differ by orders of magnitude) and the fitted model is mapped back
through the affine transform exactly, so all queries run in original units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

__all__ = [
    "GmmError",
    "GmmModel",
    "fit_em",
    "responsibilities",
    "predict_margin",
    "margin_gradient",
    "select_k",
    "r_squared",
    "bic",
    "save_gmm",
    "load_gmm",
]

COV_FLOOR = 1e-8
LL_TOL = 1e-8          # per-sample log-likelihood gain
MAX_ITER = 500
K_MAX_DEFAULT = 10
N_RESTARTS = 5


class GmmError(ValueError):
    """Raised for invalid mixture configurations or degenerate data."""


@dataclass(frozen=True)
class GmmModel:
    """Joint mixture over (X, y) with cached conditional partitions.

    weights: (K,), means: (K, d+1), covariances: (K, d+1, d+1); the margin
    is the last coordinate. All parameters are in original (unstandardized)
    units. ``ll_history`` records the EM log-likelihood trajectory of the
    winning run (empty for hand-built or deserialized models).
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    ll_history: tuple = ()

    def __post_init__(self):
        w = np.asarray(self.weights, float)
        mu = np.asarray(self.means, float)
        cov = np.asarray(self.covariances, float)
        if w.ndim != 1 or mu.ndim != 2 or cov.ndim != 3:
            raise GmmError("weights (K,), means (K, d+1), covariances (K, d+1, d+1)")
        k, dp1 = mu.shape
        if w.shape != (k,) or cov.shape != (k, dp1, dp1) or dp1 < 2:
            raise GmmError("inconsistent mixture shapes")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise GmmError("weights must be positive and sum to 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)
        d = dp1 - 1
        mu_x = mu[:, :d]
        mu_y = mu[:, d]
        s_xx = cov[:, :d, :d]
        s_yx = cov[:, d, :d]
        s_yy = cov[:, d, d]
        # per-component conditional regression coefficients Σ_YX Σ_XX⁻¹
        chol = np.empty_like(s_xx)
        coef = np.empty_like(s_yx)
        for i in range(k):
            try:
                chol[i] = np.linalg.cholesky(s_xx[i])
            except np.linalg.LinAlgError:
                raise GmmError(f"component {i}: Σ_XX not positive definite") from None
            coef[i] = np.linalg.solve(s_xx[i], s_yx[i])
        object.__setattr__(self, "_mu_x", mu_x)
        object.__setattr__(self, "_mu_y", mu_y)
        object.__setattr__(self, "_chol_xx", chol)
        object.__setattr__(self, "_coef", coef)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def n_features(self) -> int:
        return self.means.shape[1] - 1


# ---------------------------------------------------------------------------
# dataset plumbing


def _as_xy(dataset):
    """Accept [(x_vec, y), ...] or an (X, y) array pair."""
    if isinstance(dataset, tuple) and len(dataset) == 2:
        x, y = dataset
        x = np.atleast_2d(np.asarray(x, float))
        y = np.asarray(y, float).ravel()
    else:
        x = np.array([np.atleast_1d(np.asarray(p, float)) for p, _ in dataset])
        y = np.array([float(v) for _, v in dataset])
    if len(x) != len(y):
        raise GmmError("X and y lengths differ")
    z = np.column_stack([x, y])
    if not np.all(np.isfinite(z)):
        raise GmmError("dataset contains non-finite values")
    return z


def _log_gauss(z, mean, cov_chol):
    """Log density of N(mean, L Lᵀ) at rows of z."""
    diff = z - mean
    sol = np.linalg.solve(cov_chol, diff.T)
    quad = np.sum(sol * sol, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(cov_chol)))
    d = z.shape[1]
    return -0.5 * (quad + logdet + d * math.log(2.0 * math.pi))


def _kmeanspp_means(z, k, rng):
    """k-means++ style seeding over the joint rows."""
    n = len(z)
    means = [z[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min([np.sum((z - m) ** 2, axis=1) for m in means], axis=0)
        total = d2.sum()
        if total <= 0:
            means.append(z[rng.integers(n)])
            continue
        means.append(z[rng.choice(n, p=d2 / total)])
    return np.array(means)


def _em_once(z, k, rng):
    """One EM run in (already standardized) joint space."""
    n, dp1 = z.shape
    means = _kmeanspp_means(z, k, rng)
    base_cov = np.cov(z.T, bias=True).reshape(dp1, dp1) + COV_FLOOR * np.eye(dp1)
    covs = np.repeat(base_cov[None, :, :], k, axis=0)
    weights = np.full(k, 1.0 / k)
    history = []
    prev_ll = -np.inf
    pure_step = True  # last update was a plain EM maximization
    for _ in range(MAX_ITER):
        # E step in log space
        log_p = np.empty((n, k))
        for i in range(k):
            chol = np.linalg.cholesky(covs[i])
            log_p[:, i] = math.log(weights[i]) + _log_gauss(z, means[i], chol)
        log_norm = np.logaddexp.reduce(log_p, axis=1)
        ll = float(log_norm.sum())
        if pure_step:
            assert not math.isfinite(prev_ll) or ll >= prev_ll - 1e-10 * max(1.0, abs(prev_ll)), \
                "EM log-likelihood decreased"
        history.append(ll)
        gamma = np.exp(log_p - log_norm[:, None])
        if abs(ll - prev_ll) < LL_TOL * n and math.isfinite(prev_ll):
            break
        prev_ll = ll
        # M step
        nk = gamma.sum(axis=0)
        reseeded = False
        floored = False
        for i in range(k):
            if nk[i] < 1e-10:
                # dead component: reseed on the worst-explained sample; the
                # jump is not an EM step, so monotonicity restarts after it
                j = int(np.argmin(log_norm))
                means[i] = z[j]
                covs[i] = base_cov.copy()
                nk[i] = 1.0
                reseeded = True
                continue
            means[i] = gamma[:, i] @ z / nk[i]
            diff = z - means[i]
            mle_cov = (gamma[:, i] * diff.T) @ diff / nk[i]
            # exactly collinear samples (constant-margin plateaus) collapse
            # the MLE covariance; once the floor dominates an eigenvalue the
            # update is regularized rather than pure EM
            if np.linalg.eigvalsh(mle_cov)[0] < 10.0 * COV_FLOOR:
                floored = True
            covs[i] = mle_cov + COV_FLOOR * np.eye(dp1)
        weights = np.maximum(nk / n, 1e-12)
        weights = weights / weights.sum()
        if reseeded:
            prev_ll = -np.inf
        pure_step = not (reseeded or floored)
    return weights, means, covs, history


def fit_em(dataset, k: int, seed: int = 0, n_init: int = 1) -> GmmModel:
    """EM fit of a K-component joint mixture.

    Runs ``n_init`` seeded restarts and keeps the best log-likelihood. The
    returned model is in original units.
    """
    if k < 1:
        raise GmmError("K must be >= 1")
    z = _as_xy(dataset)
    n, dp1 = z.shape
    if n < 10 * k:
        raise GmmError(f"need at least {10 * k} samples for K={k}, got {n}")
    scale = z.std(axis=0)
    if np.all(scale == 0):
        raise GmmError("degenerate dataset: zero variance in every dimension")
    scale = np.where(scale == 0, 1.0, scale)
    shift = z.mean(axis=0)
    zs = (z - shift) / scale

    master = np.random.default_rng(seed)
    seeds = master.integers(0, 2**63 - 1, size=n_init)
    best = None
    for s in seeds:
        w, mu, cov, hist = _em_once(zs, k, np.random.default_rng(s))
        if best is None or hist[-1] > best[3][-1]:
            best = (w, mu, cov, hist)
    w, mu, cov, hist = best

    # exact de-standardization: z = (v - shift)/scale is affine, so
    # mu_v = shift + scale*mu_z and Sigma_v = D Sigma_z D with D = diag(scale)
    mu_orig = shift + scale * mu
    cov_orig = cov * scale[None, :, None] * scale[None, None, :]
    return GmmModel(weights=w, means=mu_orig, covariances=cov_orig,
                    ll_history=tuple(hist))


# ---------------------------------------------------------------------------
# conditional queries


def _log_resp_x(model: GmmModel, x: np.ndarray) -> np.ndarray:
    """Log responsibilities from the X-marginal, rows of x."""
    k = model.n_components
    d = model.n_features
    log_p = np.empty((len(x), k))
    for i in range(k):
        chol = model._chol_xx[i]
        diff = x - model._mu_x[i]
        sol = np.linalg.solve(chol, diff.T)
        quad = np.sum(sol * sol, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        log_p[:, i] = (math.log(model.weights[i])
                       - 0.5 * (quad + logdet + d * math.log(2.0 * math.pi)))
    return log_p - np.logaddexp.reduce(log_p, axis=1)[:, None]


def responsibilities(model: GmmModel, x) -> np.ndarray:
    """Posterior component probabilities gamma_k(x); sums to 1."""
    x = np.atleast_2d(np.asarray(x, float))
    g = np.exp(_log_resp_x(model, x))
    return g[0] if g.shape[0] == 1 else g


def _component_means(model: GmmModel, x: np.ndarray) -> np.ndarray:
    """Per-component conditional means m_k(x), rows of x -> (n, K)."""
    return (model._mu_y[None, :]
            + np.einsum("kd,nkd->nk", model._coef,
                        x[:, None, :] - model._mu_x[None, :, :]))


def predict_margin(model: GmmModel, x):
    """Conditional-mean margin surface f(x) = sum_k gamma_k m_k."""
    x1 = np.atleast_2d(np.asarray(x, float))
    gamma = np.exp(_log_resp_x(model, x1))
    f = np.sum(gamma * _component_means(model, x1), axis=1)
    return float(f[0]) if np.asarray(x).ndim == 1 else f


def margin_gradient(model: GmmModel, x):
    """Analytic gradient of predict_margin.

    grad f = sum_k [grad gamma_k * m_k + gamma_k * grad m_k] with
    grad gamma_k = gamma_k [-S_k (x - mu_k) + sum_j gamma_j S_j (x - mu_j)]
    (S = Sigma_XX^-1) and grad m_k the constant regression coefficients.
    """
    x1 = np.atleast_2d(np.asarray(x, float))
    n = len(x1)
    k = model.n_components
    gamma = np.exp(_log_resp_x(model, x1))          # (n, K)
    m = _component_means(model, x1)                  # (n, K)
    # S_k (x - mu_k) per component
    pulls = np.empty((n, k, model.n_features))
    for i in range(k):
        chol = model._chol_xx[i]
        diff = (x1 - model._mu_x[i]).T
        pulls[:, i, :] = np.linalg.solve(chol.T, np.linalg.solve(chol, diff)).T
    mean_pull = np.einsum("nk,nkd->nd", gamma, pulls)
    grad_gamma = gamma[:, :, None] * (mean_pull[:, None, :] - pulls)
    grad = (np.einsum("nkd,nk->nd", grad_gamma, m)
            + np.einsum("nk,kd->nd", gamma, model._coef))
    return grad[0] if np.asarray(x).ndim == 1 else grad


def r_squared(model: GmmModel, dataset) -> float:
    """Coefficient of determination of predict_margin over the dataset."""
    z = _as_xy(dataset)
    x, y = z[:, :-1], z[:, -1]
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if y.max() == y.min() or ss_tot == 0:
        raise GmmError("zero margin variance: R^2 undefined")
    pred = predict_margin(model, x)
    ss_res = float(np.sum((y - pred) ** 2))
    return 1.0 - ss_res / ss_tot


def bic(model: GmmModel, dataset) -> float:
    """Bayesian information criterion of the joint fit (lower is better)."""
    z = _as_xy(dataset)
    n, dp1 = z.shape
    k = model.n_components
    log_p = np.empty((n, k))
    for i in range(k):
        chol = np.linalg.cholesky(model.covariances[i])
        log_p[:, i] = math.log(model.weights[i]) + _log_gauss(z, model.means[i], chol)
    ll = float(np.logaddexp.reduce(log_p, axis=1).sum())
    n_params = (k - 1) + k * dp1 + k * dp1 * (dp1 + 1) // 2
    return -2.0 * ll + n_params * math.log(n)


def select_k(dataset, k_max: int = K_MAX_DEFAULT, seed: int = 0,
             jobs: int = 1) -> int:
    """BIC-minimizing component count over K = 1..k_max, 5 restarts each."""
    if k_max < 1:
        raise GmmError("k_max must be >= 1")
    z = _as_xy(dataset)
    ks = [k for k in range(1, k_max + 1) if len(z) >= 10 * k]
    if not ks:
        raise GmmError("dataset too small for any candidate K")
    runner = Parallel(n_jobs=jobs)
    models = runner(
        delayed(fit_em)((z[:, :-1], z[:, -1]), k, seed=seed + 97 * k,
                        n_init=N_RESTARTS)
        for k in ks
    )
    scores = [bic(m, (z[:, :-1], z[:, -1])) for m in models]
    return ks[int(np.argmin(scores))]


# ---------------------------------------------------------------------------
# plain-text serialization


def save_gmm(model: GmmModel, path):
    """Text dump at 17 significant digits (exact float round trip)."""
    k, dp1 = model.means.shape
    with open(path, "w") as fh:
        fh.write("# gmm model v1\n")
        fh.write(f"components {k}\n")
        fh.write(f"joint_dim {dp1}\n")
        for i in range(k):
            fh.write(f"weight {model.weights[i]:.17g}\n")
            fh.write("mean " + " ".join(f"{v:.17g}" for v in model.means[i]) + "\n")
            for row in model.covariances[i]:
                fh.write("cov " + " ".join(f"{v:.17g}" for v in row) + "\n")


def load_gmm(path) -> GmmModel:
    with open(path) as fh:
        lines = [ln.split() for ln in fh
                 if ln.strip() and not ln.startswith("#")]
    it = iter(lines)
    tok = next(it)
    if tok[0] != "components":
        raise GmmError("not a gmm model file")
    k = int(tok[1])
    dp1 = int(next(it)[1])
    weights = np.empty(k)
    means = np.empty((k, dp1))
    covs = np.empty((k, dp1, dp1))
    for i in range(k):
        weights[i] = float(next(it)[1])
        means[i] = [float(v) for v in next(it)[1:]]
        for r in range(dp1):
            covs[i, r] = [float(v) for v in next(it)[1:]]
    return GmmModel(weights=weights, means=means, covariances=covs)
