"""Penalized base learners and the unit-level cross-fitting engine.

All nuisance quantities are estimated with the two model families here:
an elastic-net linear model solved by covariance-update coordinate descent,
and penalized logistic / softmax probability models solved by damped Newton
iterations. Both are deterministic given their inputs, which keeps every
downstream estimate reproducible from a single seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .exceptions import (
    DegenerateFold,
    MldidError,
    NoConvergence,
    NonFiniteData,
    SeparableWithoutPenalty,
)

# Convergence constants for the coordinate-descent and Newton solvers.
CD_TOL = 1e-7
CD_MAX_SWEEPS = 10_000
NEWTON_TOL = 1e-6
NEWTON_MAX_ITER = 500
DEFAULT_CLIP = 0.01

# Inner cross-validation defaults for the l1 path.
CV_FOLDS = 5
CV_N_LAMBDAS = 20
CV_LAMBDA_MIN_RATIO = 1e-4
CV_LAMBDA_MAX_RATIO = 10.0


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteData(f"{name} contains NaN or infinite entries")


def _normalized_weights(weights: np.ndarray | None, n: int) -> np.ndarray:
    if weights is None:
        return np.full(n, 1.0 / n)
    weights = np.asarray(weights, dtype=float)
    total = weights.sum()
    if total <= 0:
        raise MldidError("sample weights must have positive total mass")
    return weights / total


def _standardize(X: np.ndarray, w: np.ndarray, center: bool):
    """Weighted center/scale. Without centering, columns are RMS-scaled only."""
    if center:
        m = w @ X
        var = w @ (X - m) ** 2
    else:
        m = np.zeros(X.shape[1])
        var = w @ X**2
    s = np.sqrt(var)
    s[s == 0.0] = 1.0
    return (X - m) / s, m, s


@dataclass(frozen=True)
class LinearModel:
    """Elastic-net linear model on the original covariate scale.

    ``center``/``scale`` record the standardization used at fit time;
    predictions are identical whether computed from the original-scale
    coefficients or by standardizing first.
    """

    intercept: float
    coef: np.ndarray
    l1: float
    l2: float
    center: np.ndarray
    scale: np.ndarray
    n_sweeps: int = 0

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.coef.shape[0]:
            raise MldidError(
                f"design has {X.shape[1] if X.ndim == 2 else '?'} columns, "
                f"model was fit on {self.coef.shape[0]}"
            )
        return X @ self.coef + self.intercept

    @property
    def std_coef(self) -> np.ndarray:
        """Coefficients on the standardized scale."""
        return self.coef * self.scale

    @property
    def std_intercept(self) -> float:
        return self.intercept + float(self.center @ self.coef)


def _soft_threshold(z: float, thresh: float) -> float:
    if z > thresh:
        return z - thresh
    if z < -thresh:
        return z + thresh
    return 0.0


def _enet_objective(beta, G, c, half_yy, l1, l2, pf):
    quad = 0.5 * beta @ G @ beta - c @ beta + half_yy
    return quad + l1 * float(pf @ np.abs(beta)) + 0.5 * l2 * float(pf @ beta**2)


def _cd_solve(G, c, half_yy, l1, l2, pf, beta0=None):
    """Coordinate descent on the standardized Gram system.

    Minimizes 0.5 b'Gb - c'b + half_yy + l1*sum(pf|b|) + 0.5*l2*sum(pf b^2).
    Returns (beta, n_sweeps, final_delta). The objective is asserted
    non-increasing across sweeps.
    """
    p = c.shape[0]
    beta = np.zeros(p) if beta0 is None else beta0.copy()
    if p == 0:
        return beta, 0, 0.0
    if l1 == 0.0:
        # Pure ridge/OLS has a closed form; solve the normal equations.
        A = G + l2 * np.diag(pf)
        diag = np.diag(A).copy()
        if np.any(diag <= 0):
            # Constant columns contribute nothing; pin them at zero.
            keep = diag > 0
            beta = np.zeros(p)
            if keep.any():
                beta[keep] = np.linalg.lstsq(
                    A[np.ix_(keep, keep)], c[keep], rcond=None
                )[0]
            return beta, 1, 0.0
        beta = np.linalg.lstsq(A, c, rcond=None)[0]
        return beta, 1, 0.0

    q = G @ beta
    denom = np.diag(G) + l2 * pf
    active = denom > 0
    obj = _enet_objective(beta, G, c, half_yy, l1, l2, pf)
    delta = np.inf
    for sweep in range(1, CD_MAX_SWEEPS + 1):
        delta = 0.0
        for j in range(p):
            if not active[j]:
                continue
            old = beta[j]
            grad_j = c[j] - q[j] + G[j, j] * old
            new = _soft_threshold(grad_j, l1 * pf[j]) / denom[j]
            if new != old:
                step = new - old
                beta[j] = new
                q += G[:, j] * step
                delta = max(delta, abs(step))
        # q == G @ beta is maintained incrementally, so the objective is
        # available without another matrix product.
        new_obj = (
            0.5 * float(beta @ q) - float(c @ beta) + half_yy
            + l1 * float(pf @ np.abs(beta)) + 0.5 * l2 * float(pf @ beta**2)
        )
        assert new_obj <= obj + 1e-10 * max(1.0, abs(obj)), (
            "coordinate descent objective increased"
        )
        obj = new_obj
        if delta < CD_TOL:
            return beta, sweep, delta
    raise NoConvergence(
        f"coordinate descent did not converge in {CD_MAX_SWEEPS} sweeps "
        f"(last max step {delta:.3e})",
        final_delta=delta,
    )


def fit_penalized_ls(
    X: np.ndarray,
    y: np.ndarray,
    l1: float = 0.0,
    l2: float = 0.0,
    *,
    weights: np.ndarray | None = None,
    penalty_factor: np.ndarray | None = None,
    fit_intercept: bool = True,
) -> LinearModel:
    """Fit an elastic-net linear regression.

    The objective is ``(1/2) * mean_w[(y - b0 - Xb)^2] + l1*||b||_1 +
    (l2/2)*||b||_2^2`` with per-feature penalty multipliers
    ``penalty_factor`` (0 leaves a column unpenalized). Features are
    standardized internally; penalties apply on the standardized scale.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise MldidError("X must be 2-dimensional")
    n, p = X.shape
    if n != y.shape[0]:
        raise MldidError("X and y have different lengths")
    if n < 2:
        raise MldidError("need at least 2 rows to fit")
    _check_finite("X", X)
    _check_finite("y", y)

    w = _normalized_weights(weights, n)
    pf = np.ones(p) if penalty_factor is None else np.asarray(penalty_factor, float)

    Z, m, s = _standardize(X, w, center=fit_intercept)
    ybar = float(w @ y) if fit_intercept else 0.0
    r = y - ybar

    wZ = Z * w[:, None]
    G = Z.T @ wZ
    c = wZ.T @ r
    half_yy = 0.5 * float(w @ r**2)

    beta, n_sweeps, _ = _cd_solve(G, c, half_yy, l1, l2, pf)

    coef = beta / s
    intercept = ybar - float(m @ coef) if fit_intercept else 0.0
    return LinearModel(intercept, coef, l1, l2, m, s, n_sweeps)


def _lambda_max(G, c, pf, l2):
    """Smallest l1 at which every penalized coefficient is zero."""
    free = pf == 0.0
    resid = c.copy()
    if free.any():
        b_free = np.linalg.lstsq(G[np.ix_(free, free)], c[free], rcond=None)[0]
        resid = c - G[:, free] @ b_free
    pen = pf > 0.0
    if not pen.any():
        return 0.0
    return float(np.max(np.abs(resid[pen]) / pf[pen]))


def fit_penalized_ls_cv(
    X: np.ndarray,
    y: np.ndarray,
    *,
    l2: float = 1e-6,
    weights: np.ndarray | None = None,
    penalty_factor: np.ndarray | None = None,
    fit_intercept: bool = True,
    n_folds: int = CV_FOLDS,
    n_lambdas: int = CV_N_LAMBDAS,
    fixed_l1: float | None = None,
    cv_rule: str = "min",
) -> LinearModel:
    """Elastic-net fit with l1 chosen by K-fold cross-validation.

    The grid is ``n_lambdas`` log-spaced points on
    ``[CV_LAMBDA_MIN_RATIO, CV_LAMBDA_MAX_RATIO] * lambda_max``; the path is
    fit warm-started from large to small l1, and the l1 minimizing held-out
    squared error is refit on the full data. ``cv_rule="1se"`` instead takes
    the largest l1 within one standard error of the minimum (sparser fits,
    the usual choice when selection matters more than prediction).
    ``fixed_l1`` bypasses the search entirely.
    """
    if fixed_l1 is not None:
        return fit_penalized_ls(
            X, y, fixed_l1, l2,
            weights=weights, penalty_factor=penalty_factor,
            fit_intercept=fit_intercept,
        )
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    _check_finite("X", X)
    _check_finite("y", y)
    w = _normalized_weights(weights, n)
    pf = np.ones(p) if penalty_factor is None else np.asarray(penalty_factor, float)

    Z, m, s = _standardize(X, w, center=fit_intercept)
    ybar = float(w @ y) if fit_intercept else 0.0
    r = y - ybar

    wZ = Z * w[:, None]
    G_full = Z.T @ wZ
    c_full = wZ.T @ r

    lam_max = _lambda_max(G_full, c_full, pf, l2)
    if lam_max <= 0.0:
        return fit_penalized_ls(
            X, y, 0.0, l2,
            weights=weights, penalty_factor=penalty_factor,
            fit_intercept=fit_intercept,
        )
    grid = np.geomspace(
        lam_max * CV_LAMBDA_MAX_RATIO, lam_max * CV_LAMBDA_MIN_RATIO, n_lambdas
    )

    fold_id = np.arange(n) % n_folds
    fold_err = np.zeros((n_folds, n_lambdas))
    for k in range(n_folds):
        test = fold_id == k
        train = ~test
        w_tr = w[train]
        tot = w_tr.sum()
        w_tr = w_tr / tot
        Z_tr, Z_te = Z[train], Z[test]
        ybar_tr = float(w_tr @ y[train]) if fit_intercept else 0.0
        r_tr = y[train] - ybar_tr
        wZ_tr = Z_tr * w_tr[:, None]
        G = Z_tr.T @ wZ_tr
        c = wZ_tr.T @ r_tr
        half_yy = 0.5 * float(w_tr @ r_tr**2)
        beta = np.zeros(p)
        r_te = y[test] - ybar_tr
        w_te = w[test] / w[test].sum()
        for i, lam in enumerate(grid):
            beta, _, _ = _cd_solve(G, c, half_yy, lam, l2, pf, beta0=beta)
            resid = r_te - Z_te @ beta
            fold_err[k, i] = float(w_te @ resid**2)

    cv_mean = fold_err.mean(axis=0)
    best = int(np.argmin(cv_mean))
    if cv_rule == "1se":
        cv_se = fold_err.std(axis=0, ddof=1) / np.sqrt(n_folds)
        cutoff = cv_mean[best] + cv_se[best]
        # The grid is descending, so the first index within the cutoff is
        # the largest admissible penalty.
        best = int(np.flatnonzero(cv_mean <= cutoff)[0])
    elif cv_rule != "min":
        raise MldidError(f"unknown cv_rule: {cv_rule}")
    return fit_penalized_ls(
        X, y, float(grid[best]), l2,
        weights=weights, penalty_factor=penalty_factor,
        fit_intercept=fit_intercept,
    )


# ---------------------------------------------------------------------------
# Probability models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbabilityModel:
    """Penalized logistic or softmax classifier.

    ``coef`` has one row per class (the first class is the softmax
    reference and carries zeros); ``predict_proba`` emits probabilities
    clipped to ``[clip, 1 - clip]``. Pre-clip softmax rows sum to one.
    """

    kind: str  # "logistic" or "softmax"
    classes: np.ndarray
    intercepts: np.ndarray  # (n_classes,)
    coef: np.ndarray        # (n_classes, p)
    l2: float
    clip: float
    center: np.ndarray
    scale: np.ndarray
    n_iter: int = 0

    def predict_proba(self, X: np.ndarray, clipped: bool = True) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        eta = X @ self.coef.T + self.intercepts
        eta -= eta.max(axis=1, keepdims=True)
        expeta = np.exp(eta)
        proba = expeta / expeta.sum(axis=1, keepdims=True)
        if clipped and self.clip > 0:
            proba = np.clip(proba, self.clip, 1.0 - self.clip)
        return proba


def _softmax_nll_grad_hess(theta, Xd, y_onehot, w, l2, pf_mask, want_hess=True):
    """Objective, gradient and Hessian for reference-class softmax.

    ``theta`` is ((C-1), d) for the non-reference classes; the reference
    class has a fixed zero row. ``pf_mask`` marks penalized entries.
    """
    n, d = Xd.shape
    cm1 = theta.shape[0]
    eta = Xd @ theta.T                          # (n, C-1)
    eta_full = np.concatenate([np.zeros((n, 1)), eta], axis=1)
    eta_full -= eta_full.max(axis=1, keepdims=True)
    expeta = np.exp(eta_full)
    proba = expeta / expeta.sum(axis=1, keepdims=True)

    loglik = np.sum(w * np.log(np.maximum((proba * y_onehot).sum(axis=1), 1e-300)))
    obj = -loglik + 0.5 * l2 * float(np.sum((theta * pf_mask) ** 2))

    resid = proba[:, 1:] - y_onehot[:, 1:]      # (n, C-1)
    grad = (resid * w[:, None]).T @ Xd + l2 * theta * pf_mask

    if not want_hess:
        return obj, grad, None

    H = np.empty((cm1 * d, cm1 * d))
    for a in range(cm1):
        pa = proba[:, a + 1]
        for b in range(a, cm1):
            pb = proba[:, b + 1]
            r = pa * ((1.0 if a == b else 0.0) - pb) * w
            block = Xd.T @ (Xd * r[:, None])
            H[a * d:(a + 1) * d, b * d:(b + 1) * d] = block
            if b != a:
                H[b * d:(b + 1) * d, a * d:(a + 1) * d] = block
    H[np.arange(cm1 * d), np.arange(cm1 * d)] += l2 * pf_mask.ravel()
    return obj, grad, H


def fit_probability(
    X: np.ndarray,
    labels: np.ndarray,
    kind: str = "logistic",
    l2: float = 1e-6,
    clip: float = DEFAULT_CLIP,
) -> ProbabilityModel:
    """Fit a penalized logistic (binary) or softmax (multiclass) model.

    Newton iterations with step halving on the penalized negative
    log-likelihood; converged when the gradient max-norm drops below
    ``NEWTON_TOL``. Intercepts are never penalized.
    """
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    if X.ndim != 2:
        raise MldidError("X must be 2-dimensional")
    n, p = X.shape
    _check_finite("X", X)
    classes = np.unique(labels)
    if kind == "logistic":
        if not np.all(np.isin(classes, [0, 1])) or classes.shape[0] != 2:
            raise MldidError("binary logistic requires both labels 0 and 1 present")
        classes = np.array([0, 1])
    elif kind == "softmax":
        if classes.shape[0] < 2:
            raise MldidError("softmax requires at least 2 classes present")
    else:
        raise MldidError(f"unknown probability model kind: {kind}")

    w = np.full(n, 1.0 / n)
    Z, m, s = _standardize(X, w, center=True)
    Xd = np.concatenate([np.ones((n, 1)), Z], axis=1)
    d = p + 1

    class_index = np.searchsorted(classes, labels)
    n_classes = classes.shape[0]
    y_onehot = np.zeros((n, n_classes))
    y_onehot[np.arange(n), class_index] = 1.0

    cm1 = n_classes - 1
    theta = np.zeros((cm1, d))
    # Unpenalized intercept column, penalized slopes.
    pf_mask = np.ones((cm1, d))
    pf_mask[:, 0] = 0.0

    obj, grad, H = _softmax_nll_grad_hess(theta, Xd, y_onehot, w, l2, pf_mask)
    n_iter = 0
    while np.max(np.abs(grad)) >= NEWTON_TOL:
        if n_iter >= NEWTON_MAX_ITER:
            if l2 == 0.0:
                raise SeparableWithoutPenalty(
                    "likelihood diverges: data separable and l2 penalty is zero"
                )
            raise NoConvergence(
                f"probability fit did not converge in {NEWTON_MAX_ITER} iterations",
                final_delta=float(np.max(np.abs(grad))),
            )
        n_iter += 1
        try:
            step = np.linalg.solve(H, grad.ravel()).reshape(cm1, d)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad.ravel(), rcond=None)[0].reshape(cm1, d)
        t = 1.0
        improved = False
        while t > 1e-12:
            cand = theta - t * step
            cand_obj, cand_grad, cand_H = _softmax_nll_grad_hess(
                cand, Xd, y_onehot, w, l2, pf_mask
            )
            if cand_obj <= obj + 1e-12 * max(1.0, abs(obj)):
                theta, obj, grad, H = cand, cand_obj, cand_grad, cand_H
                improved = True
                break
            t *= 0.5
        if l2 == 0.0 and np.max(np.abs(theta)) > 1e8:
            raise SeparableWithoutPenalty(
                "likelihood diverges: data separable and l2 penalty is zero"
            )
        if not improved:
            # Line search stalled at numerical precision; accept the point.
            break
    if l2 == 0.0 and obj < 1e-6:
        # A vanishing mean log-loss means every point is classified with
        # near-certainty: the unpenalized optimum sits at infinity.
        raise SeparableWithoutPenalty(
            "likelihood diverges: data separable and l2 penalty is zero"
        )

    # Unscale back to the original covariate units, reference class first.
    theta_full = np.concatenate([np.zeros((1, d)), theta], axis=0)
    slopes = theta_full[:, 1:] / s
    intercepts = theta_full[:, 0] - slopes @ m
    return ProbabilityModel(
        kind=kind,
        classes=classes,
        intercepts=intercepts,
        coef=slopes,
        l2=l2,
        clip=clip,
        center=m,
        scale=s,
        n_iter=n_iter,
    )


# ---------------------------------------------------------------------------
# Fold plans and cross-fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    """Assignment of units to folds; both stacked rows of a unit share a fold."""

    n_folds: int
    assignment: np.ndarray  # fold id per unit
    seed: int

    def __post_init__(self):
        sizes = np.bincount(self.assignment, minlength=self.n_folds)
        if sizes.max() - sizes.min() > 1:
            raise MldidError("fold sizes differ by more than one unit")


def make_fold_plan(n_units: int, n_folds: int, seed: int) -> FoldPlan:
    if n_folds < 2:
        raise MldidError("need at least 2 folds")
    if n_folds > n_units:
        raise MldidError("more folds than units")
    rng = np.random.default_rng(seed)
    assignment = np.empty(n_units, dtype=np.int64)
    assignment[rng.permutation(n_units)] = np.arange(n_units) % n_folds
    return FoldPlan(n_folds=n_folds, assignment=assignment, seed=seed)


def cross_fit(
    X: np.ndarray,
    y: np.ndarray,
    units: np.ndarray,
    plan: FoldPlan,
    fit: Callable[[np.ndarray, np.ndarray], object],
    *,
    predict: Callable[[object, np.ndarray], np.ndarray] | None = None,
    train_mask: np.ndarray | None = None,
    out_shape: tuple | None = None,
) -> np.ndarray:
    """Out-of-fold predictions with fold membership defined by unit.

    The model predicting row i is trained on all rows whose unit lies
    outside fold(i), optionally restricted to ``train_mask`` (used for
    the conditional regressions). Fit failures surface as DegenerateFold.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    row_fold = plan.assignment[units]
    if predict is None:
        predict = lambda model, Xnew: model.predict(Xnew)
    out = np.empty((n,) + (out_shape or ()))
    out.fill(np.nan)
    for k in range(plan.n_folds):
        test = row_fold == k
        if not test.any():
            continue
        train = ~test
        if train_mask is not None:
            train = train & train_mask
        if int(train.sum()) < 2:
            raise DegenerateFold(
                f"fold {k}: training complement has {int(train.sum())} rows"
            )
        try:
            model = fit(X[train], y[train])
        except MldidError as err:
            raise DegenerateFold(f"fold {k}: {err}") from err
        out[test] = predict(model, X[test])
    return out
