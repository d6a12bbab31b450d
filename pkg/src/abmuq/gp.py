"""Gaussian process regression: kernels, marginal-likelihood fitting, prediction.

Exact inference through a Cholesky factor of the noisy covariance. The mean
function is a constant estimated by generalized least squares; noise enters
as a per-point diagonal (scalar, fixed vector, or estimated scalar).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from .design import lhd

# relative diagonal jitter, always added on top of the noise variance
JITTER_REL = 1e-8
_SQRT5 = np.sqrt(5.0)

KERNEL_FAMILIES = ("sqexp", "matern52")

# log-space hyperparameter search box, applied after standardizing y
DEFAULT_BOUNDS = {
    "lengthscale": (0.01, 10.0),
    "signal_var": (1e-4, 1e4),
    "noise_var": (1e-8, 1e2),
}


class FitError(RuntimeError):
    """No hyperparameter start produced a usable covariance factorization."""


@dataclass
class KernelParams:
    """Stationary kernel: per-input lengthscales and a signal variance."""

    lengthscales: np.ndarray
    signal_var: float
    family: str = "matern52"

    def __post_init__(self):
        self.lengthscales = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        self.signal_var = float(self.signal_var)
        if np.any(self.lengthscales <= 0) or self.signal_var <= 0:
            raise ValueError("lengthscales and signal_var must be positive")
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")

    @property
    def p(self) -> int:
        return self.lengthscales.shape[0]


def _scaled_sqdist(X1: np.ndarray, X2: np.ndarray, ell: np.ndarray) -> np.ndarray:
    d2 = cdist(X1 / ell, X2 / ell, "sqeuclidean")
    return np.maximum(d2, 0.0)


def _corr_from_sqdist(d2: np.ndarray, family: str) -> np.ndarray:
    if family == "sqexp":
        return np.exp(-0.5 * d2)
    r = np.sqrt(d2)
    return (1.0 + _SQRT5 * r + (5.0 / 3.0) * d2) * np.exp(-_SQRT5 * r)


def kernel_matrix(params: KernelParams, X1: np.ndarray, X2: np.ndarray | None = None) -> np.ndarray:
    """Covariance matrix k(X1, X2); symmetric k(X1, X1) when X2 is omitted."""
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = X1 if X2 is None else np.atleast_2d(np.asarray(X2, dtype=float))
    if X1.shape[1] != params.p or X2.shape[1] != params.p:
        raise ValueError("input dimension does not match kernel lengthscales")
    d2 = _scaled_sqdist(X1, X2, params.lengthscales)
    return params.signal_var * _corr_from_sqdist(d2, params.family)


def kernel_eval(params: KernelParams, x: np.ndarray, xp: np.ndarray) -> float:
    """Kernel between two single points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xp = np.atleast_1d(np.asarray(xp, dtype=float))
    if x.shape != xp.shape:
        raise ValueError("point dimensions differ")
    return float(kernel_matrix(params, x[None, :], xp[None, :])[0, 0])


@dataclass
class GPModel:
    """Fitted GP: training data, hyperparameters, and cached factorization.

    ``noise_var`` is the per-point noise variance (the nugget); the factorized
    diagonal additionally carries ``jitter`` for numerical stability.
    ``noise_scalar`` is set when the noise is homoskedastic, enabling
    predictive variances that include noise at new locations.
    """

    X: np.ndarray
    y: np.ndarray
    mean_const: float
    kernel: KernelParams
    noise_var: np.ndarray
    noise_scalar: float | None
    jitter: float
    chol: np.ndarray
    alpha: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def effective_nugget(self) -> np.ndarray:
        """Diagonal actually added to the covariance: noise plus jitter."""
        return self.noise_var + self.jitter


@dataclass
class Prediction:
    mean: np.ndarray
    var: np.ndarray
    var_with_noise: np.ndarray | None = None


def build_model(
    X: np.ndarray,
    y: np.ndarray,
    kernel: KernelParams,
    mean_const: float | None = None,
    nugget: float | np.ndarray = 0.0,
) -> GPModel:
    """Assemble a model at fixed hyperparameters: factorize, no fitting.

    ``mean_const=None`` estimates the constant mean by GLS. Raises
    ``LinAlgError`` when the covariance cannot be factorized.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n = X.shape[0]
    if y.shape[0] != n:
        raise ValueError("X and y lengths differ")
    noise_scalar = float(nugget) if np.ndim(nugget) == 0 else None
    noise_var = np.broadcast_to(np.asarray(nugget, dtype=float), (n,)).copy()
    if np.any(noise_var < 0):
        raise ValueError("nugget must be nonnegative")
    jitter = JITTER_REL * kernel.signal_var
    if n == 0:
        if mean_const is None:
            raise ValueError("empty model needs an explicit mean")
        return GPModel(X, y, float(mean_const), kernel, noise_var, noise_scalar,
                       jitter, np.zeros((0, 0)), np.zeros(0))
    K = kernel_matrix(kernel, X)
    M = K + np.diag(noise_var + jitter)
    L = cholesky(M, lower=True)
    if mean_const is None:
        # GLS through triangular solves: the denominator is a sum of squares,
        # immune to the cancellation a direct 1'M^-1 1 suffers near singularity
        v = solve_triangular(L, np.ones(n), lower=True)
        u = solve_triangular(L, y, lower=True)
        mean_const = float(v @ u / (v @ v))
    alpha = cho_solve((L, True), y - mean_const)
    return GPModel(X, y, float(mean_const), kernel, noise_var, noise_scalar, jitter, L, alpha)


def log_marginal_likelihood(model: GPModel) -> float:
    """Gaussian log evidence of the training data under the fitted model."""
    resid = model.y - model.mean_const
    return float(
        -0.5 * resid @ model.alpha
        - np.log(np.diag(model.chol)).sum()
        - 0.5 * model.n * np.log(2.0 * np.pi)
    )


def predict(model: GPModel, Xnew: np.ndarray) -> Prediction:
    """Posterior mean and variance at new points.

    ``var`` is the latent-function variance (no noise). ``var_with_noise``
    adds the scalar noise variance when the model is homoskedastic; with
    per-point noise it is None and the caller supplies noise at new
    locations itself.
    """
    Xnew = np.atleast_2d(np.asarray(Xnew, dtype=float))
    if Xnew.shape[1] != model.p:
        raise ValueError("prediction inputs have wrong dimension")
    prior_var = model.kernel.signal_var
    if model.n == 0:
        mean = np.full(Xnew.shape[0], model.mean_const)
        var = np.full(Xnew.shape[0], prior_var)
    else:
        Ks = kernel_matrix(model.kernel, model.X, Xnew)
        mean = model.mean_const + Ks.T @ model.alpha
        v = solve_triangular(model.chol, Ks, lower=True)
        var = np.maximum(prior_var - (v**2).sum(axis=0), 0.0)
    var_with_noise = var + model.noise_scalar if model.noise_scalar is not None else None
    return Prediction(mean=mean, var=var, var_with_noise=var_with_noise)


def _theta_parts(theta, p, estimate_noise):
    ell = np.exp(theta[:p])
    s2 = float(np.exp(theta[p]))
    noise = float(np.exp(theta[p + 1])) if estimate_noise else None
    return ell, s2, noise


def _nll_and_grad(theta, X, y, family, fixed_noise, estimate_noise):
    """Negative profiled log marginal likelihood and its gradient.

    Parameters are logs of (lengthscales, signal_var[, noise_var]); the
    constant mean is profiled out by GLS, which leaves the gradient exact.
    """
    n, p = X.shape
    ell, s2, noise = _theta_parts(theta, p, estimate_noise)
    noise_diag = np.full(n, noise) if estimate_noise else np.broadcast_to(fixed_noise, (n,))
    jitter = JITTER_REL * s2
    d2 = _scaled_sqdist(X, X, ell)
    C = _corr_from_sqdist(d2, family)
    K = s2 * C
    M = K + np.diag(noise_diag + jitter)
    try:
        L = cholesky(M, lower=True)
    except LinAlgError:
        return 1e25, np.zeros_like(theta)
    v = solve_triangular(L, np.ones(n), lower=True)
    u = solve_triangular(L, y, lower=True)
    mu = v @ u / (v @ v)
    resid = y - mu
    alpha = cho_solve((L, True), resid)
    nll = 0.5 * resid @ alpha + np.log(np.diag(L)).sum() + 0.5 * n * np.log(2.0 * np.pi)

    Minv = cho_solve((L, True), np.eye(n))
    A = np.outer(alpha, alpha) - Minv
    grad = np.zeros_like(theta)
    if family == "sqexp":
        dK_dr_factor = K
    else:
        r = np.sqrt(d2)
        dK_dr_factor = s2 * (5.0 / 3.0) * (1.0 + _SQRT5 * r) * np.exp(-_SQRT5 * r)
    for d in range(p):
        S = ((X[:, d, None] - X[None, :, d]) / ell[d]) ** 2
        grad[d] = 0.5 * (A * (dK_dr_factor * S)).sum()
    # d/dlog s2 covers both the kernel and the proportional jitter
    grad[p] = 0.5 * (A * K).sum() + 0.5 * np.trace(A) * jitter
    if estimate_noise:
        grad[p + 1] = 0.5 * np.trace(A) * noise
    return nll, -grad


def fit(
    X: np.ndarray,
    y: np.ndarray,
    kernel_family: str = "matern52",
    nugget: float | np.ndarray | str = "estimate",
    bounds: dict | None = None,
    n_starts: int = 10,
    rng: np.random.Generator | None = None,
) -> GPModel:
    """Fit hyperparameters by maximizing the log marginal likelihood.

    Multi-start L-BFGS over log parameters; y is standardized internally and
    the returned model is expressed back in the original units. ``nugget``
    is either ``"estimate"`` (scalar noise learned jointly) or a fixed scalar
    / per-point vector.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n, p = X.shape
    if n < 2:
        raise ValueError("need at least two training points")
    if y.shape[0] != n:
        raise ValueError("X and y lengths differ")
    if rng is None:
        rng = np.random.default_rng()
    box = dict(DEFAULT_BOUNDS)
    if bounds:
        box.update(bounds)

    y_loc = float(y.mean())
    y_scale = float(y.std())
    if y_scale < 1e-12:
        y_scale = 1.0
    ystd = (y - y_loc) / y_scale

    estimate_noise = isinstance(nugget, str)
    if estimate_noise:
        if nugget != "estimate":
            raise ValueError(f"unknown nugget mode {nugget!r}")
        fixed_noise = None
    else:
        fixed_noise = np.asarray(nugget, dtype=float) / y_scale**2
        if np.any(fixed_noise < 0):
            raise ValueError("nugget must be nonnegative")

    names = ["lengthscale"] * p + ["signal_var"] + (["noise_var"] if estimate_noise else [])
    log_bounds = [tuple(np.log(box[nm])) for nm in names]
    dim = len(names)
    starts_unit = lhd(n_starts, dim, rng)
    lb = np.array([b[0] for b in log_bounds])
    ub = np.array([b[1] for b in log_bounds])
    starts = lb + starts_unit * (ub - lb)

    best_theta = None
    best_nll = np.inf
    for theta0 in starts:
        res = minimize(
            _nll_and_grad,
            theta0,
            args=(X, ystd, kernel_family, fixed_noise, estimate_noise),
            jac=True,
            method="L-BFGS-B",
            bounds=log_bounds,
        )
        if np.isfinite(res.fun) and res.fun < best_nll and res.fun < 1e24:
            best_nll = float(res.fun)
            best_theta = res.x
    if best_theta is None:
        raise FitError("all hyperparameter starts failed to factorize")

    ell, s2, noise = _theta_parts(best_theta, p, estimate_noise)
    kernel = KernelParams(ell, s2 * y_scale**2, kernel_family)
    noise_orig = noise * y_scale**2 if estimate_noise else np.asarray(nugget, dtype=float)
    return build_model(X, y, kernel, mean_const=None, nugget=noise_orig)


def gp_to_dict(model: GPModel) -> dict:
    return {
        "kind": "gp",
        "family": model.kernel.family,
        "lengthscales": model.kernel.lengthscales.tolist(),
        "signal_var": model.kernel.signal_var,
        "mean_const": model.mean_const,
        "noise_var": model.noise_var.tolist(),
        "noise_scalar": model.noise_scalar,
        "x": model.X.tolist(),
        "y": model.y.tolist(),
    }


def gp_from_dict(d: dict) -> GPModel:
    kernel = KernelParams(np.array(d["lengthscales"]), d["signal_var"], d["family"])
    nugget = d["noise_scalar"] if d["noise_scalar"] is not None else np.array(d["noise_var"])
    return build_model(np.array(d["x"]), np.array(d["y"]), kernel,
                       mean_const=d["mean_const"], nugget=nugget)
