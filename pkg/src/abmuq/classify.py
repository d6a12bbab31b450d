"""Binary GP classification: latent GP, logistic link, Laplace inference.

Labels are +1 where the simulator produced a quantitative output and -1
where the run was censored. Class probabilities come from squashing the
latent posterior through the logistic sigmoid, integrated by Gauss-Hermite
quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.special import expit, log_expit

from .design import lhd
from .gp import JITTER_REL, KernelParams, kernel_matrix

GH_NODES, GH_WEIGHTS = np.polynomial.hermite.hermgauss(32)

DEFAULT_CLASSIFIER_BOUNDS = {
    "lengthscale": (0.03, 10.0),
    "signal_var": (0.25, 400.0),
}


class NewtonConvergenceError(RuntimeError):
    """Mode finding did not converge within the iteration budget."""


@dataclass
class ClassifierModel:
    """Laplace-approximate GP classifier at the posterior mode."""

    X: np.ndarray
    labels: np.ndarray
    kernel: KernelParams
    f_hat: np.ndarray
    grad_loglik: np.ndarray  # d log p(y|f) / df at the mode
    w_diag: np.ndarray  # negative log-likelihood Hessian diagonal at the mode
    chol_b: np.ndarray  # lower factor of B = I + W^1/2 K W^1/2
    log_marginal: float
    newton_objectives: list[float]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def collapse_labels(x_full: np.ndarray, exists: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Collapse replicate runs to one label per unique input.

    Majority vote over the replicate outcomes; ties count as censored, which
    keeps later stages away from inputs that are risky to run.
    """
    x_full = np.atleast_2d(np.asarray(x_full, dtype=float))
    exists = np.asarray(exists, dtype=bool).ravel()
    index: dict[bytes, int] = {}
    rows: list[np.ndarray] = []
    votes: list[list[bool]] = []
    for xi, ei in zip(x_full, exists):
        key = xi.tobytes()
        at = index.get(key)
        if at is None:
            index[key] = len(rows)
            rows.append(xi)
            votes.append([ei])
        else:
            votes[at].append(ei)
    labels = np.array([1 if sum(v) * 2 > len(v) else -1 for v in votes], dtype=int)
    return np.array(rows), labels


def _prior_cov(kernel: KernelParams, X: np.ndarray) -> np.ndarray:
    """Latent prior covariance; jittered for a stable inner solve."""
    K = kernel_matrix(kernel, X)
    return K + JITTER_REL * kernel.signal_var * np.eye(X.shape[0])


def _log_lik(labels: np.ndarray, f: np.ndarray) -> float:
    return float(log_expit(labels * f).sum())


def _laplace_mode(K: np.ndarray, labels: np.ndarray, max_iter: int = 100, tol: float = 1e-9):
    """Newton ascent to the latent posterior mode (logistic likelihood).

    Iterates in the a-parametrization f = K a so the penalized objective
    psi(a) = log p(y|Ka) - a'Ka/2 is cheap to evaluate; step halving keeps
    every iteration an improvement.
    """
    n = len(labels)
    t = (labels + 1) / 2.0
    a = np.zeros(n)
    f = np.zeros(n)
    psi = _log_lik(labels, f)
    objectives = [psi]
    grad_inf = np.inf
    for _ in range(max_iter):
        pi = expit(f)
        w = pi * (1.0 - pi)
        sw = np.sqrt(w)
        B = np.eye(n) + sw[:, None] * K * sw[None, :]
        L = cholesky(B, lower=True)
        b = w * f + (t - pi)
        a_new = b - sw * cho_solve((L, True), sw * (K @ b))
        step = 1.0
        while step > 1e-10:
            a_try = a + step * (a_new - a)
            f_try = K @ a_try
            psi_try = _log_lik(labels, f_try) - 0.5 * a_try @ f_try
            if psi_try > psi:
                break
            step *= 0.5
        else:
            break
        a, f, psi = a_try, f_try, psi_try
        objectives.append(psi)
        grad_inf = np.abs((t - expit(f)) - a).max()
        if grad_inf < tol:
            break
    return a, f, psi, objectives, grad_inf


def _laplace_evidence(kernel: KernelParams, X: np.ndarray, labels: np.ndarray) -> float:
    """Laplace approximation of log p(y | X, kernel)."""
    K = _prior_cov(kernel, X)
    _, f, psi, _, _ = _laplace_mode(K, labels)
    pi = expit(f)
    sw = np.sqrt(pi * (1.0 - pi))
    B = np.eye(len(labels)) + sw[:, None] * K * sw[None, :]
    L = cholesky(B, lower=True)
    return float(psi - np.log(np.diag(L)).sum())


def fit_classifier(
    X: np.ndarray,
    labels: np.ndarray,
    kernel_family: str = "matern52",
    bounds: dict | None = None,
    n_starts: int = 8,
    rng: np.random.Generator | None = None,
    kernel: KernelParams | None = None,
    max_newton_iter: int = 100,
) -> ClassifierModel:
    """Fit the latent GP classifier.

    Kernel hyperparameters maximize the Laplace approximation of the marginal
    likelihood over a seeded multi-start (Nelder-Mead polish of the best
    start); pass ``kernel`` to skip the search and only find the mode.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    labels = np.asarray(labels, dtype=int).ravel()
    if set(np.unique(labels)) - {-1, 1}:
        raise ValueError("labels must be +1 or -1")
    if len(np.unique(labels)) < 2:
        raise ValueError("need both classes present to fit a classifier")
    if len(np.unique(X.round(15), axis=0)) != X.shape[0]:
        raise ValueError("inputs must be deduplicated (collapse replicate labels first)")
    n, p = X.shape

    if kernel is None:
        if rng is None:
            rng = np.random.default_rng()
        box = dict(DEFAULT_CLASSIFIER_BOUNDS)
        if bounds:
            box.update(bounds)
        names = ["lengthscale"] * p + ["signal_var"]
        lb = np.array([np.log(box[nm][0]) for nm in names])
        ub = np.array([np.log(box[nm][1]) for nm in names])
        starts = lb + lhd(n_starts, p + 1, rng) * (ub - lb)

        def objective(theta):
            theta = np.clip(theta, lb, ub)
            k = KernelParams(np.exp(theta[:p]), float(np.exp(theta[p])), kernel_family)
            try:
                return -_laplace_evidence(k, X, labels)
            except np.linalg.LinAlgError:
                return 1e25

        values = [objective(th) for th in starts]
        best = starts[int(np.argmin(values))]
        res = minimize(objective, best, method="Nelder-Mead",
                       options={"maxiter": 80, "xatol": 1e-3, "fatol": 1e-6})
        theta = np.clip(res.x, lb, ub)
        kernel = KernelParams(np.exp(theta[:p]), float(np.exp(theta[p])), kernel_family)

    K = _prior_cov(kernel, X)
    a, f, psi, objectives, grad_inf = _laplace_mode(K, labels, max_iter=max_newton_iter)
    if grad_inf >= 1e-6:
        raise NewtonConvergenceError(
            f"posterior mode not found after {max_newton_iter} Newton steps "
            f"(gradient {grad_inf:.2e})"
        )
    pi = expit(f)
    w = pi * (1.0 - pi)
    sw = np.sqrt(w)
    B = np.eye(n) + sw[:, None] * K * sw[None, :]
    L = cholesky(B, lower=True)
    log_marginal = psi - np.log(np.diag(L)).sum()
    return ClassifierModel(
        X=X,
        labels=labels,
        kernel=kernel,
        f_hat=f,
        grad_loglik=(labels + 1) / 2.0 - pi,
        w_diag=w,
        chol_b=L,
        log_marginal=float(log_marginal),
        newton_objectives=objectives,
    )


def latent_predict(model: ClassifierModel, Xnew: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Laplace-approximate latent mean and variance at new points."""
    Xnew = np.atleast_2d(np.asarray(Xnew, dtype=float))
    if Xnew.shape[1] != model.p:
        raise ValueError("prediction inputs have wrong dimension")
    Ks = kernel_matrix(model.kernel, model.X, Xnew)
    fmean = Ks.T @ model.grad_loglik
    sw = np.sqrt(model.w_diag)
    v = solve_triangular(model.chol_b, sw[:, None] * Ks, lower=True)
    fvar = np.maximum(model.kernel.signal_var - (v**2).sum(axis=0), 1e-12)
    return fmean, fvar


def predict_prob(model: ClassifierModel, Xnew: np.ndarray) -> np.ndarray:
    """Probability that the output exists (label +1), in [0, 1]."""
    fmean, fvar = latent_predict(model, Xnew)
    z = fmean[None, :] + np.sqrt(2.0 * fvar)[None, :] * GH_NODES[:, None]
    probs = (GH_WEIGHTS[:, None] * expit(z)).sum(axis=0) / np.sqrt(np.pi)
    return np.clip(probs, 0.0, 1.0)


def predict_class(model: ClassifierModel, Xnew: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Hard labels: +1 where the class probability reaches the threshold."""
    if not (0.0 <= threshold <= 1.0):
        raise ValueError("threshold must lie in [0, 1]")
    return np.where(predict_prob(model, Xnew) >= threshold, 1, -1)


def probability_grid(model: ClassifierModel, resolution: int = 200):
    """Class-probability surface on a regular grid over the unit square."""
    axis = np.linspace(0.0, 1.0, resolution)
    g1, g2 = np.meshgrid(axis, axis, indexing="ij")
    pts = np.column_stack([g1.ravel(), g2.ravel()])
    probs = predict_prob(model, pts).reshape(resolution, resolution)
    return axis, probs


def decision_boundary(model: ClassifierModel, resolution: int = 200,
                      threshold: float = 0.5) -> list[np.ndarray]:
    """Iso-probability polylines extracted by marching squares.

    Returns a list of (k, 2) vertex arrays in input coordinates.
    """
    from skimage import measure

    axis, probs = probability_grid(model, resolution)
    contours = measure.find_contours(probs, threshold)
    scale = 1.0 / (resolution - 1)
    return [c * scale for c in contours]


def classifier_to_dict(model: ClassifierModel) -> dict:
    return {
        "kind": "classifier",
        "family": model.kernel.family,
        "lengthscales": model.kernel.lengthscales.tolist(),
        "signal_var": model.kernel.signal_var,
        "x": model.X.tolist(),
        "labels": model.labels.tolist(),
    }


def classifier_from_dict(d: dict) -> ClassifierModel:
    kernel = KernelParams(np.array(d["lengthscales"]), d["signal_var"], d["family"])
    return fit_classifier(np.array(d["x"]), np.array(d["labels"]), kernel=kernel)
