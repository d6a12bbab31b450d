"""Heteroskedastic GP built from replicate sample moments.

Two coupled regressions: a GP on the per-point sample means, whose nugget is
the input-dependent intrinsic variance scaled by the replicate count, and an
independent GP on the log sample variances that supplies that intrinsic
variance (in logs, so it is positive by construction).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gp

# relative floor applied to sample variances before taking logs
VARIANCE_FLOOR_REL = 1e-6


@dataclass
class TrainingSummary:
    """Replicate groups collapsed to per-point sample moments."""

    unique_x: np.ndarray
    ybar: np.ndarray
    s2: np.ndarray
    counts: np.ndarray
    s2_imputed: np.ndarray  # True where counts < 2 and s2 had to be filled in

    @property
    def n(self) -> int:
        return self.unique_x.shape[0]

    @property
    def p(self) -> int:
        return self.unique_x.shape[1]


@dataclass
class HetGPModel:
    """Paired mean / log-variance GPs over the replicate summaries."""

    mean_gp: gp.GPModel
    logvar_gp: gp.GPModel
    counts: np.ndarray

    @property
    def unique_x(self) -> np.ndarray:
        return self.mean_gp.X

    @property
    def p(self) -> int:
        return self.mean_gp.p


@dataclass
class HetPrediction:
    mean: np.ndarray
    var_mean: np.ndarray
    intrinsic_var: np.ndarray

    @property
    def total_var(self) -> np.ndarray:
        return self.var_mean + self.intrinsic_var


def summarize_replicates(x_full: np.ndarray, y_full: np.ndarray) -> TrainingSummary:
    """Group runs by exact input equality into per-point sample moments.

    Groups appear in first-occurrence order. Points with a single replicate
    get their sample variance imputed (mean of the valid variances) and are
    flagged so the variance GP can skip them.
    """
    x_full = np.atleast_2d(np.asarray(x_full, dtype=float))
    y_full = np.asarray(y_full, dtype=float).ravel()
    if x_full.shape[0] == 0:
        raise ValueError("no runs to summarize")
    if x_full.shape[0] != y_full.shape[0]:
        raise ValueError("inputs and outputs have different lengths")

    index: dict[bytes, int] = {}
    groups: list[list[float]] = []
    rows: list[np.ndarray] = []
    for xi, yi in zip(x_full, y_full):
        key = xi.tobytes()
        at = index.get(key)
        if at is None:
            index[key] = len(groups)
            groups.append([yi])
            rows.append(xi)
        else:
            groups[at].append(yi)

    unique_x = np.array(rows)
    counts = np.array([len(g) for g in groups], dtype=int)
    ybar = np.array([np.mean(g) for g in groups])
    s2 = np.array([np.var(g, ddof=1) if len(g) >= 2 else np.nan for g in groups])
    imputed = counts < 2
    valid = ~imputed
    fill = float(np.mean(s2[valid])) if valid.any() else 0.0
    s2 = np.where(imputed, fill, s2)
    return TrainingSummary(unique_x, ybar, s2, counts, imputed)


def variance_floor(summary: TrainingSummary) -> float:
    """Positive floor for sample variances, guarding log(0) on degenerate groups."""
    return max(VARIANCE_FLOOR_REL * float(np.var(summary.ybar)), 1e-12)


def fit_hetgp(
    summary: TrainingSummary,
    kernel_family: str = "matern52",
    rng: np.random.Generator | None = None,
    n_starts: int = 10,
) -> HetGPModel:
    """Two-stage fit: log-variance GP first, then the mean GP with its nugget.

    Stage one regresses log sample variances (floored) on the inputs over the
    points with at least two replicates. Stage two fits the mean GP to the
    sample means with the fixed per-point nugget exp(logvar mean) / count,
    the noise variance of an average of ``count`` draws.
    """
    if rng is None:
        rng = np.random.default_rng()
    rng_logvar, rng_mean = rng.spawn(2)
    valid = summary.counts >= 2
    if valid.sum() < 2:
        raise gp.FitError("need at least two points with >= 2 replicates to learn the variance")
    floor = variance_floor(summary)
    log_s2 = np.log(np.maximum(summary.s2[valid], floor))
    logvar_gp = gp.fit(summary.unique_x[valid], log_s2, kernel_family,
                       nugget="estimate", rng=rng_logvar, n_starts=n_starts)
    tau2_hat = np.exp(gp.predict(logvar_gp, summary.unique_x).mean)
    mean_gp = gp.fit(summary.unique_x, summary.ybar, kernel_family,
                     nugget=tau2_hat / summary.counts, rng=rng_mean, n_starts=n_starts)
    return HetGPModel(mean_gp=mean_gp, logvar_gp=logvar_gp, counts=summary.counts.copy())


def rebuild_hetgp(model: HetGPModel, summary: TrainingSummary) -> HetGPModel:
    """Refactorize both GPs on new data with hyperparameters held fixed.

    Used between full refits in sequential design: the data (and hence the
    GLS mean and the factors) update, the kernels and the log-variance
    nugget do not.
    """
    valid = summary.counts >= 2
    floor = variance_floor(summary)
    log_s2 = np.log(np.maximum(summary.s2[valid], floor))
    logvar_gp = gp.build_model(summary.unique_x[valid], log_s2, model.logvar_gp.kernel,
                               mean_const=None, nugget=model.logvar_gp.noise_scalar or 0.0)
    tau2_hat = np.exp(gp.predict(logvar_gp, summary.unique_x).mean)
    mean_gp = gp.build_model(summary.unique_x, summary.ybar, model.mean_gp.kernel,
                             mean_const=None, nugget=tau2_hat / summary.counts)
    return HetGPModel(mean_gp=mean_gp, logvar_gp=logvar_gp, counts=summary.counts.copy())


def predict_hetgp(model: HetGPModel, xnew: np.ndarray) -> HetPrediction:
    """Mean response, its latent variance, and the intrinsic noise variance.

    The intrinsic variance is the exponentiated posterior mean of the
    log-variance GP, taken as known (no variance-of-variance propagation).
    """
    pm = gp.predict(model.mean_gp, xnew)
    lv = gp.predict(model.logvar_gp, xnew)
    return HetPrediction(mean=pm.mean, var_mean=pm.var, intrinsic_var=np.exp(lv.mean))


def hetgp_to_dict(model: HetGPModel) -> dict:
    return {
        "kind": "hetgp",
        "mean_gp": gp.gp_to_dict(model.mean_gp),
        "logvar_gp": gp.gp_to_dict(model.logvar_gp),
        "counts": model.counts.tolist(),
    }


def hetgp_from_dict(d: dict) -> HetGPModel:
    return HetGPModel(
        mean_gp=gp.gp_from_dict(d["mean_gp"]),
        logvar_gp=gp.gp_from_dict(d["logvar_gp"]),
        counts=np.array(d["counts"], dtype=int),
    )
