"""Sequential design by integrated mean squared prediction error (IMSPE).

Each iteration scores candidate additions - fresh points or replicates of
existing points - by the hypothetical IMSPE of the enlarged design at fixed
hyperparameters, runs the simulator at the winner, and refreshes the
emulator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

from . import gp
from .classify import ClassifierModel, predict_prob
from .design import lhd
from .hetgp import HetGPModel, fit_hetgp, predict_hetgp, rebuild_hetgp, summarize_replicates

# simulator contract: (point, seed) -> scalar output, or None when censored
Simulator = Callable[[np.ndarray, int], float | None]


class NoAdmissibleCandidatesError(RuntimeError):
    """Every candidate was rejected; the classifier likely needs refreshing."""


@dataclass
class ReferenceSet:
    """Quadrature proxy for the IMSPE integral: equal-weight points in [0,1]^p."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.shape[0] == 0:
            raise ValueError("reference set must not be empty")

    @property
    def m(self) -> int:
        return self.points.shape[0]


def build_reference(
    p: int,
    size: int = 512,
    classifier: ClassifierModel | None = None,
    min_size: int = 100,
    max_batches: int = 20,
) -> ReferenceSet:
    """Low-discrepancy reference set, excluding the censored region.

    Unscrambled Sobol points, filtered to classifier probability >= 0.5 when
    a classifier is given; more batches are drawn until ``min_size`` points
    survive.
    """
    sob = qmc.Sobol(d=p, scramble=False)
    kept: list[np.ndarray] = []
    total = 0
    for _ in range(max_batches):
        pts = sob.random(size)
        if classifier is not None:
            pts = pts[predict_prob(classifier, pts) >= 0.5]
        kept.append(pts)
        total += len(pts)
        if total >= min_size:
            break
    pts = np.vstack(kept)
    if len(pts) < min_size:
        raise NoAdmissibleCandidatesError(
            "classifier rejected nearly all reference candidates; refresh the classifier"
        )
    return ReferenceSet(pts)


def imspe(model: HetGPModel, reference: ReferenceSet) -> float:
    """Mean latent predictive variance of the mean response over the reference."""
    return float(predict_hetgp(model, reference.points).var_mean.mean())


def _latent_var(mgp: gp.GPModel, pts: np.ndarray) -> np.ndarray:
    return gp.predict(mgp, pts).var


def candidate_gain(model: HetGPModel, candidate: np.ndarray | int,
                   reference: ReferenceSet) -> float:
    """Hypothetical IMSPE if the candidate were added, hyperparameters fixed.

    An integer indexes an existing point (one more replicate: its nugget
    drops from tau2/a to tau2/(a+1)); an array is a fresh point whose nugget
    is the predicted intrinsic variance and whose pseudo-response is the
    predicted mean. The augmented covariance is refactorized from scratch.
    """
    mgp = model.mean_gp
    if isinstance(candidate, (int, np.integer)):
        i = int(candidate)
        if not 0 <= i < mgp.n:
            raise IndexError("replicate index out of range")
        a = model.counts[i]
        tau2 = mgp.noise_var[i] * a
        noise = mgp.noise_var.copy()
        noise[i] = tau2 / (a + 1)
        X_aug, y_aug = mgp.X, mgp.y
    else:
        x = np.asarray(candidate, dtype=float).ravel()
        if x.shape[0] != mgp.p or np.any(x < 0.0) or np.any(x > 1.0):
            raise ValueError("fresh candidate must lie in the unit hypercube")
        pred = predict_hetgp(model, x[None, :])
        X_aug = np.vstack([mgp.X, x])
        y_aug = np.append(mgp.y, pred.mean[0])
        noise = np.append(mgp.noise_var, pred.intrinsic_var[0])
    hyp = gp.build_model(X_aug, y_aug, mgp.kernel, mean_const=mgp.mean_const, nugget=noise)
    return float(_latent_var(hyp, reference.points).mean())


@dataclass
class Selection:
    """Winning candidate of one iteration plus everything it beat."""

    kind: str  # "new" | "replicate"
    x: np.ndarray
    replicate_index: int | None
    gain: float
    all_gains: np.ndarray


def select_next(
    model: HetGPModel,
    reference: ReferenceSet,
    rng: np.random.Generator,
    n_candidates: int = 100,
    classifier: ClassifierModel | None = None,
) -> Selection:
    """Score fresh LHD candidates plus every existing point as a replicate.

    Returns the argmin of the hypothetical IMSPE; ties resolve to the lowest
    index with fresh points listed before replicates. Fresh candidates that
    exactly coincide with existing points are scored as replicates.
    """
    p = model.p
    fresh = lhd(n_candidates, p, rng)
    if classifier is not None:
        fresh = fresh[predict_prob(classifier, fresh) >= 0.5]
    existing = {row.tobytes(): i for i, row in enumerate(model.unique_x)}
    fresh = np.array([x for x in fresh if x.tobytes() not in existing]).reshape(-1, p)

    candidates: list[np.ndarray | int] = [x for x in fresh]
    candidates += list(range(model.unique_x.shape[0]))
    if not candidates:
        raise NoAdmissibleCandidatesError(
            "no admissible candidates this iteration; refresh the classifier"
        )
    gains = np.array([candidate_gain(model, c, reference) for c in candidates])
    best = int(np.argmin(gains))
    if best < len(fresh):
        return Selection("new", fresh[best].copy(), None, float(gains[best]), gains)
    idx = best - len(fresh)
    return Selection("replicate", model.unique_x[idx].copy(), idx, float(gains[best]), gains)


@dataclass
class Run:
    """One simulator invocation; y is None when the run was censored."""

    x: tuple
    seed: int
    y: float | None


@dataclass
class HistoryRecord:
    iteration: int
    kind: str
    x: tuple
    gain: float
    imspe_before: float
    imspe_after: float
    total_replicates: int


@dataclass
class DesignState:
    """Everything the sequential loop carries between iterations."""

    all_runs: list[Run]
    model: HetGPModel
    history: list[HistoryRecord] = field(default_factory=list)

    def quantitative_runs(self) -> tuple[np.ndarray, np.ndarray]:
        rows = [(r.x, r.y) for r in self.all_runs if r.y is not None]
        X = np.array([r[0] for r in rows])
        y = np.array([r[1] for r in rows])
        return X, y

    def rep_design(self):
        from .design import ReplicatedDesign

        X, y = self.quantitative_runs()
        summary = summarize_replicates(X, y)
        return ReplicatedDesign(summary.unique_x, summary.counts)


def initial_state(runs: Sequence[Run], rng: np.random.Generator | None = None,
                  kernel_family: str = "matern52") -> DesignState:
    """Fit the starting emulator from an existing batch of runs."""
    runs = list(runs)
    X = np.array([r.x for r in runs if r.y is not None])
    y = np.array([r.y for r in runs if r.y is not None])
    model = fit_hetgp(summarize_replicates(X, y), kernel_family, rng=rng)
    return DesignState(all_runs=runs, model=model)


def run_sequential(
    state: DesignState,
    simulate: Simulator,
    budget: int,
    rng: np.random.Generator,
    reference: ReferenceSet | None = None,
    classifier: ClassifierModel | None = None,
    n_candidates: int = 100,
    refit_every: int = 1,
) -> DesignState:
    """Drive ``budget`` IMSPE iterations, mutating and returning the state.

    Hyperparameters are re-optimized every ``refit_every`` iterations; in
    between, the emulator is refactorized on the enlarged data at fixed
    hyperparameters so each choice still sees the newest runs.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    if reference is None:
        reference = build_reference(state.model.p, classifier=classifier)
    for it in range(budget):
        imspe_before = imspe(state.model, reference)
        sel = select_next(state.model, reference, rng, n_candidates, classifier)
        seed = int(rng.integers(2**63))
        y_val = simulate(sel.x, seed)
        state.all_runs.append(Run(tuple(sel.x), seed, None if y_val is None else float(y_val)))
        X, y = state.quantitative_runs()
        summary = summarize_replicates(X, y)
        if (it + 1) % refit_every == 0:
            state.model = fit_hetgp(summary, state.model.mean_gp.kernel.family, rng=rng)
        else:
            state.model = rebuild_hetgp(state.model, summary)
        state.history.append(
            HistoryRecord(
                iteration=it,
                kind=sel.kind,
                x=tuple(sel.x),
                gain=sel.gain,
                imspe_before=imspe_before,
                imspe_after=imspe(state.model, reference),
                total_replicates=int(summary.counts.sum()),
            )
        )
    return state


def nrmse(predicted: np.ndarray, truth: np.ndarray) -> float:
    """Root mean squared error normalized by the range of the truth."""
    predicted = np.asarray(predicted, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    rmse = float(np.sqrt(np.mean((predicted - truth) ** 2)))
    spread = float(truth.max() - truth.min())
    return rmse / spread if spread > 0 else rmse
