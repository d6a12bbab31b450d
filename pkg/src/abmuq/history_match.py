"""History matching: implausibility, NROY filtering, multi-wave refocusing.

An observation is compared to the emulator's prediction, standardized by the
combined observation-error, discrepancy, and emulator variances. Points whose
implausibility exceeds the threshold under any wave's emulator are ruled out;
the surviving (NROY) space seeds the next wave's design.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .classify import ClassifierModel, collapse_labels, fit_classifier, predict_prob
from .design import ReplicatedDesign
from .hetgp import HetGPModel, fit_hetgp, predict_hetgp, summarize_replicates
from .seqdesign import Run, Simulator


class EmptyNroyError(RuntimeError):
    """The not-ruled-out-yet region could not supply the requested points."""

    def __init__(self, message: str, nroy_fraction_estimate: float):
        super().__init__(message)
        self.nroy_fraction_estimate = nroy_fraction_estimate


@dataclass
class Observation:
    """Calibration target with its error and discrepancy variances."""

    z: float
    var_e: float
    var_d: float

    def __post_init__(self):
        if self.var_e < 0 or self.var_d < 0:
            raise ValueError("variances must be nonnegative")


def implausibility(model: HetGPModel, x: np.ndarray, obs: Observation,
                   include_intrinsic: bool = True) -> np.ndarray:
    """Standardized distance between the observation and the emulator mean.

    The denominator combines observation error, model discrepancy, and the
    emulator's mean variance; when the observation is a single stochastic
    realization of the simulator (the default), the intrinsic variance is
    counted as well.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    pred = predict_hetgp(model, x)
    total = obs.var_e + obs.var_d + pred.var_mean
    if include_intrinsic:
        total = total + pred.intrinsic_var
    if np.any(total <= 0):
        raise ValueError("total variance must be positive to standardize")
    return np.abs(obs.z - pred.mean) / np.sqrt(total)


WaveFilter = tuple[HetGPModel, ClassifierModel | None]


def _membership_mask(filters: Sequence[WaveFilter], samples: np.ndarray, obs: Observation,
                     threshold: float, include_intrinsic: bool) -> np.ndarray:
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    mask = np.ones(samples.shape[0], dtype=bool)
    for model, clf in filters:
        if not mask.any():
            break
        if clf is not None:
            mask &= predict_prob(clf, samples) >= 0.5
        mask &= implausibility(model, samples, obs, include_intrinsic) <= threshold
    return mask


def nroy_filter(
    model: HetGPModel,
    classifier: ClassifierModel | None,
    samples: np.ndarray,
    obs: Observation,
    threshold: float,
    prior_waves: Sequence[WaveFilter] = (),
    include_intrinsic: bool = True,
) -> np.ndarray:
    """Keep samples not ruled out by the current wave nor by any prior wave.

    A point survives when its implausibility stays at or below the threshold
    under every wave's emulator and every wave's classifier gives the output
    at least even odds of existing.
    """
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    filters = list(prior_waves) + [(model, classifier)]
    return samples[_membership_mask(filters, samples, obs, threshold, include_intrinsic)]


@dataclass
class WaveResult:
    """State of the input space after one design-fit-filter cycle."""

    wave_index: int
    model: HetGPModel
    classifier: ClassifierModel | None
    obs: Observation
    threshold: float
    include_intrinsic: bool
    prior: tuple[WaveFilter, ...]
    nroy_samples: np.ndarray
    nroy_fraction: float
    runs: list[Run] = field(default_factory=list)
    next_design: ReplicatedDesign | None = None

    def filters(self) -> list[WaveFilter]:
        return list(self.prior) + [(self.model, self.classifier)]

    def contains(self, samples: np.ndarray) -> np.ndarray:
        """Boolean NROY membership under this wave and all earlier ones."""
        return _membership_mask(self.filters(), samples, self.obs,
                                self.threshold, self.include_intrinsic)


def sample_nroy(
    wave: WaveResult,
    n: int,
    rng: np.random.Generator,
    attempt_cap: int = 100_000,
    pool_factor: int = 4,
) -> np.ndarray:
    """Draw n space-filling points from the surviving region.

    Uniform rejection sampling builds a pool of accepted candidates (up to
    ``pool_factor * n`` of them), then a greedy maximin pass picks n. Raises
    ``EmptyNroyError`` with the acceptance-rate estimate when the cap is hit
    before n points are found.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    p = wave.model.p
    target_pool = pool_factor * n
    accepted: list[np.ndarray] = []
    n_accepted = 0
    attempts = 0
    batch = max(256, 4 * n)
    while attempts < attempt_cap and n_accepted < target_pool:
        m = min(batch, attempt_cap - attempts)
        cand = rng.random((m, p))
        keep = wave.contains(cand)
        accepted.append(cand[keep])
        n_accepted += int(keep.sum())
        attempts += m
    pool = np.vstack(accepted) if accepted else np.empty((0, p))
    if len(pool) < n:
        frac = len(pool) / attempts if attempts else 0.0
        raise EmptyNroyError(
            f"only {len(pool)} NROY points found in {attempts} attempts "
            f"(acceptance rate {frac:.2e})",
            nroy_fraction_estimate=frac,
        )
    if len(pool) == n:
        return pool
    # greedy maximin subselection from the accepted pool
    chosen = [0]
    d2 = ((pool - pool[0]) ** 2).sum(axis=1)
    for _ in range(n - 1):
        nxt = int(np.argmax(d2))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((pool - pool[nxt]) ** 2).sum(axis=1))
    return pool[chosen]


def evaluation_grid(p: int, resolution: int = 200) -> np.ndarray:
    """Fixed grid shared across waves for comparable NROY volume estimates."""
    if p == 2:
        axis = np.linspace(0.0, 1.0, resolution)
        g1, g2 = np.meshgrid(axis, axis, indexing="ij")
        return np.column_stack([g1.ravel(), g2.ravel()])
    from scipy.stats import qmc

    return qmc.Sobol(d=p, scramble=False).random(2**14)


def _simulate_design(design: ReplicatedDesign, simulate: Simulator,
                     rng: np.random.Generator) -> list[Run]:
    runs = []
    for x, reps in zip(design.points, design.replicates):
        for _ in range(int(reps)):
            seed = int(rng.integers(2**63))
            y = simulate(x, seed)
            runs.append(Run(tuple(x), seed, None if y is None else float(y)))
    return runs


def run_waves(
    simulate: Simulator,
    obs: Observation,
    n_waves: int,
    points_per_wave: int,
    replicates: int,
    threshold: float,
    rng: np.random.Generator,
    initial_design: ReplicatedDesign | None = None,
    initial_runs: Sequence[Run] | None = None,
    include_intrinsic: bool = True,
    grid_resolution: int = 200,
    kernel_family: str = "matern52",
    classifier_rng: np.random.Generator | None = None,
) -> list[WaveResult]:
    """Iterate design -> simulate -> fit -> filter for ``n_waves`` waves.

    Wave one uses ``initial_runs`` when given, otherwise it simulates
    ``initial_design``. Each later wave's design is sampled from the space
    not yet ruled out; ruled-out space only ever grows because membership is
    the conjunction of every wave's test. Stops early when the NROY region
    empties or cannot supply the next design.
    """
    if n_waves < 1:
        raise ValueError("need n_waves >= 1")
    if replicates < 2:
        raise ValueError("need >= 2 replicates per point to learn the intrinsic variance")
    if initial_runs is None:
        if initial_design is None:
            raise ValueError("provide initial_runs or initial_design")
        runs = _simulate_design(initial_design, simulate, rng)
    else:
        runs = list(initial_runs)

    grid = evaluation_grid(len(runs[0].x), grid_resolution)
    filters: list[WaveFilter] = []
    waves: list[WaveResult] = []
    for w in range(n_waves):
        X_all = np.array([r.x for r in runs])
        exists = np.array([r.y is not None for r in runs])
        clf = None
        if exists.any() and not exists.all():
            ux, labels = collapse_labels(X_all, exists)
            if len(np.unique(labels)) == 2:
                clf = fit_classifier(ux, labels, kernel_family, rng=classifier_rng or rng)
        Xq = np.array([r.x for r in runs if r.y is not None])
        yq = np.array([r.y for r in runs if r.y is not None])
        model = fit_hetgp(summarize_replicates(Xq, yq), kernel_family, rng=rng)

        mask = _membership_mask(filters + [(model, clf)], grid, obs, threshold,
                                include_intrinsic)
        wave = WaveResult(
            wave_index=w,
            model=model,
            classifier=clf,
            obs=obs,
            threshold=threshold,
            include_intrinsic=include_intrinsic,
            prior=tuple(filters),
            nroy_samples=grid[mask],
            nroy_fraction=float(mask.mean()),
            runs=list(runs),
        )
        waves.append(wave)
        filters.append((model, clf))
        if w == n_waves - 1:
            break
        if not mask.any():
            break
        try:
            next_points = sample_nroy(wave, points_per_wave, rng)
        except EmptyNroyError:
            break
        wave.next_design = ReplicatedDesign(next_points,
                                            np.full(len(next_points), replicates))
        runs = _simulate_design(wave.next_design, simulate, rng)
    return waves
