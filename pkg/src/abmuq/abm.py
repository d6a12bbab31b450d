"""Wolf-sheep predator-prey simulator on a toroidal grid.

The scalar output of a run is the time step at which the wolves go extinct.
Runs that never reach extinction (runaway sheep growth or the step horizon)
are censored and carry no quantitative output.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, asdict

import numpy as np

OUTCOME_EXTINCT = "extinct"
OUTCOME_CENSORED_HORIZON = "censored_horizon"
OUTCOME_CENSORED_CAP = "censored_cap"

# moves are one step to a uniformly chosen 8-neighborhood cell
_NEIGHBOR_STEPS = np.array(
    [[-1, -1], [-1, 0], [-1, 1], [0, -1], [0, 1], [1, -1], [1, 0], [1, 1]],
    dtype=np.int64,
)


@dataclass
class SimConfig:
    """Input parameters of the simulator.

    ``sheep_repro`` and ``wolf_repro`` are the two free inputs on [0,1]; all
    other fields default to the fixed values of the study configuration.
    """

    sheep_repro: float
    wolf_repro: float
    init_sheep: int = 100
    init_wolves: int = 50
    wolf_gain_from_food: int = 20
    wolf_init_energy: int = 40
    grid_size: int = 51
    max_steps: int = 2000
    sheep_cap: int = 10000

    def __post_init__(self):
        if not (0.0 <= self.sheep_repro <= 1.0 and 0.0 <= self.wolf_repro <= 1.0):
            raise ValueError("reproduction rates must lie in [0, 1]")
        if self.grid_size < 1 or self.max_steps < 1:
            raise ValueError("grid_size and max_steps must be >= 1")
        if self.init_sheep < 0 or self.init_wolves < 0:
            raise ValueError("initial populations must be >= 0")
        if self.wolf_gain_from_food <= 0:
            raise ValueError("wolf_gain_from_food must be > 0")
        if self.wolf_init_energy <= 0:
            raise ValueError("wolf_init_energy must be > 0")
        if self.sheep_cap < 1:
            raise ValueError("sheep_cap must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown SimConfig keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "SimConfig":
        return cls.from_dict(json.loads(text))


@dataclass
class SimOutcome:
    """Result of one run: extinction time or a censoring flag."""

    outcome: str  # extinct | censored_horizon | censored_cap
    time: int
    final_sheep: int
    final_wolves: int

    @property
    def is_extinct(self) -> bool:
        return self.outcome == OUTCOME_EXTINCT

    @property
    def extinction_time(self) -> float | None:
        return float(self.time) if self.is_extinct else None


@dataclass
class WorldState:
    """Full simulation state; positions are integer grid cells."""

    step: int
    sheep_pos: np.ndarray  # (n_sheep, 2)
    wolf_pos: np.ndarray  # (n_wolves, 2)
    wolf_energy: np.ndarray  # (n_wolves,)
    rng: np.random.Generator

    @property
    def n_sheep(self) -> int:
        return self.sheep_pos.shape[0]

    @property
    def n_wolves(self) -> int:
        return self.wolf_pos.shape[0]

    def total_wolf_energy(self) -> int:
        return int(self.wolf_energy.sum())

    def clone(self) -> "WorldState":
        return WorldState(
            step=self.step,
            sheep_pos=self.sheep_pos.copy(),
            wolf_pos=self.wolf_pos.copy(),
            wolf_energy=self.wolf_energy.copy(),
            rng=copy.deepcopy(self.rng),
        )

    def fingerprint(self) -> str:
        """Stable digest of the full state, including the generator state."""
        h = hashlib.sha256()
        h.update(str(self.step).encode())
        h.update(np.ascontiguousarray(self.sheep_pos, dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(self.wolf_pos, dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(self.wolf_energy, dtype=np.int64).tobytes())
        h.update(json.dumps(self.rng.bit_generator.state, sort_keys=True, default=str).encode())
        return h.hexdigest()


@dataclass
class StepStats:
    """Bookkeeping from one tick, for energy-accounting checks."""

    meals: int
    wolves_at_move: int
    energy_before: int
    energy_after_eat: int


def initial_state(config: SimConfig, seed: int) -> WorldState:
    rng = np.random.default_rng(seed)
    g = config.grid_size
    sheep = rng.integers(0, g, size=(config.init_sheep, 2), dtype=np.int64)
    wolves = rng.integers(0, g, size=(config.init_wolves, 2), dtype=np.int64)
    energy = np.full(config.init_wolves, config.wolf_init_energy, dtype=np.int64)
    return WorldState(step=0, sheep_pos=sheep, wolf_pos=wolves, wolf_energy=energy, rng=rng)


def _eat_phase(state: WorldState, grid: int, gain: int) -> int:
    """Each wolf co-located with sheep eats exactly one, distinct sheep.

    Wolves take priority in agent-id (row) order within a cell; the sheep a
    wolf gets is uniform over that cell's remaining sheep. Returns the meal
    count.
    """
    nw, ns = state.n_wolves, state.n_sheep
    if nw == 0 or ns == 0:
        return 0
    wolf_cells = state.wolf_pos[:, 0] * grid + state.wolf_pos[:, 1]
    sheep_cells = state.sheep_pos[:, 0] * grid + state.sheep_pos[:, 1]
    shuffle = state.rng.permutation(ns)
    s_order = np.argsort(sheep_cells[shuffle], kind="stable")
    s_cells_sorted = sheep_cells[shuffle][s_order]
    w_order = np.argsort(wolf_cells, kind="stable")
    w_cells_sorted = wolf_cells[w_order]
    # rank of each wolf within its cell (stable sort keeps id order)
    first = np.searchsorted(w_cells_sorted, w_cells_sorted, side="left")
    rank = np.arange(nw) - first
    lo = np.searchsorted(s_cells_sorted, w_cells_sorted, side="left")
    hi = np.searchsorted(s_cells_sorted, w_cells_sorted, side="right")
    eats = rank < (hi - lo)
    if not eats.any():
        return 0
    eaten = shuffle[s_order[(lo + rank)[eats]]]
    state.wolf_energy[w_order[eats]] += gain
    keep = np.ones(ns, dtype=bool)
    keep[eaten] = False
    state.sheep_pos = state.sheep_pos[keep]
    return int(eats.sum())


def _step_inplace(state: WorldState, config: SimConfig) -> StepStats:
    """One synchronous tick: move all, eat, reproduce, cull."""
    rng = state.rng
    g = config.grid_size
    energy_before = state.total_wolf_energy()
    wolves_at_move = state.n_wolves

    if state.n_sheep:
        moves = _NEIGHBOR_STEPS[rng.integers(8, size=state.n_sheep)]
        state.sheep_pos = (state.sheep_pos + moves) % g
    if state.n_wolves:
        moves = _NEIGHBOR_STEPS[rng.integers(8, size=state.n_wolves)]
        state.wolf_pos = (state.wolf_pos + moves) % g
        state.wolf_energy = state.wolf_energy - 1

    meals = _eat_phase(state, g, config.wolf_gain_from_food)
    energy_after_eat = state.total_wolf_energy()

    if state.n_sheep:
        born = rng.random(state.n_sheep) < config.sheep_repro
        if born.any():
            state.sheep_pos = np.concatenate([state.sheep_pos, state.sheep_pos[born]])
    if state.n_wolves:
        born = rng.random(state.n_wolves) < config.wolf_repro
        if born.any():
            # parent keeps the larger half so total energy is conserved
            child_energy = state.wolf_energy[born] // 2
            state.wolf_energy[born] -= child_energy
            state.wolf_pos = np.concatenate([state.wolf_pos, state.wolf_pos[born]])
            state.wolf_energy = np.concatenate([state.wolf_energy, child_energy])

    alive = state.wolf_energy > 0
    if not alive.all():
        state.wolf_pos = state.wolf_pos[alive]
        state.wolf_energy = state.wolf_energy[alive]

    state.step += 1
    return StepStats(
        meals=meals,
        wolves_at_move=wolves_at_move,
        energy_before=energy_before,
        energy_after_eat=energy_after_eat,
    )


def step(state: WorldState, config: SimConfig) -> WorldState:
    """Pure single tick: returns the successor state, leaving the input intact."""
    new = state.clone()
    _step_inplace(new, config)
    return new


def step_with_stats(state: WorldState, config: SimConfig) -> tuple[WorldState, StepStats]:
    new = state.clone()
    stats = _step_inplace(new, config)
    return new, stats


def run(config: SimConfig, seed: int) -> SimOutcome:
    """Run to wolf extinction or censoring; deterministic given (config, seed)."""
    state = initial_state(config, seed)
    if state.n_wolves == 0:
        return SimOutcome(OUTCOME_EXTINCT, 0, state.n_sheep, 0)
    while True:
        _step_inplace(state, config)
        if state.n_wolves == 0:
            return SimOutcome(OUTCOME_EXTINCT, state.step, state.n_sheep, 0)
        if state.step >= config.max_steps:
            return SimOutcome(OUTCOME_CENSORED_HORIZON, state.step, state.n_sheep, state.n_wolves)
        if state.n_sheep > config.sheep_cap:
            return SimOutcome(OUTCOME_CENSORED_CAP, state.step, state.n_sheep, state.n_wolves)


def replicate_seeds(base_seed: int, r: int) -> np.ndarray:
    """Deterministic, order-stable per-replicate seeds from one base seed."""
    if r < 1:
        raise ValueError("need r >= 1")
    return np.random.SeedSequence(base_seed).generate_state(r, np.uint64)


def run_replicates(config: SimConfig, base_seed: int, r: int) -> list[SimOutcome]:
    """r independent runs with seeds split deterministically from base_seed."""
    return [run(config, int(s)) for s in replicate_seeds(base_seed, r)]
