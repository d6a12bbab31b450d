"""Command-line pipeline: design, simulate, classify, fit, sequential, history-match.

Stages hand off through CSV/JSON files in the output directory so every
intermediate artifact can be inspected or re-entered. All randomness derives
from one mandatory root seed; repeated runs of the same config produce
byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import abm, classify, gp, hetgp, history_match, io, seqdesign
from .design import ReplicatedDesign, maximin_lhd

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_EMPTY_NROY = 4


class ConfigError(ValueError):
    pass


def _from_dict(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return cls(**d)


@dataclass
class DesignStageConfig:
    n_points: int = 30
    n_restarts: int = 20
    replicates: int = 10


@dataclass
class SequentialStageConfig:
    budget: int = 20
    n_candidates: int = 100
    refit_every: int = 1
    reference_size: int = 512


@dataclass
class HistoryMatchStageConfig:
    n_waves: int = 3
    points_per_wave: int = 20
    replicates: int = 5
    threshold: float = 3.0
    include_intrinsic: bool = True
    observation: dict = field(default_factory=lambda: {"z": 250.0, "var_e": 900.0, "var_d": 900.0})

    def obs(self) -> history_match.Observation:
        o = self.observation
        extra = set(o) - {"z", "var_e", "var_d"}
        if extra or set(o) != {"z", "var_e", "var_d"}:
            raise ConfigError("observation must have exactly the keys z, var_e, var_d")
        return history_match.Observation(float(o["z"]), float(o["var_e"]), float(o["var_d"]))


@dataclass
class PipelineConfig:
    seed: int
    out_dir: str = "out"
    jobs: int = 1
    grid_resolution: int = 100
    classify_resolution: int = 200
    kernel_family: str = "matern52"
    sim: dict = field(default_factory=dict)
    design: DesignStageConfig = field(default_factory=DesignStageConfig)
    sequential: SequentialStageConfig = field(default_factory=SequentialStageConfig)
    history_match: HistoryMatchStageConfig = field(default_factory=HistoryMatchStageConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        if "seed" not in d or d["seed"] is None:
            raise ConfigError("seed is mandatory (no wall-clock entropy)")
        for key, sub in (("design", DesignStageConfig),
                         ("sequential", SequentialStageConfig),
                         ("history_match", HistoryMatchStageConfig)):
            if key in d:
                d[key] = _from_dict(sub, d[key], key)
        cfg = _from_dict(cls, d, "config")
        if cfg.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        cfg.sim_config_probe()
        return cfg

    def sim_config_probe(self) -> None:
        # validates the fixed simulator fields early, with midpoint rates
        try:
            self.sim_config(np.array([0.5, 0.5]))
        except ValueError as e:
            raise ConfigError(f"bad sim config: {e}") from e

    def sim_config(self, x: np.ndarray) -> abm.SimConfig:
        fixed = dict(self.sim)
        unknown = set(fixed) - (set(abm.SimConfig.__dataclass_fields__)
                                - {"sheep_repro", "wolf_repro"})
        if unknown:
            raise ConfigError(f"unknown sim keys: {sorted(unknown)}")
        return abm.SimConfig(sheep_repro=float(x[0]), wolf_repro=float(x[1]), **fixed)


def load_config(path: str | None, seed_override: int | None,
                out_override: str | None, jobs_override: int | None) -> PipelineConfig:
    d = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {path}")
        d = io.read_json(p)
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
    if seed_override is not None:
        d["seed"] = seed_override
    if out_override is not None:
        d["out_dir"] = out_override
    if jobs_override is not None:
        d["jobs"] = jobs_override
    return PipelineConfig.from_dict(d)


def stage_rng(root_seed: int, stage: str, *extra: int) -> np.random.Generator:
    """Named, reproducible per-stage stream derived from the root seed."""
    words = [root_seed & 0xFFFFFFFF, zlib.crc32(stage.encode()), *extra]
    return np.random.default_rng(np.random.SeedSequence(words))


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{stage} needs {path.name}; run the earlier stage first")
    return path


# ---------------------------------------------------------------- stages


def cmd_design(cfg: PipelineConfig) -> list[Path]:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = stage_rng(cfg.seed, "design")
    pts = maximin_lhd(cfg.design.n_points, 2, cfg.design.n_restarts, rng)
    reps = np.full(cfg.design.n_points, cfg.design.replicates)
    path = out / "design.csv"
    io.write_design_csv(path, pts, reps)
    return [path]


def _run_point(args):
    cfg_dict, x, seed = args
    config = abm.SimConfig(sheep_repro=x[0], wolf_repro=x[1], **cfg_dict)
    return abm.run(config, seed)


def cmd_simulate(cfg: PipelineConfig) -> list[Path]:
    out = Path(cfg.out_dir)
    design = io.read_design_csv(_require(out / "design.csv", "simulate"))
    tasks = []
    for i, (x, reps) in enumerate(zip(design.points, design.replicates)):
        base = stage_rng(cfg.seed, "simulate", i).integers(2**63)
        for s in abm.replicate_seeds(int(base), int(reps)):
            tasks.append((dict(cfg.sim), tuple(x), int(s)))
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(pool.map(_run_point, tasks, chunksize=8))
    else:
        outcomes = [_run_point(t) for t in tasks]
    rows = [(np.array(x), seed, o) for (_, x, seed), o in zip(tasks, outcomes)]
    path = out / "runs.csv"
    io.write_runs_csv(path, rows)
    return [path]


def _load_classifier(out: Path) -> classify.ClassifierModel | None:
    d = io.read_json(out / "classifier.json")
    if d.get("kind") == "classifier":
        return classify.classifier_from_dict(d)
    return None


def cmd_classify(cfg: PipelineConfig) -> list[Path]:
    out = Path(cfg.out_dir)
    rows = io.read_runs_csv(_require(out / "runs.csv", "classify"))
    X = np.array([x for x, _, _ in rows])
    exists = np.array([o.is_extinct for _, _, o in rows])
    ux, labels = classify.collapse_labels(X, exists)
    res = cfg.classify_resolution
    axis = np.linspace(0.0, 1.0, res)
    paths = [out / "classifier.json", out / "prob_grid.csv", out / "boundary.csv"]
    if len(np.unique(labels)) == 2:
        model = classify.fit_classifier(ux, labels, cfg.kernel_family,
                                        rng=stage_rng(cfg.seed, "classify"))
        io.write_json(paths[0], classify.classifier_to_dict(model))
        _, probs = classify.probability_grid(model, res)
        contours = classify.decision_boundary(model, res)
    else:
        # single-class designs admit everything (or nothing); no boundary exists
        prob = 1.0 if labels[0] == 1 else 0.0
        io.write_json(paths[0], {"kind": "constant", "prob": prob})
        probs = np.full((res, res), prob)
        contours = []
    grid_rows = [(axis[i], axis[j], probs[i, j])
                 for i in range(res) for j in range(res)]
    io.write_csv(paths[1], ["x1", "x2", "prob"], grid_rows)
    seg_rows = []
    for sid, poly in enumerate(contours):
        for v in poly:
            seg_rows.append((sid, v[0], v[1]))
    io.write_csv(paths[2], ["segment_id", "x1", "x2"], seg_rows)
    return paths


def _prediction_grid_rows(model: hetgp.HetGPModel, res: int):
    axis = np.linspace(0.0, 1.0, res)
    g1, g2 = np.meshgrid(axis, axis, indexing="ij")
    pts = np.column_stack([g1.ravel(), g2.ravel()])
    pred = hetgp.predict_hetgp(model, pts)
    return [(pts[k, 0], pts[k, 1], pred.mean[k], pred.var_mean[k], pred.intrinsic_var[k])
            for k in range(len(pts))]


def cmd_fit(cfg: PipelineConfig) -> list[Path]:
    out = Path(cfg.out_dir)
    rows = io.read_runs_csv(_require(out / "runs.csv", "fit"))
    runs = io.runs_to_training(rows)
    Xq = np.array([r.x for r in runs if r.y is not None])
    yq = np.array([r.y for r in runs if r.y is not None])
    if len(Xq) == 0:
        raise ConfigError("no quantitative (extinct) runs to fit an emulator")
    summary = hetgp.summarize_replicates(Xq, yq)
    model = hetgp.fit_hetgp(summary, cfg.kernel_family, rng=stage_rng(cfg.seed, "fit"))
    paths = [out / "hetgp.json", out / "prediction_grid.csv"]
    io.write_json(paths[0], hetgp.hetgp_to_dict(model))
    io.write_csv(paths[1], ["x1", "x2", "mean", "var_mean", "intrinsic_var"],
                 _prediction_grid_rows(model, cfg.grid_resolution))
    return paths


def cmd_sequential(cfg: PipelineConfig) -> list[Path]:
    out = Path(cfg.out_dir)
    rows = io.read_runs_csv(_require(out / "runs.csv", "sequential"))
    model = hetgp.hetgp_from_dict(io.read_json(_require(out / "hetgp.json", "sequential")))
    clf = _load_classifier(out) if (out / "classifier.json").exists() else None
    state = seqdesign.DesignState(all_runs=io.runs_to_training(rows), model=model)
    abm_rows = list(rows)

    def simulate(x: np.ndarray, seed: int) -> float | None:
        outcome = abm.run(cfg.sim_config(x), seed)
        abm_rows.append((np.asarray(x, dtype=float), seed, outcome))
        return outcome.extinction_time

    rng = stage_rng(cfg.seed, "sequential")
    reference = seqdesign.build_reference(2, cfg.sequential.reference_size, clf)
    state = seqdesign.run_sequential(
        state, simulate, cfg.sequential.budget, rng,
        reference=reference, classifier=clf,
        n_candidates=cfg.sequential.n_candidates,
        refit_every=cfg.sequential.refit_every,
    )
    paths = [out / "sequential_history.csv", out / "runs_sequential.csv",
             out / "design_sequential.csv", out / "hetgp_sequential.json"]
    io.write_csv(
        paths[0],
        ["iter", "kind", "x1", "x2", "imspe_before", "imspe_after", "total_replicates"],
        [(h.iteration, h.kind, h.x[0], h.x[1], h.imspe_before, h.imspe_after,
          h.total_replicates) for h in state.history],
    )
    io.write_runs_csv(paths[1], abm_rows)
    design = state.rep_design()
    io.write_design_csv(paths[2], design.points, design.replicates)
    io.write_json(paths[3], hetgp.hetgp_to_dict(state.model))
    return paths


def cmd_history_match(cfg: PipelineConfig) -> list[Path]:
    out = Path(cfg.out_dir)
    runs_path = out / "runs_sequential.csv"
    if not runs_path.exists():
        runs_path = _require(out / "runs.csv", "history-match")
    rows = io.read_runs_csv(runs_path)
    obs = cfg.history_match.obs()

    def simulate(x: np.ndarray, seed: int) -> float | None:
        return abm.run(cfg.sim_config(x), seed).extinction_time

    rng = stage_rng(cfg.seed, "history-match")
    waves = history_match.run_waves(
        simulate, obs,
        n_waves=cfg.history_match.n_waves,
        points_per_wave=cfg.history_match.points_per_wave,
        replicates=cfg.history_match.replicates,
        threshold=cfg.history_match.threshold,
        rng=rng,
        initial_runs=io.runs_to_training(rows),
        include_intrinsic=cfg.history_match.include_intrinsic,
        grid_resolution=cfg.classify_resolution,
        kernel_family=cfg.kernel_family,
    )
    grid = history_match.evaluation_grid(2, cfg.classify_resolution)
    paths = []
    summary = []
    for wave in waves:
        imp = history_match.implausibility(wave.model, grid, obs,
                                           cfg.history_match.include_intrinsic)
        in_nroy = wave.contains(grid)
        gpath = out / f"hm_wave{wave.wave_index + 1}_grid.csv"
        io.write_csv(gpath, ["x1", "x2", "implausibility", "in_nroy", "wave"],
                     [(grid[k, 0], grid[k, 1], imp[k], int(in_nroy[k]), wave.wave_index + 1)
                      for k in range(len(grid))])
        paths.append(gpath)
        entry = {"wave": wave.wave_index + 1,
                 "threshold": cfg.history_match.threshold,
                 "nroy_fraction": wave.nroy_fraction,
                 "grid_file": gpath.name,
                 "design_file": None}
        if wave.next_design is not None:
            dpath = out / f"hm_wave{wave.wave_index + 1}_design.csv"
            io.write_design_csv(dpath, wave.next_design.points, wave.next_design.replicates)
            paths.append(dpath)
            entry["design_file"] = dpath.name
        summary.append(entry)
    spath = out / "hm_summary.json"
    io.write_json(spath, {"observation": cfg.history_match.observation,
                          "waves_completed": len(waves),
                          "waves": summary})
    paths.append(spath)
    if len(waves) < cfg.history_match.n_waves or (waves and waves[-1].nroy_fraction == 0.0):
        raise history_match.EmptyNroyError(
            f"NROY space emptied after {len(waves)} wave(s)",
            nroy_fraction_estimate=waves[-1].nroy_fraction if waves else 0.0,
        )
    return paths


STAGES = [
    ("design", cmd_design),
    ("simulate", cmd_simulate),
    ("classify", cmd_classify),
    ("fit", cmd_fit),
    ("sequential", cmd_sequential),
    ("history-match", cmd_history_match),
]


def cmd_pipeline(cfg: PipelineConfig) -> list[Path]:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"seed": cfg.seed, "stages": [], "artifacts": {}}
    mpath = out / "manifest.json"
    for name, fn in STAGES:
        try:
            produced = fn(cfg)
        except Exception:
            manifest["failed_stage"] = name
            io.write_json(mpath, manifest)
            raise
        manifest["stages"].append(name)
        for path in produced:
            manifest["artifacts"][path.name] = io.sha256_file(path)
    io.write_json(mpath, manifest)
    return [mpath]


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="abmuq",
        description="Uncertainty-quantification pipeline for the wolf-sheep simulator",
    )
    parser.add_argument("command", choices=[name for name, _ in STAGES] + ["pipeline"])
    parser.add_argument("--config", help="pipeline config JSON")
    parser.add_argument("--seed", type=int, help="root seed (overrides config)")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--jobs", type=int, help="max parallel simulator workers")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config, args.seed, args.out, args.jobs)
    except (ConfigError, ValueError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    commands = dict(STAGES)
    commands["pipeline"] = cmd_pipeline
    try:
        Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
        produced = commands[args.command](cfg)
    except history_match.EmptyNroyError as e:
        print(f"empty NROY: {e}", file=sys.stderr)
        return EXIT_EMPTY_NROY
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (gp.FitError, classify.NewtonConvergenceError, np.linalg.LinAlgError,
            seqdesign.NoAdmissibleCandidatesError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    for path in produced:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
