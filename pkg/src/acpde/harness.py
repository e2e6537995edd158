"""Experiment orchestration: validated configs, seeded runs, disk artifacts.

A run writes, per seed, a CSV history (iteration, u0, loss, relative_error,
wall_time_s), plus one summary JSON and one manifest JSON. The manifest is the
fully resolved flat config; feeding it back as the config file reproduces the
run bit for bit (wall-clock columns aside). Floats in CSVs are written with 17
significant digits so parsing them back is lossless.

Config files are flat JSON objects. Problem-field overrides use dotted keys
("override.num_steps": 40). Unknown keys are collected and rejected together.
"""

import csv
import json
import os
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import __version__, nn, oracles, problems, solver
from .baseline import DbsdeModel
from .solver import ActorCriticModel

MODELS = ("actor-critic", "dbsde")

# |relative error| gates used by --check, keyed by problem
CHECK_THRESHOLDS = {
    "hjb": 0.010,
    "quadratic_gradients": 0.005,
    "allen_cahn": 0.015,
    "burgers_type": 0.060,
    "reaction_diffusion": 0.020,
}


class ConfigError(ValueError):
    """Carries every validation problem found, not just the first."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class ExperimentConfig:
    problem: str
    model: str = "actor-critic"
    seeds: tuple = (0, 1, 2, 3, 4)
    max_iterations: int = None  # None -> problem default
    early_stop: bool = False
    output_dir: str = "runs"
    clip: float = 50.0
    lo: float = None  # dbsde initial-value range; None -> problem default
    hi: float = None
    head_mode: str = "scalar"
    include_time_input: bool = True
    literal_step: bool = False
    oracle_samples: int = 10**6
    oracle_seed: int = 9001
    overrides: dict = field(default_factory=dict)

    def validate(self):
        errs = []
        if self.problem not in problems.REGISTRY:
            errs.append(f"unknown problem {self.problem!r}; choose from {problems.problem_names()}")
        if self.model not in MODELS:
            errs.append(f"unknown model {self.model!r}; choose from {list(MODELS)}")
        if not self.seeds:
            errs.append("seeds must be a non-empty list of integers")
        elif any(int(s) != s for s in self.seeds):
            errs.append(f"seeds must be integers, got {list(self.seeds)}")
        if self.max_iterations is not None and (
                self.max_iterations < 0 or int(self.max_iterations) != self.max_iterations):
            errs.append(f"max_iterations must be a non-negative integer, got {self.max_iterations}")
        if not self.clip > 0:
            errs.append(f"clip must be positive, got {self.clip}")
        if (self.lo is None) != (self.hi is None):
            errs.append("lo and hi must be given together")
        if self.lo is not None and self.model != "dbsde":
            errs.append("lo/hi only apply to the dbsde model")
        if self.lo is not None and self.hi is not None and self.lo > self.hi:
            errs.append(f"lo must not exceed hi, got ({self.lo}, {self.hi})")
        if self.head_mode not in solver.HEAD_MODES:
            errs.append(f"head_mode must be one of {list(solver.HEAD_MODES)}, got {self.head_mode!r}")
        if self.oracle_samples < 1:
            errs.append(f"oracle_samples must be positive, got {self.oracle_samples}")
        if self.problem in problems.REGISTRY:
            allowed = set(problems.valid_overrides(self.problem))
            unknown = sorted(set(self.overrides) - allowed)
            if unknown:
                errs.append(
                    f"unknown override(s) for {self.problem}: {', '.join(unknown)}; "
                    f"valid fields: {', '.join(sorted(allowed))}"
                )
        if errs:
            raise ConfigError(errs)
        # JSON numbers may arrive as floats; normalize the integral fields
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.max_iterations is not None:
            self.max_iterations = int(self.max_iterations)
        self.oracle_samples = int(self.oracle_samples)
        self.oracle_seed = int(self.oracle_seed)
        return self

    def resolved_iterations(self, problem):
        return problem.default_iterations if self.max_iterations is None else self.max_iterations

    def to_flat(self, problem=None):
        """Flat mapping in config-file schema; resolved when a problem is given."""
        flat = {}
        for f in fields(self):
            if f.name == "overrides":
                continue
            value = getattr(self, f.name)
            if f.name == "seeds":
                value = list(value)
            if f.name == "max_iterations" and problem is not None:
                value = self.resolved_iterations(problem)
            flat[f.name] = value
        for key in sorted(self.overrides):
            flat[f"override.{key}"] = self.overrides[key]
        flat["version"] = __version__
        return flat


def config_from_mapping(mapping):
    """Build a validated config from a flat dict (config file or manifest)."""
    known = {f.name for f in fields(ExperimentConfig) if f.name != "overrides"}
    kwargs, overrides, errs = {}, {}, []
    for key, value in mapping.items():
        if key == "version":
            continue  # manifests carry it; informational only
        if key.startswith("override."):
            overrides[key[len("override."):]] = value
        elif key in known:
            kwargs[key] = value
        else:
            errs.append(f"unknown config key {key!r}")
    if "problem" not in kwargs:
        errs.append("config must name a problem")
    if errs:
        raise ConfigError(errs)
    if "seeds" in kwargs:
        kwargs["seeds"] = tuple(kwargs["seeds"])
    cfg = ExperimentConfig(overrides=overrides, **kwargs)
    return cfg.validate()


def load_config(path):
    with open(path) as fh:
        mapping = json.load(fh)
    if not isinstance(mapping, dict):
        raise ConfigError([f"config file {path} must hold a flat JSON object"])
    return config_from_mapping(mapping)


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


def _fmt(x):
    return format(float(x), ".17g")


def _slug(config):
    return f"{config.problem}_{config.model.replace('-', '_')}"


def history_csv_path(config, seed):
    return os.path.join(config.output_dir, f"{_slug(config)}_seed{seed}.csv")


def summary_path(config):
    return os.path.join(config.output_dir, f"{_slug(config)}_summary.json")


def manifest_path(config):
    return os.path.join(config.output_dir, f"{_slug(config)}_manifest.json")


def write_history_csv(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "u0", "loss", "relative_error", "wall_time_s"])
        for r in records:
            w.writerow([
                r.iteration,
                _fmt(r.u0),
                _fmt(r.loss),
                "" if r.relative_error is None else _fmt(r.relative_error),
                _fmt(r.wall_time),
            ])


def read_history_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols = {}
    for name in ("iteration", "u0", "loss", "relative_error", "wall_time_s"):
        vals = [row[name] for row in rows]
        if name == "iteration":
            cols[name] = np.array([int(v) for v in vals])
        else:
            cols[name] = np.array([float(v) if v else np.nan for v in vals])
    return cols


def _model_factory(config):
    if config.model == "actor-critic":
        return lambda prob, seed: ActorCriticModel(
            prob, seed, head_mode=config.head_mode,
            include_time_input=config.include_time_input)
    u0_range = None if config.lo is None else (config.lo, config.hi)
    return lambda prob, seed: DbsdeModel(prob, seed, u0_range=u0_range)


def _summarize(config, problem, oracle, histories, max_iterations):
    per_seed = []
    finals, rels = [], []
    for h in histories:
        final = h.records[-1].u0 if h.records else None
        rel = h.records[-1].relative_error if h.records else None
        entry = {
            "seed": h.seed,
            "final_u0": final,
            "relative_error": rel,
            "equilibrium_iteration": h.equilibrium_iteration,
            "censored": (not h.failed) and h.equilibrium_iteration is None,
            "failed": h.failed,
            "failure": h.failure,
            "iterations_run": max(len(h.records) - 1, 0),
            "wall_time_s": h.records[-1].wall_time if h.records else None,
        }
        n = len(h.records)
        entry["mean_iteration_seconds"] = (
            (h.records[-1].wall_time - h.records[0].wall_time) / (n - 1) if n > 1 else None
        )
        per_seed.append(entry)
        if not h.failed and final is not None:
            finals.append(final)
            if rel is not None:
                rels.append(rel)
    return {
        "problem": config.problem,
        "model": config.model,
        "d": problem.d,
        "num_steps": problem.num_steps,
        "max_iterations": max_iterations,
        "parameter_count": histories[0].parameter_count if histories else None,
        "oracle": oracle.as_dict() if oracle is not None else None,
        "per_seed": per_seed,
        "u0_mean": float(np.mean(finals)) if finals else None,
        "u0_variance": float(np.var(finals)) if finals else None,
        "mean_abs_relative_error": float(np.mean(np.abs(rels))) if rels else None,
        "failed_seeds": [h.seed for h in histories if h.failed],
    }


def run(config):
    """Execute a config: train per seed, write CSVs, summary, and manifest."""
    config.validate()
    problem = problems.make_problem(config.problem, config.overrides)
    os.makedirs(config.output_dir, exist_ok=True)
    oracle = oracles.reference_for(problem, config.oracle_samples, config.oracle_seed)
    max_iterations = config.resolved_iterations(problem)
    histories = solver.train(
        problem,
        _model_factory(config),
        seeds=list(config.seeds),
        max_iterations=max_iterations,
        early_stop=config.early_stop,
        clip=config.clip,
        oracle_value=None if oracle is None else oracle.value,
        literal_step=config.literal_step,
    )
    for h in histories:
        write_history_csv(history_csv_path(config, h.seed), h.records)
    summary = _summarize(config, problem, oracle, histories, max_iterations)
    with open(summary_path(config), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(manifest_path(config), "w") as fh:
        json.dump(config.to_flat(problem), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def check_summary(summary):
    """Apply the per-problem |relative error| gate to a finished run."""
    threshold = CHECK_THRESHOLDS.get(summary["problem"])
    if threshold is None:
        raise ConfigError([f"--check is not available for {summary['problem']} (no oracle)"])
    value = summary["mean_abs_relative_error"]
    passed = value is not None and value <= threshold
    return {"threshold": threshold, "mean_abs_relative_error": value, "passed": passed}


# ---------------------------------------------------------------------------
# parameter-count report
# ---------------------------------------------------------------------------

# (problem, d, N) rows of the size-comparison table
PARAM_TABLE = (
    ("hjb", 100, 3),
    ("allen_cahn", 100, 20),
    ("pricing_option", 100, 20),
    ("burgers_type", 50, 30),
    ("reaction_diffusion", 100, 30),
    ("quadratic_gradients", 100, 30),
)


def fc_weight_count(d):
    """Weights of one d -> (d+10) -> (d+10) -> d stack."""
    return 2 * d * (d + 10) + (d + 10) ** 2


def norm_param_count(d):
    """Scale/shift pairs for two hidden layers plus the output affine."""
    return 4 * (d + 10) + 2 * d


def actor_critic_count(d):
    """Formula total for the shared-step pair in its size-comparison form
    (state-only actor with normalization, plain vector-output critic)."""
    return 2 * fc_weight_count(d) + norm_param_count(d)


def dbsde_count(d, num_steps):
    """Formula total for the baseline: scalar + gradient + N-1 subnets."""
    return 1 + d + (num_steps - 1) * (fc_weight_count(d) + norm_param_count(d))


def params_row(problem_name, d, num_steps):
    prob = problems.make_problem(problem_name, {"d": d, "num_steps": num_steps})
    ac = ActorCriticModel(prob, seed=0, head_mode="vector_mean", include_time_input=False)
    db = DbsdeModel(prob, seed=0)
    walked_ac = nn.count_parameters(ac.parameters())
    walked_db = nn.count_parameters(db.parameters())
    return {
        "problem": problem_name,
        "d": d,
        "num_steps": num_steps,
        "actor_critic_params": walked_ac,
        "dbsde_params": walked_db,
        "actor_critic_formula": actor_critic_count(d),
        "dbsde_formula": dbsde_count(d, num_steps),
        "ratio_percent": 100.0 * walked_ac / walked_db,
    }


def measure_rpi(problem_name, d, num_steps, iterations=15, seed=0):
    """Per-iteration wall time for both models under identical config."""
    prob = problems.make_problem(problem_name, {"d": d, "num_steps": num_steps})
    out = {}
    for model_name, factory in (
        ("actor-critic", lambda p, s: ActorCriticModel(p, s)),
        ("dbsde", lambda p, s: DbsdeModel(p, s)),
    ):
        model = factory(prob, seed)
        opt = nn.Adam(model.parameters(), lr=prob.learning_rate)
        solver.train_iteration(prob, model, opt, seed, 1)  # warm caches
        started = time.perf_counter()
        for it in range(2, iterations + 2):
            solver.train_iteration(prob, model, opt, seed, it)
        out[model_name] = (time.perf_counter() - started) / iterations
    out["rpi_ratio_percent"] = 100.0 * out["actor-critic"] / out["dbsde"]
    return out


def params_report(with_timing=False):
    rows = []
    for name, d, n in PARAM_TABLE:
        row = params_row(name, d, n)
        if with_timing:
            row.update({f"seconds_per_iteration_{k}": v
                        for k, v in measure_rpi(name, d, n).items()})
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# paired model comparison
# ---------------------------------------------------------------------------


def compare_convergence(problem_name, seeds=(0, 1, 2, 3, 4), max_iterations=None,
                        overrides=None, model_a="actor-critic", model_b="dbsde",
                        oracle_samples=10**6, oracle_seed=9001):
    """Train two models on shared seeds (identical path draws) and pair up
    their iterations-to-equilibrium; runs that never settle are censored."""
    problem = problems.make_problem(problem_name, overrides)
    oracle = oracles.reference_for(problem, oracle_samples, oracle_seed)
    iterations = problem.default_iterations if max_iterations is None else max_iterations
    result = {"problem": problem_name, "seeds": list(seeds),
              "max_iterations": iterations,
              "oracle": oracle.as_dict() if oracle is not None else None,
              "models": {}}
    histories = {}
    for name in (model_a, model_b):
        cfg = ExperimentConfig(problem=problem_name, model=name).validate()
        hist = solver.train(problem, _model_factory(cfg), seeds=list(seeds),
                            max_iterations=iterations,
                            oracle_value=None if oracle is None else oracle.value)
        histories[name] = hist
        finals = [h.records[-1].u0 for h in hist if not h.failed and h.records]
        result["models"][name] = {
            "per_seed": [
                {
                    "seed": h.seed,
                    "equilibrium_iteration": h.equilibrium_iteration,
                    "censored": (not h.failed) and h.equilibrium_iteration is None,
                    "failed": h.failed,
                    "final_u0": h.records[-1].u0 if h.records else None,
                    "relative_error": h.records[-1].relative_error if h.records else None,
                    "wall_time_s": h.records[-1].wall_time if h.records else None,
                    "mean_iteration_seconds": (
                        (h.records[-1].wall_time - h.records[0].wall_time)
                        / (len(h.records) - 1) if len(h.records) > 1 else None),
                }
                for h in hist
            ],
            "mean_final_u0": float(np.mean(finals)) if finals else None,
        }
    pairs = []
    ratios = []
    for ha, hb in zip(histories[model_a], histories[model_b]):
        pair = {"seed": ha.seed,
                model_a: ha.equilibrium_iteration,
                model_b: hb.equilibrium_iteration}
        if ha.equilibrium_iteration is not None and hb.equilibrium_iteration is not None:
            pair["ratio"] = ha.equilibrium_iteration / hb.equilibrium_iteration
            ratios.append(pair["ratio"])
        else:
            pair["ratio"] = None
        pairs.append(pair)
    result["pairs"] = pairs
    result["mean_ratio"] = float(np.mean(ratios)) if ratios else None
    a_mean = result["models"][model_a]["mean_final_u0"]
    b_mean = result["models"][model_b]["mean_final_u0"]
    if a_mean is not None and b_mean not in (None, 0.0):
        result["relative_gap"] = (b_mean - a_mean) / b_mean
    else:
        result["relative_gap"] = None
    return result
