"""Tire/drivetrain parameter identification via hyperband + mutation search.

The search allocates evaluation budget across brackets of successive halving.
A "resource unit" is one round of greedy hill-climb mutation on a candidate
parameter set; fitness is multi-step open-loop prediction error against logged
drive data.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, fields as dc_fields

import numpy as np

from racestack.vehicle import VehicleParams, integrate_batch

DIVERGED_LOSS = 1e9
DEFAULT_HORIZON = 10   # prediction steps per evaluation window

_STATE_COLS = (0, 1, 3, 4, 5)   # X, Y, v_x, v_y, r -- heading excluded


class SysIdError(ValueError):
    pass


@dataclass(frozen=True)
class ParamSpace:
    """Search box: which VehicleParams fields vary, their bounds, mutation scale."""
    names: tuple
    lower: np.ndarray
    upper: np.ndarray
    mutation_std: np.ndarray

    def __post_init__(self):
        valid = {f.name for f in dc_fields(VehicleParams)}
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "mutation_std",
                           np.asarray(self.mutation_std, dtype=float))
        if len(self.names) == 0:
            raise SysIdError("parameter space is empty")
        for nm in self.names:
            if nm not in valid:
                raise SysIdError(f"unknown vehicle parameter: {nm!r}")
        if len(set(self.names)) != len(self.names):
            raise SysIdError("duplicate parameter names in space")
        n = len(self.names)
        if self.lower.shape != (n,) or self.upper.shape != (n,) \
                or self.mutation_std.shape != (n,):
            raise SysIdError("bounds/mutation_std shape mismatch with names")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))
                and np.all(np.isfinite(self.mutation_std))):
            raise SysIdError("parameter space entries must be finite")
        if np.any(self.lower >= self.upper):
            bad = [self.names[i] for i in np.flatnonzero(self.lower >= self.upper)]
            raise SysIdError(f"lower >= upper for: {', '.join(bad)}")
        if np.any(self.mutation_std <= 0):
            raise SysIdError("mutation_std must be positive")

    @property
    def dim(self) -> int:
        return len(self.names)

    def clamp(self, vec: np.ndarray) -> np.ndarray:
        return np.clip(vec, self.lower, self.upper)

    def to_values(self, vec: np.ndarray) -> dict:
        return {nm: float(v) for nm, v in zip(self.names, vec)}

    def to_vector(self, values: dict) -> np.ndarray:
        return np.array([values[nm] for nm in self.names], dtype=float)

    @classmethod
    def from_entries(cls, entries) -> "ParamSpace":
        names, lo, hi, std = [], [], [], []
        for e in entries:
            if len(e) != 4:
                raise SysIdError(f"space entry needs (name, lower, upper, "
                                 f"mutation_std), got {e!r}")
            names.append(e[0])
            lo.append(float(e[1]))
            hi.append(float(e[2]))
            std.append(float(e[3]))
        return cls(tuple(names), np.array(lo), np.array(hi), np.array(std))


def load_param_space(path) -> ParamSpace:
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict) or "parameters" not in raw:
        raise SysIdError(f"{path}: expected an object with a 'parameters' list")
    entries = []
    for i, item in enumerate(raw["parameters"]):
        missing = {"name", "lower", "upper", "mutation_std"} - set(item)
        if missing:
            raise SysIdError(f"{path}: parameters[{i}] missing "
                             f"{', '.join(sorted(missing))}")
        entries.append((item["name"], item["lower"], item["upper"],
                        item["mutation_std"]))
    return ParamSpace.from_entries(entries)


def save_param_space(space: ParamSpace, path) -> None:
    payload = {"parameters": [
        {"name": nm, "lower": float(lo), "upper": float(hi),
         "mutation_std": float(ms)}
        for nm, lo, hi, ms in zip(space.names, space.lower, space.upper,
                                  space.mutation_std)]}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


@dataclass
class Configuration:
    """One candidate parameter assignment, loss filled in after evaluation."""
    values: dict
    loss: float | None = None

    def to_params(self, base: VehicleParams) -> VehicleParams:
        return base.replace(**self.values)


@dataclass(frozen=True)
class Episode:
    """A contiguous logged drive: states (T+1, 6), inputs (T, 2), fixed dt."""
    states: np.ndarray
    inputs: np.ndarray
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "states", np.asarray(self.states, dtype=float))
        object.__setattr__(self, "inputs", np.asarray(self.inputs, dtype=float))
        if self.states.ndim != 2 or self.states.shape[1] != 6:
            raise SysIdError(f"states must be (T+1, 6), got {self.states.shape}")
        if self.inputs.ndim != 2 or self.inputs.shape[1] != 2:
            raise SysIdError(f"inputs must be (T, 2), got {self.inputs.shape}")
        if self.states.shape[0] != self.inputs.shape[0] + 1:
            raise SysIdError(f"states rows ({self.states.shape[0]}) must be "
                             f"inputs rows ({self.inputs.shape[0]}) + 1")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise SysIdError(f"dt must be positive and finite, got {self.dt!r}")
        if not (np.all(np.isfinite(self.states)) and np.all(np.isfinite(self.inputs))):
            raise SysIdError("episode contains non-finite samples")

    @property
    def steps(self) -> int:
        return self.inputs.shape[0]


@dataclass
class Dataset:
    episodes: list = field(default_factory=list)

    def __post_init__(self):
        self.episodes = list(self.episodes)

    def __len__(self):
        return len(self.episodes)

    def __iter__(self):
        return iter(self.episodes)

    @classmethod
    def from_log_csv(cls, ticks_path, controls_path, vehicles=None) -> "Dataset":
        """Build episodes from simulator tick + control logs (one per vehicle)."""
        ticks: dict = {}
        with open(ticks_path, newline="") as fh:
            reader = csv.DictReader(fh)
            need = {"t", "vehicle", "X", "Y", "psi", "vx", "vy", "r"}
            missing = need - set(reader.fieldnames or ())
            if missing:
                raise SysIdError(f"{ticks_path}: missing column(s) "
                                 f"{', '.join(sorted(missing))}")
            for row in reader:
                ticks.setdefault(row["vehicle"], []).append(
                    (float(row["t"]), [float(row[c]) for c in
                                       ("X", "Y", "psi", "vx", "vy", "r")]))
        controls: dict = {}
        with open(controls_path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = {"t", "vehicle", "delta", "D"} - set(reader.fieldnames or ())
            if missing:
                raise SysIdError(f"{controls_path}: missing column(s) "
                                 f"{', '.join(sorted(missing))}")
            for row in reader:
                controls.setdefault(row["vehicle"], []).append(
                    (float(row["t"]), [float(row["delta"]), float(row["D"])]))

        wanted = list(vehicles) if vehicles is not None else sorted(ticks)
        episodes = []
        for vid in wanted:
            if vid not in ticks:
                raise SysIdError(f"vehicle {vid!r} not present in {ticks_path}")
            srows = sorted(ticks[vid])
            crows = sorted(controls.get(vid, []))
            if len(srows) < 2:
                raise SysIdError(f"vehicle {vid!r}: need at least 2 tick rows")
            if len(crows) != len(srows) - 1:
                raise SysIdError(
                    f"vehicle {vid!r}: expected {len(srows) - 1} control rows "
                    f"(one per tick interval), found {len(crows)}")
            t = np.array([r[0] for r in srows])
            steps = np.diff(t)
            dt = float(steps[0])
            if np.any(np.abs(steps - dt) > 1e-9):
                raise SysIdError(f"vehicle {vid!r}: tick spacing is not uniform")
            for (tc, _), ts in zip(crows, t[:-1]):
                if abs(tc - ts) > 1e-9:
                    raise SysIdError(f"vehicle {vid!r}: control at t={tc} does "
                                     f"not align with tick t={ts}")
            episodes.append(Episode(
                np.array([r[1] for r in srows]),
                np.array([r[1] for r in crows]), dt))
        return cls(episodes)


def _episode_window_losses(params: VehicleParams, ep: Episode, horizon: int):
    """Per-window RMS prediction error; None if too short, or DIVERGED_LOSS."""
    n_windows = ep.steps - horizon + 1
    if n_windows <= 0:
        return None
    starts = np.arange(n_windows)
    X = ep.states[starts].copy()
    sq = np.zeros(n_windows)
    for h in range(horizon):
        X = integrate_batch(X, ep.inputs[starts + h], params, params.C_d, ep.dt)
        if not np.all(np.isfinite(X)):
            return DIVERGED_LOSS
        diff = X[:, _STATE_COLS] - ep.states[starts + h + 1][:, _STATE_COLS]
        sq += np.einsum("ij,ij->i", diff, diff)
    return np.sqrt(sq / horizon)


def evaluation_loss(config, dataset: Dataset, params_base: VehicleParams,
                    horizon: int = DEFAULT_HORIZON) -> float:
    """Mean multi-step rollout error of a candidate over every log window.

    Windows slide one step at a time; each is re-simulated `horizon` steps
    open-loop from the logged state and scored on position, velocities and yaw
    rate (heading drift shows up in position anyway).  Numerical blow-up or
    invalid parameter combinations earn the divergence sentinel rather than an
    exception so the search can discard them.
    """
    values = config.values if isinstance(config, Configuration) else dict(config)
    try:
        params = params_base.replace(**values)
    except ValueError:
        return DIVERGED_LOSS
    chunks = []
    for ep in dataset:
        out = _episode_window_losses(params, ep, horizon)
        if out is None:
            continue
        if np.isscalar(out):
            return DIVERGED_LOSS
        chunks.append(out)
    if not chunks:
        raise SysIdError(f"no evaluation windows: every episode is shorter "
                         f"than horizon={horizon}")
    return float(np.mean(np.concatenate(chunks)))


def get_hyperparameter_configuration(n: int, space: ParamSpace,
                                     rng: np.random.Generator) -> list:
    """Draw n candidates around the box centre (std = quarter range), clamped."""
    mid = 0.5 * (space.lower + space.upper)
    std = 0.25 * (space.upper - space.lower)
    out = []
    for _ in range(n):
        vec = space.clamp(rng.normal(mid, std))
        out.append(Configuration(space.to_values(vec)))
    return out


def mutate_then_return_eval_loss(config: Configuration, rounds: int,
                                 space: ParamSpace, dataset: Dataset,
                                 params_base: VehicleParams,
                                 rng: np.random.Generator,
                                 horizon: int = DEFAULT_HORIZON) -> Configuration:
    """Greedy hill climb: `rounds` Gaussian proposals, keep strict improvements.

    Mutates `config` in place (values and loss) and returns it.
    """
    if rounds < 1:
        raise SysIdError(f"rounds must be >= 1, got {rounds}")
    if config.loss is None:
        config.loss = evaluation_loss(config, dataset, params_base, horizon)
    vec = space.to_vector(config.values)
    for _ in range(rounds):
        cand = space.clamp(vec + rng.normal(0.0, space.mutation_std))
        loss = evaluation_loss(space.to_values(cand), dataset, params_base,
                               horizon)
        if loss < config.loss:
            vec = cand
            config.values = space.to_values(cand)
            config.loss = loss
    return config


def select_top_k_configuration(configs, k: int) -> list:
    """k best (lowest-loss) configurations, stable under ties."""
    if k < 0:
        raise SysIdError(f"k must be non-negative, got {k}")
    for c in configs:
        if c.loss is None:
            raise SysIdError("cannot rank an unevaluated configuration")
    return sorted(configs, key=lambda c: c.loss)[:k]


def hyperband_schedule(R: float, eta: float = 3.0) -> list:
    """The bracket/rung table the search will follow, without running it."""
    if R < 1:
        raise SysIdError(f"R must be >= 1, got {R}")
    if eta <= 1:
        raise SysIdError(f"eta must be > 1, got {eta}")
    s_max = int(math.floor(math.log(R) / math.log(eta)))
    B = (s_max + 1) * R
    table = []
    for s in range(s_max, -1, -1):
        n = int(math.ceil((B / R) * eta ** s / (s + 1)))
        r = R * eta ** (-s)
        rungs = []
        for i in range(s + 1):
            n_i = int(math.floor(n * eta ** (-i)))
            r_i = r * eta ** i
            rungs.append({"n_i": n_i, "r_i": r_i,
                          "rounds": max(1, int(math.floor(r_i))),
                          "keep": int(math.floor(n_i / eta))})
        table.append({"s": s, "n": n, "r": r, "rungs": rungs})
    return table


def hyperband(R: float, eta: float, space: ParamSpace, dataset: Dataset,
              params_base: VehicleParams, seed: int = 0,
              horizon: int = DEFAULT_HORIZON, trace: list | None = None) -> Configuration:
    """Budgeted random search + successive halving over tire parameters.

    Aggressive brackets start many random candidates with little mutation
    budget each; conservative brackets start few with a lot.  Candidates are
    ranked by `evaluation_loss` and the best survive to the next rung with
    eta-times the budget.  Returns the best configuration seen anywhere.
    """
    best: Configuration | None = None
    for bracket in hyperband_schedule(R, eta):
        s = bracket["s"]
        T = get_hyperparameter_configuration(
            bracket["n"], space, np.random.default_rng((seed, s)))
        for i, rung in enumerate(bracket["rungs"]):
            for idx, cfg in enumerate(T):
                mutate_then_return_eval_loss(
                    cfg, rung["rounds"], space, dataset, params_base,
                    np.random.default_rng((seed, s, i, idx)), horizon)
                if best is None or cfg.loss < best.loss:
                    best = Configuration(dict(cfg.values), cfg.loss)
            if trace is not None:
                trace.append({"bracket": s, "rung": i, "n_i": len(T),
                              "rounds": rung["rounds"],
                              "best_loss": min(c.loss for c in T)})
            T = select_top_k_configuration(T, rung["keep"])
            if not T:
                break
    return best
