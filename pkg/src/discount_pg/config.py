"""YAML run configuration for the command-line harness.

A config names every hyperparameter of the loop at the top level::

    seed: 0
    trials: 20
    mode: model_free          # or model_based
    setting: initial_state    # or additive_noise
    gamma0: 1.0e-3
    eta: 1.0e-3
    N: 50
    tau: 100
    r: 2.0e-3
    M: 10
    inner_steps: 1
    jbar_policy: {kind: auto, value: 2.0}
    distribution: {kind: sphere}
    system: {A: [[4, 3], [3, 1.5]], B: [[2], [2]]}
    cost: {Q: [[1, 0], [0, 1]], R: [[2]]}

``system`` is either inline ``A``/``B``, ``file: path`` (matrix file format of
:func:`discount_pg.linear_system.read_system`, relative to the config), or
``random: {n, m, a_std, b_std, seed}``; random systems are redrawn per trial.
``Q`` and ``R`` must be full matrices or ``{scaled_identity: c}``. A bare
vector is rejected because it does not say whether it is a diagonal.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import seeding
from .linear_system import BoundedDistribution, CostModel, LinearSystem, random_system, read_system
from .rollout import EvalConfig, Setting
from .stabilizer import GradConfig, JbarPolicy, Mode, StabilizerConfig


class ConfigError(ValueError):
    pass


RUN_DEFAULTS = {
    "seed": 0,
    "trials": 1,
    "success_fraction": 1.0,
    "mode": "model_free",
    "setting": "initial_state",
    "gamma0": 1e-3,
    "eta": 1e-3,
    "N": 50,
    "tau": 100,
    "r": 2e-3,
    "M": 10,
    "tau_grad": None,
    "inner_steps": 1,
    "early_exit": False,
    "max_outer_iterations": 5000,
    "jbar_policy": {"kind": "auto", "value": 2.0},
    "distribution": {"kind": "sphere"},
    "model_gradient": "finite_difference",
    "step_rule": "backtracking",
    "safety_margin": 1e-3,
    "snapshot_every": 10,
    "ground_truth": True,
    "plots": True,
    "K0": None,
    "system": None,
    "cost": None,
    "long_running": False,
    "reference": None,
}

FLOAT_KEYS = ("gamma0", "eta", "r", "success_fraction", "safety_margin")
INT_KEYS = ("seed", "trials", "N", "tau", "M", "inner_steps", "max_outer_iterations", "snapshot_every")


def _load_yaml(path) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _number(value, key, kind=float):
    # PyYAML reads "1e-3" (no dot) as a string; accept it
    if isinstance(value, bool):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    try:
        out = kind(float(value)) if kind is int else float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    if kind is int and out != float(value):
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    return out


def _matrix(value, key, size=None) -> np.ndarray:
    if isinstance(value, dict):
        if set(value) != {"scaled_identity"} or size is None:
            raise ConfigError(f"{key}: matrix must be a nested list or {{scaled_identity: c}}")
        return _number(value["scaled_identity"], key) * np.eye(size)
    try:
        M = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: not a numeric matrix") from None
    if M.ndim == 0:
        M = M.reshape(1, 1)
    if M.ndim != 2:
        raise ConfigError(f"{key}: expected a 2-D nested list, got shape {M.shape}")
    return M


@dataclass(frozen=True)
class SystemSpec:
    """Where the plant of each trial comes from."""

    A: np.ndarray | None = None
    B: np.ndarray | None = None
    random: dict | None = None

    @property
    def n(self) -> int:
        return int(self.random["n"]) if self.random else self.A.shape[0]

    @property
    def m(self) -> int:
        return int(self.random["m"]) if self.random else self.B.shape[1]

    def build(self, trial: int) -> LinearSystem:
        if self.random is None:
            return LinearSystem(self.A, self.B)
        r = self.random
        seed = seeding.seed_sequence(r["seed"], trial)
        return random_system(r["n"], r["m"], r["a_std"], r["b_std"], seed)


@dataclass(frozen=True)
class RunConfig:
    raw: dict
    system: SystemSpec
    cost: CostModel
    stabilizer: StabilizerConfig
    K0: np.ndarray | None
    trials: int
    success_fraction: float
    ground_truth: bool
    plots: bool

    @property
    def seed(self) -> int:
        return self.stabilizer.seed

    @property
    def digest(self) -> str:
        return config_digest(self.raw)


def config_digest(raw: dict) -> str:
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _parse_system(block, base: Path) -> SystemSpec:
    if not isinstance(block, dict):
        raise ConfigError("system: required mapping with A/B, file, or random")
    keys = set(block)
    if keys == {"A", "B"}:
        return SystemSpec(A=_matrix(block["A"], "system.A"), B=_matrix(block["B"], "system.B"))
    if keys == {"file"}:
        path = Path(block["file"])
        path = path if path.is_absolute() else base / path
        try:
            sys = read_system(path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"system.file: {exc}") from exc
        return SystemSpec(A=np.array(sys.A), B=np.array(sys.B))
    if keys == {"random"}:
        r = dict(block["random"] or {})
        unknown = set(r) - {"n", "m", "a_std", "b_std", "seed"}
        if unknown or not {"n", "m"} <= set(r):
            raise ConfigError("system.random needs n, m and optionally a_std, b_std, seed")
        out = {
            "n": _number(r["n"], "system.random.n", int),
            "m": _number(r["m"], "system.random.m", int),
            "a_std": _number(r.get("a_std", 0.1), "system.random.a_std"),
            "b_std": _number(r.get("b_std", 1.0), "system.random.b_std"),
            "seed": _number(r.get("seed", 0), "system.random.seed", int),
        }
        if out["n"] < 1 or out["m"] < 1 or out["a_std"] <= 0 or out["b_std"] <= 0:
            raise ConfigError("system.random: sizes and standard deviations must be positive")
        return SystemSpec(random=out)
    raise ConfigError(f"system: expected exactly one of A/B, file, random; got keys {sorted(keys)}")


def parse_config(data: dict, base: Path = Path("."), seed_override: int | None = None) -> RunConfig:
    """Validate a config mapping. Every problem is raised as :class:`ConfigError`."""
    unknown = set(data) - set(RUN_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    raw = copy.deepcopy(RUN_DEFAULTS)
    raw.update(copy.deepcopy(data))
    if seed_override is not None:
        raw["seed"] = seed_override
    for k in FLOAT_KEYS:
        raw[k] = _number(raw[k], k)
    for k in INT_KEYS:
        raw[k] = _number(raw[k], k, int)
    raw["tau_grad"] = raw["tau"] if raw["tau_grad"] is None else _number(raw["tau_grad"], "tau_grad", int)

    system = _parse_system(raw["system"], base)
    n, m = system.n, system.m
    if system.random is None and (system.A.shape != (n, n) or system.B.shape[0] != n):
        raise ConfigError(f"system: A is {system.A.shape}, B is {system.B.shape}")

    cost_block = raw["cost"]
    if not isinstance(cost_block, dict) or set(cost_block) != {"Q", "R"}:
        raise ConfigError("cost: required mapping with exactly Q and R")
    Q = _matrix(cost_block["Q"], "cost.Q", n)
    R = _matrix(cost_block["R"], "cost.R", m)
    if Q.shape != (n, n) or R.shape != (m, m):
        raise ConfigError(f"cost: Q must be {n}x{n} and R {m}x{m}, got {Q.shape} and {R.shape}")

    jb = raw["jbar_policy"]
    if not isinstance(jb, dict) or not set(jb) <= {"kind", "value"}:
        raise ConfigError("jbar_policy: expected {kind: auto|fixed, value: x}")
    dist = raw["distribution"]
    if not isinstance(dist, dict) or not set(dist) <= {"kind", "bound"}:
        raise ConfigError("distribution: expected {kind: sphere|truncated_gaussian, bound: d}")
    if raw["trials"] < 1:
        raise ConfigError("trials must be >= 1")
    if not 0.0 <= raw["success_fraction"] <= 1.0:
        raise ConfigError("success_fraction must lie in [0, 1]")

    try:
        cost = CostModel(Q, R)
        bound = dist.get("bound")
        eval_cfg = EvalConfig(
            N=raw["N"],
            tau=raw["tau"],
            dist=BoundedDistribution(dist.get("kind", "sphere"), n, None if bound is None else _number(bound, "distribution.bound")),
            setting=Setting(raw["setting"]),
            seed=raw["seed"],
        )
        stab = StabilizerConfig(
            eval=eval_cfg,
            grad=GradConfig(raw["r"], raw["M"], raw["tau_grad"]),
            gamma0=raw["gamma0"],
            eta=raw["eta"],
            inner_steps=raw["inner_steps"],
            jbar=JbarPolicy(jb.get("kind", "auto"), _number(jb.get("value", 2.0), "jbar_policy.value")),
            max_outer_iterations=raw["max_outer_iterations"],
            mode=Mode(raw["mode"]),
            early_exit=bool(raw["early_exit"]),
            snapshot_every=raw["snapshot_every"],
            safety_margin=raw["safety_margin"],
            model_gradient=raw["model_gradient"],
            step_rule=raw["step_rule"],
        )
        K0 = None if raw["K0"] is None else _matrix(raw["K0"], "K0")
        if K0 is not None and K0.shape != (m, n):
            raise ConfigError(f"K0 must be {m}x{n}")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    if raw["r"] <= 0 or raw["M"] < 1 or raw["tau_grad"] < 1:
        raise ConfigError("r, M and tau_grad must be positive")
    if not math.isfinite(raw["eta"]):
        raise ConfigError("eta must be finite")

    return RunConfig(
        raw=raw,
        system=system,
        cost=cost,
        stabilizer=stab,
        K0=K0,
        trials=raw["trials"],
        success_fraction=raw["success_fraction"],
        ground_truth=bool(raw["ground_truth"]),
        plots=bool(raw["plots"]),
    )


def load_config(path, seed_override: int | None = None) -> RunConfig:
    path = Path(path)
    return parse_config(_load_yaml(path), path.parent, seed_override)


# oracle-check configs

SUITE_NAMES = (
    "lyapunov_residual",
    "scaling_identity",
    "jstar_monotonicity",
    "discount_safety",
    "estimator_consistency",
    "noise_closed_form",
)


@dataclass(frozen=True)
class CheckConfig:
    suites: tuple[str, ...]
    instances: dict
    seed: int
    inject_fault: bool


def load_check_config(path, seed_override: int | None = None) -> CheckConfig:
    data = _load_yaml(path)
    unknown = set(data) - {"suites", "instances", "seed", "inject_fault"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    suites = data.get("suites")
    if not isinstance(suites, list) or not suites:
        raise ConfigError("suites: need a non-empty list of suite names")
    bad = [s for s in suites if s not in SUITE_NAMES]
    if bad:
        raise ConfigError(f"unknown suites {bad}; choose from {list(SUITE_NAMES)}")
    inst = data.get("instances") or {}
    if not isinstance(inst, dict) or not set(inst) <= set(SUITE_NAMES):
        raise ConfigError("instances: mapping from suite name to count")
    inst = {k: _number(v, f"instances.{k}", int) for k, v in inst.items()}
    seed = seed_override if seed_override is not None else _number(data.get("seed", 0), "seed", int)
    return CheckConfig(tuple(suites), inst, seed, bool(data.get("inject_fault", False)))
