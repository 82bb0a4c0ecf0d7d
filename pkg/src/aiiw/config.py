"""Run configuration: YAML parsing, validation, and content hashing.

One human-editable file drives everything; the analysis defaults in
``configs/default.yaml`` reproduce the reference configuration with zero
flags.  The sha256 of the raw config bytes is stamped into every output so
results can be traced back to the exact configuration that produced them.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import ConfigError
from .intensity import KERNELS
from .records import ARMS
from .simulate import DgmSpec, PiecewiseConstant
from .splines import SplineSpec


@dataclass(frozen=True)
class ArmConfig:
    alphas: tuple[float, ...]
    mu_min: float
    mu_max: float


@dataclass(frozen=True)
class StudyConfig:
    n_per_rep: int
    reps: int
    alphas: tuple[float, ...]
    arm: str = "control"
    corruption: str | None = None
    fail_budget: float = 0.02
    n_boot: int | None = None        # None: inherit the bootstrap block


@dataclass(frozen=True)
class RunConfig:
    spline: SplineSpec
    targets: tuple[float, ...]
    arms: dict[str, ArmConfig]
    bandwidth: float
    kernel: str
    tau: float
    n_strata: int
    n_boot: int
    boot_tilt_table: bool
    seed: int
    positivity_floor: float
    output_dir: str
    truth_n: int
    truth_alphas: tuple[float, ...] | None
    dgm: DgmSpec | None
    study: StudyConfig | None
    sha256: str


def _get(node: dict, key: str, where: str):
    if key not in node:
        raise ConfigError(f"missing config key {where}.{key}")
    return node[key]


def _floats(values, where: str) -> tuple[float, ...]:
    try:
        out = tuple(float(v) for v in values)
    except (TypeError, ValueError):
        raise ConfigError(f"{where} must be a list of numbers") from None
    if not all(math.isfinite(v) for v in out):
        raise ConfigError(f"{where} must be finite")
    return out


def _parse_alphas(values, where: str) -> tuple[float, ...]:
    out = _floats(values, where)
    if not out:
        raise ConfigError(f"{where} is empty")
    if any(b <= a for a, b in zip(out, out[1:])):
        raise ConfigError(f"{where} must be strictly increasing")
    return out


def _parse_arm(name: str, node, where: str) -> ArmConfig:
    if name not in ARMS:
        raise ConfigError(f"unknown arm {name!r} in {where}; expected "
                          f"one of {ARMS}")
    if not isinstance(node, dict):
        raise ConfigError(f"{where}.{name} must be a mapping")
    alphas = _parse_alphas(_get(node, "alphas", f"{where}.{name}"),
                           f"{where}.{name}.alphas")
    mu_min = float(_get(node, "mu_min", f"{where}.{name}"))
    mu_max = float(_get(node, "mu_max", f"{where}.{name}"))
    if not mu_min < mu_max:
        raise ConfigError(f"{where}.{name}: need mu_min < mu_max "
                          f"(got {mu_min} >= {mu_max})")
    return ArmConfig(alphas, mu_min, mu_max)


def _parse_spline(node) -> SplineSpec:
    if not isinstance(node, dict):
        raise ConfigError("spline must be a mapping")
    domain = _floats(_get(node, "domain", "spline"), "spline.domain")
    if len(domain) != 2:
        raise ConfigError("spline.domain must be [a, b]")
    knots = _floats(node.get("interior_knots", ()), "spline.interior_knots")
    return SplineSpec(domain=(domain[0], domain[1]), interior_knots=knots,
                      degree=int(node.get("degree", 3)),
                      grid_step=float(node.get("grid_step", 1.0)))


def _parse_dgm(node) -> DgmSpec:
    if not isinstance(node, dict):
        raise ConfigError("dgm must be a mapping")
    rates = []
    for i, r in enumerate(_get(node, "rates", "dgm")):
        rates.append(PiecewiseConstant(
            tuple(_floats(_get(r, "edges", f"dgm.rates[{i}]"),
                          f"dgm.rates[{i}].edges")),
            tuple(_floats(_get(r, "values", f"dgm.rates[{i}]"),
                          f"dgm.rates[{i}].values"))))
    theta = _floats(_get(node, "theta", "dgm"), "dgm.theta")
    if len(theta) != 4:
        raise ConfigError("dgm.theta must have 4 entries "
                          "(intercept, t, t_prev, y_prev)")
    probs = node.get("baseline_probs")
    return DgmSpec(
        baseline_values=_floats(_get(node, "baseline_values", "dgm"),
                                "dgm.baseline_values"),
        rates=tuple(rates),
        gamma=float(_get(node, "gamma", "dgm")),
        theta=theta,
        dispersion=float(_get(node, "dispersion", "dgm")),
        tau=float(_get(node, "tau", "dgm")),
        n_strata=int(_get(node, "n_strata", "dgm")),
        outcome_cap=int(node.get("outcome_cap", 50)),
        alpha_true=float(node.get("alpha_true", 0.0)),
        baseline_probs=(_floats(probs, "dgm.baseline_probs")
                        if probs is not None else None))


def _parse_study(node, default_n_boot: int) -> StudyConfig:
    if not isinstance(node, dict):
        raise ConfigError("study must be a mapping")
    corruption = node.get("corruption")
    if corruption is not None and corruption not in ("intensity", "outcome"):
        raise ConfigError("study.corruption must be null, 'intensity', "
                          "or 'outcome'")
    n_boot = node.get("n_boot")
    return StudyConfig(
        n_per_rep=int(_get(node, "n_per_rep", "study")),
        reps=int(_get(node, "reps", "study")),
        alphas=_parse_alphas(_get(node, "alphas", "study"), "study.alphas"),
        arm=str(node.get("arm", "control")),
        corruption=corruption,
        fail_budget=float(node.get("fail_budget", 0.02)),
        n_boot=int(n_boot) if n_boot is not None else default_n_boot)


def build_config(doc: dict, sha256: str = "") -> RunConfig:
    """Validate a parsed mapping into a RunConfig."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a mapping")

    spline = _parse_spline(_get(doc, "spline", "config"))
    targets = _floats(_get(doc, "targets", "config"), "targets")
    a, b = spline.domain
    for t in targets:
        if not a <= t <= b:
            raise ConfigError(f"target {t:g} outside spline domain "
                              f"[{a:g}, {b:g}]")

    arms_node = _get(doc, "arms", "config")
    if not isinstance(arms_node, dict) or not arms_node:
        raise ConfigError("arms must be a non-empty mapping")
    arms = {name: _parse_arm(name, node, "arms")
            for name, node in arms_node.items()}

    kernel = str(doc.get("kernel", "epanechnikov"))
    if kernel not in KERNELS:
        raise ConfigError(f"unknown kernel {kernel!r}; supported: {KERNELS}")
    bandwidth = float(_get(doc, "bandwidth", "config"))
    if bandwidth <= 0:
        raise ConfigError("bandwidth must be positive")
    floor = float(doc.get("positivity_floor", 1e-4))
    if not 0 < floor < 1:
        raise ConfigError("positivity_floor must be in (0, 1)")

    boot = doc.get("bootstrap", {})
    if not isinstance(boot, dict):
        raise ConfigError("bootstrap must be a mapping")
    n_boot = int(boot.get("n_boot", 0))
    if n_boot < 0:
        raise ConfigError("bootstrap.n_boot must be >= 0")
    evaluator = boot.get("tilt_evaluator", "table")
    if evaluator not in ("table", "exact"):
        raise ConfigError("bootstrap.tilt_evaluator must be 'table' "
                          "or 'exact'")

    tau = float(_get(doc, "tau", "config"))
    n_strata = int(_get(doc, "n_strata", "config"))
    if tau <= 0 or n_strata < 1:
        raise ConfigError("need tau > 0 and n_strata >= 1")
    if b > tau:
        raise ConfigError(f"spline domain end {b:g} exceeds tau {tau:g}")

    dgm = _parse_dgm(doc["dgm"]) if doc.get("dgm") is not None else None
    truth = doc.get("truth", {}) or {}
    if not isinstance(truth, dict):
        raise ConfigError("truth must be a mapping")
    truth_alphas = truth.get("alphas")
    study = (_parse_study(doc["study"], n_boot)
             if doc.get("study") is not None else None)

    return RunConfig(
        spline=spline,
        targets=targets,
        arms=arms,
        bandwidth=bandwidth,
        kernel=kernel,
        tau=tau,
        n_strata=n_strata,
        n_boot=n_boot,
        boot_tilt_table=(evaluator == "table"),
        seed=int(doc.get("seed", 0)),
        positivity_floor=floor,
        output_dir=str(doc.get("output_dir", "out")),
        truth_n=int(truth.get("n_subjects", 1_000_000)),
        truth_alphas=(_parse_alphas(truth_alphas, "truth.alphas")
                      if truth_alphas is not None else None),
        dgm=dgm,
        study=study,
        sha256=sha256)


def load_config(path) -> RunConfig:
    """Read, hash, parse, and validate a YAML config file."""
    raw = Path(path).read_bytes()
    sha = hashlib.sha256(raw).hexdigest()
    try:
        doc = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return build_config(doc, sha)
