"""
Experiment Config Module

Named experiment presets, the flat ``key = value`` config format and the
run manifest.

A config file looks like::

    # depletion run at reduced scale
    schema_version = 1
    preset = fig3_depletion
    seed = 7
    n_traj = 200

Keys other than ``schema_version``, ``preset``, ``seed`` and ``output_dir``
must be parameters of the chosen preset. The manifest written by every run
uses the same format and lists every resolved parameter, so it can be fed
back through ``--config``.
"""

from __future__ import annotations

import contextlib
import math
import os
import tempfile
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Any

from .ensembles import EnsembleConfig, EnsembleError, Sampler
from .integrator import IntegrationError, IntegratorConfig
from .lattice_model import Boundary, LatticeConfig, ModelError

SCHEMA_VERSION = 1
RESERVED_KEYS = ("schema_version", "preset", "seed", "output_dir")
DEFAULT_OUTPUT_DIR = "results"
# Parameters multiplied by --traj-scale
SCALED_KEYS = ("n_traj", "n_samples", "n_real", "xi_n_traj")


class ExperimentConfigError(Exception):
    """Raised when a config cannot be resolved; ``problems`` lists every issue found."""

    def __init__(self, problems: list[str]) -> None:
        super().__init__("; ".join(problems))
        self.problems = problems


class Preset(StrEnum):
    FIG1_SHELL = "fig1_shell"
    FIG1_LYAPUNOV = "fig1_lyapunov"
    FIG3_DEPLETION = "fig3_depletion"
    FIG3D_WEAKLINKS = "fig3d_weaklinks"
    OU_VALIDATION = "ou_validation"
    SINGLE_SITE_STATIONARY = "single_site_stationary"
    BLOCH_VERIFY = "bloch_verify"
    REGULAR_CONTRAST = "regular_contrast"
    DIFFUSION_CHECK = "diffusion_check"
    CORRELATION_TIME = "correlation_time"


@dataclass(frozen=True)
class Parameter:
    """One config key: its kind, allowed range and help text.

    ``kind`` is one of ``int``, ``float``, ``str``, ``ints`` and ``floats``
    (the last two are comma-separated lists).
    """

    name: str
    kind: str
    help: str
    minimum: float | None = None
    maximum: float | None = None
    exclusive_minimum: bool = False
    choices: tuple[str, ...] = ()

    def parse(self, raw: str) -> Any:
        raw = raw.strip()
        if self.kind == "int":
            return int(raw)
        if self.kind == "float":
            return float(raw)
        if self.kind == "ints":
            return tuple(int(part) for part in raw.split(",") if part.strip())
        if self.kind == "floats":
            return tuple(float(part) for part in raw.split(",") if part.strip())
        return raw

    def check(self, value: Any) -> list[str]:
        values = value if isinstance(value, tuple) else (value,)
        if self.kind in ("ints", "floats") and not values:
            return [f"{self.name}: needs at least one value"]
        problems = []
        for v in values:
            if self.choices and v not in self.choices:
                problems.append(f"{self.name}: {v!r} is not one of {', '.join(self.choices)}")
                continue
            if isinstance(v, str):
                continue
            if not math.isfinite(v):
                problems.append(f"{self.name}: {v} is not finite")
                continue
            if self.minimum is not None:
                too_small = v <= self.minimum if self.exclusive_minimum else v < self.minimum
                if too_small:
                    bound = ">" if self.exclusive_minimum else ">="
                    problems.append(f"{self.name}: {v} out of range (must be {bound} {self.minimum:g})")
            if self.maximum is not None and v > self.maximum:
                problems.append(f"{self.name}: {v} out of range (must be <= {self.maximum:g})")
        return problems

    def format(self, value: Any) -> str:
        if isinstance(value, tuple):
            return ",".join(repr(v) for v in value)
        if isinstance(value, float):
            return repr(value)
        return str(value)


def _p(name: str, kind: str, help: str, **kw) -> Parameter:
    return Parameter(name=name, kind=kind, help=help, **kw)


PARAMETERS: dict[str, Parameter] = {
    p.name: p
    for p in (
        # lattice
        _p("L", "int", "number of sites (even)", minimum=2),
        _p("J", "float", "hopping energy", minimum=0.0, exclusive_minimum=True),
        _p("g", "float", "interaction constant g = U*nbar"),
        _p("omega", "float", "on-site frequency"),
        _p("gamma", "float", "loss rate of the central site", minimum=0.0),
        _p("nbar", "float", "mean site occupation", minimum=0.0, exclusive_minimum=True),
        _p("boundary", "str", "boundary condition", choices=tuple(b.value for b in Boundary)),
        _p("weak_link_distance", "int", "weak-link distance from the lossy site (0 = none)", minimum=0),
        _p("weak_link_distances", "ints", "weak-link distances to compare", minimum=1),
        _p("weak_link_epsilon", "float", "bond factor of a weak link", minimum=0.0, maximum=1.0, exclusive_minimum=True),
        # integration
        _p("step", "float", "time step", minimum=0.0, exclusive_minimum=True),
        _p("sample_every", "float", "output interval", minimum=0.0, exclusive_minimum=True),
        _p("t_final", "float", "end time", minimum=0.0, exclusive_minimum=True),
        # ensembles
        _p("n_traj", "int", "trajectories per ensemble", minimum=1),
        _p("sampler", "str", "initial-condition sampler", choices=tuple(s.value for s in Sampler)),
        _p("chunk_size", "int", "trajectories per vectorised chunk", minimum=1),
        _p("n_groups", "int", "trajectory groups kept for bootstrap", minimum=0),
        # chaos
        _p("n_samples", "int", "uniform phase-space samples", minimum=1),
        _p("bins", "int", "energy histogram bins", minimum=1),
        _p("T", "float", "Lyapunov integration time", minimum=0.0, exclusive_minimum=True),
        _p("renorm_interval", "float", "tangent renormalization interval", minimum=0.0, exclusive_minimum=True),
        _p("transient", "float", "time discarded before averaging growth", minimum=0.0),
        _p("k", "int", "Bloch-wave mode index", minimum=0),
        _p("perturbation", "float", "size of the initial perturbation", minimum=0.0),
        # noise and single site
        _p("A", "float", "noise power", minimum=0.0, exclusive_minimum=True),
        _p("tau", "float", "noise correlation time", minimum=0.0, exclusive_minimum=True),
        _p("n_steps", "int", "noise path length", minimum=1),
        _p("epsilon", "float", "weak-link factor of the driven site", minimum=0.0, exclusive_minimum=True),
        _p("epsilons", "floats", "weak-link factors to scan", minimum=0.0, exclusive_minimum=True),
        _p("g_values", "floats", "interaction constants to scan"),
        _p("n_real", "int", "noise realizations", minimum=1),
        _p("friction_t_final", "float", "end time of the friction run", minimum=0.0, exclusive_minimum=True),
        # observables
        _p("threshold", "float", "depletion threshold", minimum=0.0, maximum=1.0, exclusive_minimum=True),
        _p("max_lag", "int", "largest autocorrelation lag in samples", minimum=1),
        _p("neighbor_level", "float", "neighbour occupation level", minimum=0.0, maximum=1.0, exclusive_minimum=True),
        _p("xi_t_start", "float", "start of the bath-series window", minimum=0.0),
        _p("xi_t_final", "float", "end of the bath-series window", minimum=0.0, exclusive_minimum=True),
        _p("xi_sample_every", "float", "bath-series sampling interval", minimum=0.0, exclusive_minimum=True),
        _p("xi_n_traj", "int", "trajectories for the bath series", minimum=1),
    )
}

_FIG1 = {"L": 6, "J": 1.0, "g": 4.0, "omega": 0.0}
_FIG3 = {
    "L": 20,
    "J": 1.0,
    "g": 4.0,
    "omega": 0.0,
    "gamma": 0.1,
    "nbar": 700.0,
    "boundary": "periodic",
    "sampler": "zone_edge_bec",
    "chunk_size": 50,
    "step": 1.0e-3,
    "sample_every": 0.5,
}
_XI_SERIES = {"xi_t_start": 3.0, "xi_t_final": 10.0, "xi_sample_every": 0.02, "xi_n_traj": 200, "max_lag": 100}

PRESET_DEFAULTS: dict[Preset, dict[str, Any]] = {
    Preset.FIG1_SHELL: {**_FIG1, "n_samples": 100_000, "bins": 50},
    Preset.FIG1_LYAPUNOV: {
        **_FIG1,
        "n_samples": 1000,
        "T": 200.0,
        "renorm_interval": 1.0,
        "transient": 0.0,
        "step": 1.0e-3,
        "chunk_size": 50,
    },
    Preset.FIG3_DEPLETION: {
        **_FIG3,
        **_XI_SERIES,
        "weak_link_distance": 0,
        "weak_link_epsilon": 1.0,
        "n_traj": 1000,
        "n_groups": 20,
        "t_final": 400.0,
        "threshold": 0.5,
        "neighbor_level": 0.8,
    },
    Preset.FIG3D_WEAKLINKS: {
        **_FIG3,
        "weak_link_distances": (4, 6, 10),
        "weak_link_epsilon": 1.0 / math.sqrt(10.0),
        "n_traj": 1000,
        "t_final": 400.0,
    },
    Preset.OU_VALIDATION: {"A": 2.0, "tau": 0.5, "n_steps": 1_000_000, "step": 0.05, "max_lag": 20},
    Preset.SINGLE_SITE_STATIONARY: {
        "epsilons": (0.3, 0.2, 0.1),
        "g_values": (0.0, 4.0),
        "J": 1.0,
        "omega": 0.0,
        "gamma": 0.1,
        "A": 2.0,
        "tau": 0.5,
        "n_real": 400,
        "t_final": 600.0,
        "step": 0.025,  # tau/20; the OU update is exact for any step
        "sample_every": 0.5,
    },
    Preset.BLOCH_VERIFY: {**_FIG1, "k": 0, "t_final": 10.0, "step": 0.001, "perturbation": 0.0},
    Preset.REGULAR_CONTRAST: {
        **_FIG3,
        "n_traj": 200,
        "t_final": 200.0,
        "neighbor_level": 0.8,
    },
    Preset.DIFFUSION_CHECK: {
        "epsilon": 0.5,
        "J": 1.0,
        "A": 2.0,
        "tau": 0.5,
        "n_real": 2000,
        "t_final": 20.0,
        "friction_t_final": 80.0,
        "step": 0.025,  # tau/20; the OU update is exact for any step
        "sample_every": 0.5,
    },
    Preset.CORRELATION_TIME: {
        **{k: v for k, v in _FIG3.items() if k not in ("sample_every",)},
        **_XI_SERIES,
        "gamma": 0.0,
        "g_values": (2.0, 4.0, 8.0),
        "xi_t_final": 20.0,
    },
}

PRESET_DESCRIPTIONS: dict[Preset, str] = {
    Preset.FIG1_SHELL: "energy-shell volume histogram of the closed chain",
    Preset.FIG1_LYAPUNOV: "largest Lyapunov exponent against energy for uniform samples",
    Preset.FIG3_DEPLETION: "site occupations and depleted atoms of the zone-edge BEC",
    Preset.FIG3D_WEAKLINKS: "depleted atoms with weak links at several distances",
    Preset.OU_VALIDATION: "complex OU noise: stationary power and autocorrelation",
    Preset.SINGLE_SITE_STATIONARY: "stationary occupation of a site behind a weak link",
    Preset.BLOCH_VERIFY: "numerical Bloch wave against its closed form",
    Preset.REGULAR_CONTRAST: "neighbour depletion of ground-state vs zone-edge BEC",
    Preset.DIFFUSION_CHECK: "occupation diffusion of the undamped site and its friction cap",
    Preset.CORRELATION_TIME: "bath autocorrelation and correlation time against g",
}


@dataclass
class ExperimentSpec:
    """A preset plus overrides, seed and output directory."""

    name: Preset
    overrides: dict[str, Any] = field(default_factory=dict)
    root_seed: int = 0
    output_dir: str = DEFAULT_OUTPUT_DIR

    @property
    def params(self) -> dict[str, Any]:
        """Preset defaults updated with the overrides."""
        return {**PRESET_DEFAULTS[self.name], **self.overrides}

    def __getitem__(self, key: str) -> Any:
        return self.params[key]

    def scaled(self, factor: float) -> ExperimentSpec:
        """Copy with every ensemble-size parameter multiplied by *factor* (at least 1)."""
        if factor == 1.0:
            return self
        params = self.params
        overrides = dict(self.overrides)
        for key in SCALED_KEYS:
            if key in params:
                overrides[key] = max(1, round(params[key] * factor))
        return ExperimentSpec(name=self.name, overrides=overrides, root_seed=self.root_seed, output_dir=self.output_dir)

    # -- domain configs --

    def lattice(self, **changes: Any) -> LatticeConfig:
        p = {**self.params, **changes}
        cfg = LatticeConfig(
            L=p.get("L", 20),
            J=p.get("J", 1.0),
            g=p.get("g", 4.0),
            omega=p.get("omega", 0.0),
            gamma=p.get("gamma", 0.0),
            boundary=p.get("boundary", "periodic"),
            nbar=p.get("nbar", 700.0),
        )
        distance = p.get("weak_link_distance", 0)
        if distance:
            cfg = cfg.with_weak_links(distance, p["weak_link_epsilon"])
        return cfg

    def integrator(self, **changes: Any) -> IntegratorConfig:
        p = {**self.params, **changes}
        return IntegratorConfig(step=p["step"], sample_every=p["sample_every"], t_final=p["t_final"])

    def ensemble(self, workers: int = 1, **changes: Any) -> EnsembleConfig:
        p = {**self.params, **changes}
        return EnsembleConfig(
            n_traj=p["n_traj"],
            root_seed=self.root_seed,
            sampler=p.get("sampler", "zone_edge_bec"),
            nbar=p.get("nbar", 700.0),
            workers=workers,
            chunk_size=p.get("chunk_size", 50),
            n_groups=p.get("n_groups", 0),
            xi_site=p.get("xi_site"),
        )

    # -- text form --

    def to_text(self, header: Iterable[str] = ()) -> str:
        lines = [f"# {line}" for line in header]
        lines += [
            f"schema_version = {SCHEMA_VERSION}",
            f"preset = {self.name}",
            f"seed = {self.root_seed}",
            f"output_dir = {self.output_dir}",
        ]
        params = self.params
        for key in sorted(params):
            lines.append(f"{key} = {PARAMETERS[key].format(params[key])}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Parsing and validation
# ---------------------------------------------------------------------------


def parse_config_text(raw: str) -> tuple[dict[str, str], list[str]]:
    """Split config text into raw ``key -> value`` strings plus syntax problems."""
    entries: dict[str, str] = {}
    problems: list[str] = []
    for lineno, line in enumerate(raw.splitlines(), 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            problems.append(f"line {lineno}: expected 'key = value', got {text!r}")
            continue
        key, value = (part.strip() for part in text.split("=", 1))
        if not key:
            problems.append(f"line {lineno}: missing key")
            continue
        if key in entries:
            problems.append(f"line {lineno}: duplicate key {key!r}")
            continue
        entries[key] = value
    return entries, problems


def parse_set_pairs(pairs: Iterable[str]) -> tuple[dict[str, str], list[str]]:
    """Parse repeated ``--set key=value`` arguments."""
    entries: dict[str, str] = {}
    problems: list[str] = []
    for pair in pairs:
        if "=" not in pair:
            problems.append(f"--set {pair!r}: expected key=value")
            continue
        key, value = (part.strip() for part in pair.split("=", 1))
        entries[key] = value
    return entries, problems


def _cross_check(spec: ExperimentSpec) -> list[str]:
    """Problems only visible once the domain configs are built."""
    params = spec.params
    problems: list[str] = []
    if "L" in params and params["L"] % 2:
        problems.append(f"L: {params['L']} is odd (the lossy site L/2 needs an even L)")
        return problems
    if "L" in params:
        try:
            spec.lattice()
        except ModelError as e:
            problems.append(f"lattice: {e}")
        distances = params.get("weak_link_distances", ())
        for distance in distances:
            if distance > params["L"] // 2:
                problems.append(f"weak_link_distances: {distance} exceeds L/2 = {params['L'] // 2}")
        if "k" in params and params["k"] >= params["L"]:
            problems.append(f"k: {params['k']} must be < L = {params['L']}")
    if {"step", "sample_every", "t_final"} <= params.keys():
        try:
            spec.integrator()
        except IntegrationError as e:
            problems.append(f"integration: {e}")
    if {"xi_t_start", "xi_t_final"} <= params.keys() and params["xi_t_start"] >= params["xi_t_final"]:
        problems.append("xi_t_start must be < xi_t_final")
    if "n_traj" in params:
        try:
            spec.ensemble()
        except EnsembleError as e:
            problems.append(f"ensemble: {e}")
    if {"T", "renorm_interval", "transient"} <= params.keys() and params["transient"] >= params["T"]:
        problems.append("transient must be shorter than T")
    return problems


def build_spec(entries: Mapping[str, str], problems: list[str] | None = None) -> ExperimentSpec:
    """Resolve raw entries into an ExperimentSpec.

    Raises:
        ExperimentConfigError: Listing every problem found, syntax ones included.
    """
    problems = list(problems or [])
    version = entries.get("schema_version")
    if version is None:
        problems.append("schema_version: missing")
    elif version.strip() != str(SCHEMA_VERSION):
        problems.append(f"schema_version: unsupported version {version!r} (expected {SCHEMA_VERSION})")

    preset_name = entries.get("preset")
    preset: Preset | None = None
    if preset_name is None:
        problems.append("preset: missing")
    else:
        try:
            preset = Preset(preset_name)
        except ValueError:
            problems.append(f"preset: unknown preset {preset_name!r} (choose from {', '.join(Preset)})")

    seed = 0
    if "seed" in entries:
        try:
            seed = int(entries["seed"])
            if not 0 <= seed < 2**64:
                problems.append(f"seed: {seed} out of range (64-bit unsigned)")
        except ValueError:
            problems.append(f"seed: expected an integer, got {entries['seed']!r}")
    output_dir = entries.get("output_dir", DEFAULT_OUTPUT_DIR)

    overrides: dict[str, Any] = {}
    if preset is not None:
        allowed = PRESET_DEFAULTS[preset]
        for key, raw in entries.items():
            if key in RESERVED_KEYS:
                continue
            if key not in allowed:
                problems.append(f"{key}: unknown key for preset {preset}")
                continue
            param = PARAMETERS[key]
            try:
                value = param.parse(raw)
            except ValueError:
                problems.append(f"{key}: expected {param.kind}, got {raw!r}")
                continue
            issues = param.check(value)
            if issues:
                problems.extend(issues)
                continue
            overrides[key] = value

    if problems:
        raise ExperimentConfigError(problems)
    spec = ExperimentSpec(name=preset, overrides=overrides, root_seed=seed, output_dir=output_dir)
    cross = _cross_check(spec)
    if cross:
        raise ExperimentConfigError(cross)
    return spec


def validate_config(raw: str) -> ExperimentSpec:
    """Parse config text into an ExperimentSpec, reporting all problems at once."""
    entries, problems = parse_config_text(raw)
    return build_spec(entries, problems)


def resolve_spec(
    preset: str | None = None,
    config_text: str | None = None,
    set_pairs: Iterable[str] = (),
    seed: int | None = None,
    output_dir: str | None = None,
    env_defaults: Mapping[str, str] | None = None,
) -> ExperimentSpec:
    """Merge preset name, config file and ``--set`` pairs (later wins).

    *seed* and *output_dir* come from explicit flags and override
    everything. *env_defaults* only fill keys that neither the config text
    nor ``--set`` provides, so a manifest rerun keeps its seed.
    """
    entries: dict[str, str] = {"schema_version": str(SCHEMA_VERSION)}
    problems: list[str] = []
    if preset is not None:
        entries["preset"] = preset
    if config_text is not None:
        file_entries, file_problems = parse_config_text(config_text)
        problems += file_problems
        if preset is not None and file_entries.get("preset", preset) != preset:
            problems.append(f"preset: --preset {preset} conflicts with config preset {file_entries['preset']}")
        if "schema_version" not in file_entries:
            problems.append("schema_version: missing from config file")
        entries.update(file_entries)
    set_entries, set_problems = parse_set_pairs(set_pairs)
    problems += set_problems
    entries.update(set_entries)
    for key, value in (env_defaults or {}).items():
        entries.setdefault(key, value)
    if seed is not None:
        entries["seed"] = str(seed)
    if output_dir is not None:
        entries["output_dir"] = output_dir
    return build_spec(entries, problems)


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


def write_manifest(spec: ExperimentSpec, path: str | Path, header: Iterable[str] = ()) -> None:
    """Atomically write the resolved spec to *path* (write tmp + os.replace)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(spec.to_text(header))
        os.replace(tmp, str(path))
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def load_manifest(path: str | Path) -> ExperimentSpec:
    """Read a manifest (or any config file) back into an ExperimentSpec."""
    return validate_config(Path(path).read_text())
