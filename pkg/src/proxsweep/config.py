"""Run configuration: JSON text validated into a :class:`RunConfig`."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .paths import PLPath, path_from_nodes, read_path_csv, uniform_grid

__all__ = [
    "PathSpec",
    "ConstraintSpec",
    "SolverOptions",
    "CertifyOptions",
    "StateMapSpec",
    "ImplicitOptions",
    "StudyOptions",
    "RunConfig",
    "parse_config",
    "load_config",
]

COMMANDS = ("certify", "solve", "solve-implicit", "study")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PathSpec(_Strict):
    """Either inline ``nodes``/``values`` or a CSV ``file``, not both."""

    nodes: Optional[list[float]] = None
    values: Optional[list[Union[float, list[float]]]] = None
    file: Optional[str] = None

    @model_validator(mode="after")
    def _one_source(self):
        inline = self.nodes is not None or self.values is not None
        if inline and self.file is not None:
            raise ValueError("inline nodes/values and file are mutually exclusive")
        if not inline and self.file is None:
            raise ValueError("give either nodes and values or a file")
        if inline and (self.nodes is None or self.values is None):
            raise ValueError("inline paths need both nodes and values")
        if inline and len(self.nodes) != len(self.values):
            raise ValueError(f"{len(self.nodes)} nodes but {len(self.values)} values")
        return self

    def load(self, base_dir: Path) -> PLPath:
        if self.file is not None:
            with open(base_dir / self.file, newline="") as fh:
                return read_path_csv(fh)
        return path_from_nodes(self.nodes, self.values)


class ConstraintSpec(_Strict):
    family: Literal["play", "scalar_play", "ball", "moving_ball", "star", "star_set"]
    params: dict[str, Union[float, int]] = Field(default_factory=dict)


class SolverOptions(_Strict):
    scheme: Literal["catchup", "boundary-ode"] = "catchup"
    grid_n: Optional[int] = Field(default=None, gt=0)
    activation_tol: float = Field(default=1e-8, gt=0)
    gate_fraction: float = Field(default=0.5, gt=0)
    n_z: int = Field(default=64, gt=0)
    check_tol: float = Field(default=1e-6, gt=0)


class CertifyOptions(_Strict):
    w_samples: Optional[list[list[float]]] = None
    n_boundary: int = Field(default=1000, ge=1000)
    n_pairs: int = Field(default=10000, ge=10000)
    n_param_pairs: int = Field(default=10000, gt=0)
    coercivity_kappa: Optional[float] = Field(default=None, gt=0)
    rho_list: list[float] = Field(default_factory=lambda: [0.1, 0.2])
    tube: float = Field(default=0.0, ge=0)


class StateMapSpec(_Strict):
    kind: Literal["linear", "tanh"] = "linear"
    Gamma: Optional[Union[float, list[list[float]]]] = None
    Omega: Optional[Union[float, list[list[float]]]] = None
    alpha: Optional[float] = None
    w_base: Optional[PathSpec] = None

    @model_validator(mode="after")
    def _coefficients(self):
        if self.kind == "tanh" and self.alpha is None:
            raise ValueError("tanh state map needs alpha")
        if self.kind == "linear" and self.alpha is not None:
            raise ValueError("alpha only applies to the tanh state map")
        if self.kind == "tanh" and (self.Gamma is not None or self.Omega is not None):
            raise ValueError("Gamma/Omega only apply to the linear state map")
        return self


class ImplicitOptions(_Strict):
    state_map: StateMapSpec
    epsilon: float = Field(default=0.1, gt=0, lt=1)
    tol: float = Field(default=1e-8, gt=0)
    max_iter: int = Field(default=200, gt=0)


class StudyOptions(_Strict):
    kind: Optional[Literal["continuity", "lipschitz", "implicit", "order"]] = None
    benchmark: Literal["play", "ball", "star"] = "play"
    scales: Optional[list[float]] = None
    n: Optional[int] = Field(default=None, gt=0)
    grids: Optional[list[int]] = None
    w_amplitude: float = Field(default=0.25, gt=0)

    @model_validator(mode="after")
    def _scales(self):
        if self.scales is not None:
            s = np.asarray(self.scales, float)
            if np.any(s <= 0) or np.any(np.diff(s) >= 0):
                raise ValueError("scales must be positive and strictly decreasing")
        return self


class RunConfig(_Strict):
    command: Optional[Literal["certify", "solve", "solve-implicit", "study"]] = None
    constraint: Optional[ConstraintSpec] = None
    u: Optional[PathSpec] = None
    w: Optional[PathSpec] = None
    x0: Optional[list[float]] = None
    solver: SolverOptions = Field(default_factory=SolverOptions)
    certify: CertifyOptions = Field(default_factory=CertifyOptions)
    implicit: Optional[ImplicitOptions] = None
    study: StudyOptions = Field(default_factory=StudyOptions)
    seed: int = Field(default=0, ge=0, lt=2**64)
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def _required_for_command(self):
        need = {
            "certify": ("constraint",),
            "solve": ("constraint", "u", "w", "x0"),
            "solve-implicit": ("constraint", "u", "x0", "implicit"),
            "study": (),
        }.get(self.command, ())
        missing = [name for name in need if getattr(self, name) is None]
        if missing:
            raise ValueError(f"missing required field(s) for {self.command}: {', '.join(missing)}")
        return self

    # -- materialisation -------------------------------------------------
    def load_path(self, name: str, base_dir: Path) -> PLPath:
        p = getattr(self, name).load(base_dir)
        if self.solver.grid_n is not None:
            p = p.resample(uniform_grid(p.T, self.solver.grid_n))
        return p


def _problems(exc: ValidationError) -> list[str]:
    out = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        msg = err["msg"]
        if err["type"] == "extra_forbidden":
            msg = "unknown key"
        out.append(f"{loc}: {msg}")
    return out


def parse_config(text: str, command: Optional[str] = None,
                 base_dir: Optional[Path] = None) -> RunConfig:
    """Parse and validate JSON configuration text.

    ``command`` (the CLI subcommand) overrides the ``command`` key. Paths
    referenced by file are checked to exist and parse, relative to
    ``base_dir``.

    Raises
    ------
    ConfigError
        With line and column for syntax errors, or a list of every
        validation problem.
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}",
                          problems=[f"line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from None
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object", problems=["<root>: not an object"])
    if command is not None:
        if command not in COMMANDS:
            raise ConfigError(f"unknown command {command!r}", problems=[f"command: {command!r}"])
        data["command"] = command
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        problems = _problems(exc)
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems),
                          problems=problems) from None
    base_dir = Path(base_dir or ".")
    problems = []
    for name in ("u", "w"):
        spec = getattr(cfg, name)
        if spec is None:
            continue
        try:
            spec.load(base_dir)
        except (OSError, ValueError) as exc:
            problems.append(f"{name}: {exc}")
    if problems:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems),
                          problems=problems)
    return cfg


def load_config(path: str | Path, command: Optional[str] = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}", problems=[str(exc)]) from None
    return parse_config(text, command, base_dir=path.parent)
