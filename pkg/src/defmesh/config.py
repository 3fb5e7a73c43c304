"""Pipeline configuration: validated scenario files (TOML or JSON)."""
from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .geometry import Ellipsoid, HalfSpace, ImplicitShape, Sphere

SCHEMA_VERSION = "defmesh/1"


class ConfigError(ValueError):
    """Invalid or unreadable configuration; ``path`` names the offending field."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SphereSpec(_Model):
    type: Literal["sphere"]
    center: list[float]
    radius: float = Field(gt=0)

    def build(self) -> ImplicitShape:
        return Sphere(tuple(self.center), self.radius)


class EllipsoidSpec(_Model):
    type: Literal["ellipsoid"]
    center: list[float]
    semi_axes: list[float]

    @model_validator(mode="after")
    def _lengths(self):
        if len(self.center) != len(self.semi_axes):
            raise ValueError("center and semi_axes must have the same length")
        if min(self.semi_axes) <= 0:
            raise ValueError("semi_axes must be positive")
        return self

    def build(self) -> ImplicitShape:
        return Ellipsoid(tuple(self.center), tuple(self.semi_axes))


class HalfSpaceSpec(_Model):
    type: Literal["halfspace"]
    point: list[float]
    normal: list[float]

    def build(self) -> ImplicitShape:
        return HalfSpace(tuple(self.point), tuple(self.normal))


ShapeSpec = Annotated[Union[SphereSpec, EllipsoidSpec, HalfSpaceSpec], Field(discriminator="type")]


class TargetSpec(_Model):
    shape: ShapeSpec
    projection: Optional[Literal["radial", "closest"]] = None  # radial for spheres, closest otherwise

    def resolved_projection(self) -> str:
        if self.projection is not None:
            return self.projection
        return "radial" if self.shape.type == "sphere" else "closest"


class MarkerSpec(_Model):
    kind: Literal["moving", "slippery", "fixed"]
    name: Optional[str] = None  # defaults to the side name; shared names merge sides


class GridSpec(_Model):
    resolution: list[int]
    bounds: Optional[list[list[float]]] = None  # [[lo...], [hi...]], unit box by default
    markers: dict[str, MarkerSpec] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check(self):
        if len(self.resolution) not in (2, 3):
            raise ValueError(f"resolution must have 2 or 3 entries, got {len(self.resolution)}")
        if min(self.resolution) < 1:
            raise ValueError("resolution entries must be >= 1")
        d = len(self.resolution)
        if self.bounds is not None:
            if len(self.bounds) != 2 or any(len(b) != d for b in self.bounds):
                raise ValueError(f"bounds must be [[lo x{d}], [hi x{d}]]")
            if any(lo >= hi for lo, hi in zip(*self.bounds)):
                raise ValueError("bounds need lo < hi on every axis")
        return self

    @property
    def dim(self) -> int:
        return len(self.resolution)


class MonitorConfig(_Model):
    source: Literal["uniform", "interface", "grayscale"] = "uniform"
    mode: Literal["auto", "fixed-domain", "moving-domain", "combined"] = "auto"
    f_floor: float = Field(1e-3, gt=0)
    # interface source
    base: Optional[float] = None
    focus: Optional[float] = None
    width: Optional[float] = None
    shape: Optional[ShapeSpec] = None
    # grayscale source; image path is relative to the config file
    image: Optional[str] = None
    f_range: Optional[list[float]] = None
    bbox: Optional[list[list[float]]] = None

    @model_validator(mode="after")
    def _check(self):
        if self.source == "interface":
            missing = [k for k in ("base", "focus", "width", "shape") if getattr(self, k) is None]
            if missing:
                raise ValueError(f"interface monitor needs {', '.join(missing)}")
            if min(self.base, self.focus) <= 0 or self.width <= 0:
                raise ValueError("base, focus and width must be positive")
        if self.source == "grayscale":
            if self.image is None or self.f_range is None:
                raise ValueError("grayscale monitor needs image and f_range")
            if len(self.f_range) != 2 or not 0 < self.f_range[0] <= self.f_range[1]:
                raise ValueError("f_range must be [f_min, f_max] with 0 < f_min <= f_max")
        return self


class RunSpec(_Model):
    dt: float = Field(0.05, gt=0, le=1)
    dt_refine: float = Field(0.1, gt=0, le=1)
    T: float = Field(1.0, gt=0, le=1)  # a smaller T stops the morph part way
    tol_cg: float = Field(1e-10, gt=0)
    fold_action: Literal["halt", "retry-half-dt"] = "retry-half-dt"
    max_retries: int = Field(8, ge=0, le=8)


OutputKind = Literal["mesh", "history", "refined", "msh", "vtk", "svg"]


class OutputSpec(_Model):
    dir: str = "out"
    requests: list[OutputKind] = Field(default_factory=lambda: ["mesh", "history"])


class PipelineConfig(_Model):
    """A complete scenario.

    Defaults: ``run`` as in :class:`RunSpec` (dt 0.05, dt_refine 0.1, T 1,
    CG tolerance 1e-10, halve dt on folds up to 8 times), uniform monitor,
    order 3, outputs ``mesh`` and ``history`` under ``out/``. Grid sides
    without a marker are fixed.
    """

    schema_: Literal["defmesh/1"] = Field(alias="schema")
    scenario: str
    grid: GridSpec
    targets: dict[str, TargetSpec] = Field(default_factory=dict)
    monitor: MonitorConfig = MonitorConfig()
    run: RunSpec = RunSpec()
    order: int = Field(3, ge=2)
    output: OutputSpec = OutputSpec()

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    @model_validator(mode="after")
    def _cross_checks(self):
        d = self.grid.dim
        moving = {m.name or side for side, m in self.grid.markers.items() if m.kind == "moving"}
        missing = sorted(moving - set(self.targets))
        if missing:
            raise ValueError(f"moving markers without a target: {missing}")
        unused = sorted(set(self.targets) - moving)
        if unused:
            raise ValueError(f"targets for unknown moving markers: {unused}")
        for name, t in self.targets.items():
            if len(_shape_center(t.shape)) != d:
                raise ValueError(f"target {name!r} has dimension {len(_shape_center(t.shape))}, grid is {d}D")
        if self.monitor.mode == "fixed-domain" and moving:
            raise ValueError("fixed-domain monitor mode cannot have moving markers")
        if self.monitor.mode == "moving-domain" and self.monitor.source != "uniform":
            raise ValueError("moving-domain monitor mode needs a uniform source")
        if self.monitor.mode == "combined" and not moving:
            raise ValueError("combined monitor mode needs a moving marker")
        if self.run.dt > self.run.T or self.run.dt_refine > self.run.T:
            raise ValueError("dt and dt_refine must not exceed T")
        if "svg" in self.output.requests and d != 2:
            raise ValueError("svg output is 2D only")
        return self

    def effective(self) -> dict:
        """Every field with defaults filled in; loading it back gives an equal config."""
        return self.model_dump(mode="json", by_alias=True)


def _shape_center(s) -> list[float]:
    return s.point if s.type == "halfspace" else s.center


def _field_path(err: dict) -> str:
    return ".".join(str(p) for p in err["loc"] if not str(p).startswith("function-"))


def parse_config(data: dict, base_dir: Path | None = None) -> PipelineConfig:
    try:
        cfg = PipelineConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        path = _field_path(first)
        msg = first["msg"]
        if first["type"] == "extra_forbidden":
            msg = f"unknown key {first['loc'][-1]!r}"
        raise ConfigError(msg, path) from None
    if base_dir is not None and cfg.monitor.image is not None and not Path(cfg.monitor.image).is_absolute():
        mon = cfg.monitor.model_copy(update={"image": str((base_dir / cfg.monitor.image).resolve())})
        cfg = cfg.model_copy(update={"monitor": mon})
    return cfg


def read_structured(path) -> dict:
    """Parse a TOML or JSON file into a dict."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        if path.suffix == ".json":
            return json.loads(raw)
        return tomllib.loads(raw.decode("utf-8"))
    except (json.JSONDecodeError, tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_config(path) -> PipelineConfig:
    return parse_config(read_structured(path), Path(path).resolve().parent)


def parse_shape(text_or_path: str) -> ImplicitShape:
    """A shape from inline JSON or from a TOML/JSON file."""
    text = text_or_path.strip()
    data = json.loads(text) if text.startswith("{") else read_structured(text)
    try:
        return TargetSpec.model_validate({"shape": data}).shape.build()
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigError(first["msg"], _field_path(first)) from None
