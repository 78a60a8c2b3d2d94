"""Experiment configuration documents (YAML) and their validation."""

from __future__ import annotations

from fractions import Fraction
from typing import Annotated, Any, Literal, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError, model_validator

SEED_MAX = 2**64 - 1

Label = Union[int, str, list]
Number = Union[int, float, str]


class ConfigParseError(ValueError):
    """The document is not well-formed YAML, or could not be read."""


class ConfigValidationError(ValueError):
    """The document parsed but does not describe a valid experiment."""


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


def exact_number(v: Number):
    """YAML number or ``"p/q"`` string -> int, Fraction or float."""
    if isinstance(v, bool):
        raise ValueError("booleans are not numbers")
    if isinstance(v, (int, float)):
        return v
    f = Fraction(v.strip())
    return f.numerator if f.denominator == 1 else f


class Tolerances(Strict):
    float_abs: float = Field(1e-12, ge=0)
    gp_mean_rel: float = Field(1e-8, ge=0)
    gp_cov_abs: float = Field(1e-6, ge=0)
    z_max: float = Field(3.0, gt=0)
    z_fraction: float = Field(0.95, ge=0, le=1)
    min_ess: float = Field(100.0, ge=0)


class _Common(Strict):
    seed: int | None = Field(None, ge=0, le=SEED_MAX)
    output: str | None = None
    tolerances: Tolerances = Field(default_factory=Tolerances)

    def is_stochastic(self) -> bool:
        return True

    @model_validator(mode="after")
    def _seed_present(self):
        if self.seed is None and self.is_stochastic():
            raise ValueError(f"a seed is required for {self.family}/{self.operation}")
        return self


# finite models


class RandomFinite(Strict):
    count: int = Field(100, ge=1, le=100_000)
    mode: Literal["exact-rational", "float64"] = "exact-rational"
    max_theta: int = Field(6, ge=1, le=64)
    max_inputs: int = Field(4, ge=1, le=64)
    max_labels: int = Field(5, ge=1, le=64)
    max_n: int = Field(5, ge=0, le=12)
    max_m: int = Field(3, ge=1, le=6)


class FiniteParams(Strict):
    model: str | None = None
    sample: list[tuple[Label, Label]] | str = Field(default_factory=list)
    test: list[Label] = Field(default_factory=list)
    random: RandomFinite | None = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.model is None) == (self.random is None):
            raise ValueError("give exactly one of 'model' (a model file) or 'random'")
        return self


class FiniteConfig(_Common):
    family: Literal["finite"]
    operation: Literal["invert", "predict", "consistency"]
    params: FiniteParams

    def is_stochastic(self) -> bool:
        return self.params.random is not None

    @model_validator(mode="after")
    def _needs_test(self):
        p = self.params
        if p.model is not None and self.operation == "predict" and not p.test:
            raise ValueError("predict needs test inputs")
        if p.model is not None and self.operation == "consistency" and len(p.test) < 2:
            raise ValueError("consistency needs at least two test inputs")
        return self


# gaussian processes


class GpParams(Strict):
    kernel: Literal["rbf", "matern32", "matern52"] = "rbf"
    lengthscale: float | None = Field(None, gt=0)
    variance: float | None = Field(None, gt=0)
    noise: float | None = Field(None, gt=0)
    n: int = Field(200, ge=0, le=20_000)
    m: int = Field(10, ge=1, le=2_000)
    domain: float = Field(10.0, gt=0)
    instances: int = Field(1, ge=1, le=10_000)
    data: str | None = None
    test: list[float] | None = None
    sizes: list[int] = Field(default_factory=lambda: [50, 100, 200, 400])
    reps: int = Field(3, ge=1, le=1_000)

    @model_validator(mode="after")
    def _check(self):
        if self.data is not None and not self.test:
            raise ValueError("test inputs are required when 'data' is given")
        if any(s < 1 for s in self.sizes) or any(b <= a for a, b in zip(self.sizes, self.sizes[1:])):
            raise ValueError("sizes must be positive and strictly ascending")
        return self


class GpConfig(_Common):
    family: Literal["gp"]
    operation: Literal["batch", "recursive", "compare", "stream", "bench"]
    params: GpParams = Field(default_factory=GpParams)

    def is_stochastic(self) -> bool:
        return self.params.data is None


# dirichlet processes


class UniformSpec(Strict):
    family: Literal["uniform"]
    low: Number = 0
    high: Number = 1


class NormalSpec(Strict):
    family: Literal["normal"]
    loc: float = 0.0
    scale: float = Field(1.0, gt=0)


BaseSpec = Annotated[Union[UniformSpec, NormalSpec], Field(discriminator="family")]


class AlphaSpec(Strict):
    atoms: list[tuple[Label, Number]] = Field(default_factory=list)
    base: BaseSpec | None = None
    mass: Number = 0


class DpParams(Strict):
    alpha: AlphaSpec
    observations: list[Label] = Field(default_factory=list)
    cuts: list[Number] | None = None
    cells: list[list[Label]] | None = None
    chain: list[list[Number]] | None = None
    random_chains: int = Field(100, ge=1, le=100_000)
    truncation: int | None = Field(None, ge=1)
    bias: float = Field(1e-4, gt=0, lt=1)
    reps: int = Field(1, ge=1, le=1_000_000)

    @model_validator(mode="after")
    def _one_partition(self):
        if self.cuts is not None and self.cells is not None:
            raise ValueError("give at most one of 'cuts' and 'cells'")
        return self


class DpConfig(_Common):
    family: Literal["dp"]
    operation: Literal["posterior", "project", "sample", "check"]
    params: DpParams

    def is_stochastic(self) -> bool:
        return self.operation == "sample" or (self.operation == "check" and self.params.chain is None)

    @model_validator(mode="after")
    def _needs_partition(self):
        if self.operation == "project" and self.params.cuts is None and self.params.cells is None:
            raise ValueError("project needs 'cuts' or 'cells'")
        return self


# dependent dirichlet processes


class LinearSpec(Strict):
    intercept: float
    slope: float = 0.0


class DdpNormalSpec(Strict):
    family: Literal["normal"]
    loc_intercept: float = 0.0
    loc_slope: float = 0.0
    scale: float = Field(1.0, gt=0)


class DdpUniformSpec(Strict):
    family: Literal["uniform"]
    center_intercept: float = 0.0
    center_slope: float = 0.0
    half_width: float = Field(1.0, gt=0)


class CopulaConfig(Strict):
    kind: Literal["independent", "comonotone", "exponential", "constant"] = "independent"
    lengthscale: float | None = Field(None, gt=0)
    rho: float | None = Field(None, ge=-1, le=1)

    @model_validator(mode="after")
    def _parameters(self):
        if self.kind == "exponential" and self.lengthscale is None:
            raise ValueError("exponential correlation needs 'lengthscale'")
        if self.kind == "constant" and self.rho is None:
            raise ValueError("constant correlation needs 'rho'")
        return self


class DdpParams(Strict):
    sites: list[float] = Field(min_length=1)
    alpha: LinearSpec
    base: Annotated[Union[DdpNormalSpec, DdpUniformSpec], Field(discriminator="family")]
    copula_v: CopulaConfig = Field(default_factory=CopulaConfig)
    copula_theta: CopulaConfig = Field(default_factory=CopulaConfig)
    truncation: int | None = Field(None, ge=1)
    bias: float = Field(1e-4, gt=0, lt=1)
    cuts: list[float] = Field(default_factory=list)
    reps: int = Field(100_000, ge=1, le=10_000_000)
    sample: list[tuple[float, float]] = Field(default_factory=list)
    test: list[float] | None = None

    @model_validator(mode="after")
    def _check(self):
        for x in self.sites + [x for x, _ in self.sample] + (self.test or []):
            if not self.alpha.intercept + self.alpha.slope * x > 0:
                raise ValueError(f"concentration is not positive at input {x}")
        if any(b <= a for a, b in zip(self.cuts, self.cuts[1:])):
            raise ValueError("cuts must be strictly increasing")
        return self


class DdpConfig(_Common):
    family: Literal["ddp"]
    operation: Literal["sample", "project", "mean-check", "predict"]
    params: DdpParams

    @model_validator(mode="after")
    def _op_requirements(self):
        if self.operation == "mean-check" and self.params.reps < 1000:
            raise ValueError("mean-check needs reps >= 1000")
        if self.operation == "predict" and not self.params.test:
            raise ValueError("predict needs test inputs")
        return self


ExperimentConfig = Annotated[Union[FiniteConfig, GpConfig, DpConfig, DdpConfig], Field(discriminator="family")]
_ADAPTER = TypeAdapter(ExperimentConfig)

FAMILIES = ("finite", "gp", "dp", "ddp")


def parse_text(text: str, source: str = "<config>") -> Any:
    try:
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark is not None else "unknown position"
        raise ConfigParseError(f"{source}: {where}: {exc.problem}") from None
    except yaml.YAMLError as exc:
        raise ConfigParseError(f"{source}: {exc}") from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigParseError(f"{source}: top level must be a mapping, got {type(doc).__name__}")
    return doc


def read_document(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigParseError(f"{path}: {exc.strerror}") from None
    return parse_text(text, path)


def set_path(doc: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = doc
    for k in keys[:-1]:
        nxt = node.get(k)
        if not isinstance(nxt, dict):
            nxt = node[k] = {}
        node = nxt
    node[keys[-1]] = value


def validate(doc: dict):
    try:
        return _ADAPTER.validate_python(doc)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"])
            lines.append(f"{loc or '<root>'}: {err['msg']}")
        raise ConfigValidationError("\n".join(lines)) from None


def echo(cfg) -> dict:
    return cfg.model_dump(mode="json")
