import logging
from collections.abc import Iterable, Mapping
from copy import deepcopy
from enum import Enum
from pathlib import Path
from typing import Any

import yaml
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from gplfm.errors import UsageError
from gplfm.kernels import parse_smoothness
from gplfm.lfm import PARAMETER_NAMES
from gplfm.mcmc import ParameterPrior, PriorSpec
from gplfm.simulate import ExcitationSpec, PolynomialOde
from gplfm.state_space import ObservationMode

LOGGER = logging.getLogger(__name__)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SystemConfig(_Section):
    observation: ObservationMode = ObservationMode.ACCELERATION
    initial_std_factor: float = 1e3


class KernelConfig(_Section):
    smoothness: float = 0.5

    @field_validator("smoothness", mode="before")
    @classmethod
    def _parse(cls, value):
        return parse_smoothness(value)


class PriorConfig(_Section):
    mean: float
    variance: float
    active: bool = True


class ProposalBasis(str, Enum):
    PRIOR_STD = "prior_std"
    SMALLER_OF_STD_AND_MEAN = "smaller_of_std_and_mean"


class McmcConfig(_Section):
    n_accept: int = 2000
    burn_in: int = 200
    proposal_fraction: float = 0.02
    proposal_basis: ProposalBasis = ProposalBasis.PRIOR_STD
    adapt: bool = True
    adapt_interval: int = 100
    full_budget: bool = False
    full_n_accept: int = 20000
    full_burn_in: int = 2000

    @property
    def budget(self) -> tuple[int, int]:
        if self.full_budget:
            return self.full_n_accept, self.full_burn_in
        return self.n_accept, self.burn_in


class FittingConfig(_Section):
    max_order: int = 9
    order: int | None = None
    include_intercept: bool = False
    velocity_order: int = 0
    weight_prior_variance: float | None = None
    n_state_samples: int = 50


class DataConfig(_Section):
    path: Path | None = None
    t_column: str = "t"
    u_column: str = "u"
    y_column: str = "y"
    fs: float | None = None
    upsample: int = 1
    train_range: tuple[int, int] | None = None
    test_range: tuple[int, int] | None = None

    @property
    def columns(self) -> dict[str, str]:
        return {"t": self.t_column, "u": self.u_column, "y": self.y_column}


class ExcitationConfig(_Section):
    hs: float = 2.5
    tp: float = 1.0
    n_freq: int = 1000
    fs: float = 100.0
    n_samples: int = 12566
    gamma_peak: float = 3.3
    f_min_factor: float = 0.2
    f_max_factor: float = 5.0

    def spec(self, seed: int) -> ExcitationSpec:
        return ExcitationSpec(seed=seed, **self.model_dump())


class SimulationConfig(_Section):
    m: float = 1.0
    c: float = 0.4
    k: float = 100.0
    nl_terms: list[tuple[int, float]] = [(3, 1000.0)]
    noise_variance: float = 0.05
    observe: ObservationMode = ObservationMode.ACCELERATION
    gamma: float = 0.5
    beta: float = 0.25
    excitation: ExcitationConfig = ExcitationConfig()

    def ode(self) -> PolynomialOde:
        return PolynomialOde(m=self.m, c=self.c, k=self.k, nl_terms=tuple(self.nl_terms))


class EvaluationConfig(_Section):
    fresh_excitation: bool = False
    psd_segment: int = 1024


class RunConfig(_Section):
    """Everything a pipeline run needs; validated once at the start of the run."""

    case: str | None = None
    seed: int | None = None
    output_dir: Path = Path("runs/latest")
    use_cache: bool = True
    cache_dir: Path = Path(".gplfm_cache")
    workers: int = 1
    system: SystemConfig = SystemConfig()
    kernel: KernelConfig = KernelConfig()
    priors: dict[str, PriorConfig] = {}
    mcmc: McmcConfig = McmcConfig()
    fitting: FittingConfig = FittingConfig()
    data: DataConfig = DataConfig()
    simulation: SimulationConfig = SimulationConfig()
    evaluation: EvaluationConfig = EvaluationConfig()

    @model_validator(mode="after")
    def _check_priors(self):
        if self.priors:
            missing = set(PARAMETER_NAMES) - set(self.priors)
            if missing:
                raise ValueError(f"priors missing for {sorted(missing)}")
        return self

    def prior_spec(self) -> PriorSpec:
        if not self.priors:
            raise UsageError("the configuration defines no priors (select a --case?)")
        return PriorSpec(
            {name: ParameterPrior(**prior.model_dump()) for name, prior in self.priors.items()}
        )

    def with_priors(self, priors: PriorSpec) -> "RunConfig":
        return self.model_copy(
            update={
                "priors": {
                    name: PriorConfig(mean=p.mean, variance=p.variance, active=p.active)
                    for name, p in priors.priors.items()
                }
            }
        )


def deep_merge(base: Mapping, update: Mapping) -> dict:
    merged = deepcopy(dict(base))
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = deepcopy(value)
    return merged


def _nested(dotted: str, value: Any) -> dict:
    keys = [key for key in dotted.strip().split(".") if key]
    if not keys:
        raise UsageError(f"override key {dotted!r} is empty")
    nested = value
    for key in reversed(keys):
        nested = {key: nested}
    return nested


def apply_override(config: dict, assignment: str) -> dict:
    """Apply one `section.key=value` override; the value is parsed as a YAML scalar."""
    if "=" not in assignment:
        raise UsageError(f"override {assignment!r} is not of the form key=value")
    dotted, raw = assignment.split("=", 1)
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise UsageError(f"override {assignment!r} has an unparsable value: {exc}") from None
    return deep_merge(config, _nested(dotted, value))


class Config:
    def __init__(self):
        default_path = Path(__file__).parent / "config.yaml"
        self.defaults: dict[str, Any] = {}
        self.cases: dict[str, dict[str, Any]] = {}
        self.load_config(default_path)

    def load_config(self, path: str | Path):
        path = Path(path)
        if not path.exists():
            LOGGER.warning("config not found at %s, keeping the current settings", path)
            return

        # Parse YAML
        config = yaml.safe_load(path.read_text(encoding="utf-8")) or {}

        # Defaults are merged over any already loaded, so a user file may be partial
        self.defaults = deep_merge(self.defaults, config.get("defaults", {}))

        for case in config.get("cases", []):
            name = case.get("name")
            if not name:
                continue  # Skip entries without a name
            case_specific = {k: v for k, v in case.items() if k != "name"}
            self.cases[name] = deep_merge(self.cases.get(name, {}), case_specific)

    def get_case(self, name: str | None) -> dict[str, Any]:
        """Defaults with the named case merged over them."""
        if name is None:
            return deepcopy(self.defaults)
        if name not in self.cases:
            raise UsageError(f"unknown case {name!r}; available: {sorted(self.cases)}")
        merged = deep_merge(self.defaults, self.cases[name])
        merged["case"] = name
        return merged

    def build_run_config(
        self,
        case: str | None = None,
        overrides: Iterable[str] = (),
        **values: Any,
    ) -> RunConfig:
        """Case preset, then `--set` overrides, then explicit keyword values (None is skipped)."""
        merged = self.get_case(case)
        for assignment in overrides:
            merged = apply_override(merged, assignment)
        for dotted, value in values.items():
            if value is not None:
                merged = deep_merge(merged, _nested(dotted, value))
        try:
            return RunConfig.model_validate(merged)
        except ValidationError as exc:
            raise UsageError(f"invalid configuration:\n{exc}") from None
