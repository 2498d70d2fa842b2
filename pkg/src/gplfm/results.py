from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field

from gplfm.simulate import PolynomialOde, linearised
from gplfm.state_space import ObservationMode


class Artifact(BaseModel):
    """
    A pydantic model that is written to disk as JSON, with full double precision.
    """

    model_config = ConfigDict(ser_json_inf_nan="constants")

    def to_json(self) -> str:
        """
        Returns a JSON representation of the object.
        """
        return self.model_dump_json(indent=2)

    def to_dict(self) -> dict:
        """
        Returns a dictionary representation of the object.
        """
        return self.model_dump()

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.to_json() + "\n", encoding="utf-8")
        return path

    @classmethod
    def read(cls, path: str | Path):
        return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))


class ParameterSummary(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    mean: float
    std: float
    map: float
    prior_mean: float
    prior_variance: float
    active: bool = True


class PosteriorSummary(Artifact):
    parameters: dict[str, ParameterSummary]
    acceptance_rate: float
    accepted: int
    proposed: int
    burn_in: int
    seed: int | None = None

    def map_values(self) -> dict[str, float]:
        return {name: summary.map for name, summary in self.parameters.items()}

    def __str__(self) -> str:
        rows = [
            f"{name:>9}: MAP {s.map:.6g}  mean {s.mean:.6g} ± {s.std:.3g}"
            for name, s in self.parameters.items()
        ]
        rows.append(f"acceptance rate {self.acceptance_rate:.1%}")
        return "\n".join(rows)


class Coefficient(BaseModel):
    variable: str
    degree: int
    mean: float
    std: float


class FittedModel(Artifact):
    """
    Identified oscillator: MAP linear parameters plus the polynomial fitted to the GP force.

    The linear-in-z coefficient α of the fit is folded into the stiffness:
    k_corrected = k_map + α.
    """

    order: int
    coefficients: list[Coefficient]
    bic: float
    k_map: float
    k_corrected: float
    c: float
    m: float
    noise_variance: float
    include_intercept: bool = False
    smoothness: float | None = None
    observation: ObservationMode = ObservationMode.ACCELERATION

    def coefficient(self, variable: str, degree: int) -> float:
        for coefficient in self.coefficients:
            if coefficient.variable == variable and coefficient.degree == degree:
                return coefficient.mean
        return 0.0

    @property
    def alpha(self) -> float:
        return self.coefficient("z", 1)

    def to_ode(self, corrected: bool = True) -> PolynomialOde:
        """The nonlinear model for simulation, with α folded into k or kept as a z¹ term."""
        nl_terms = []
        velocity_terms = []
        for coefficient in self.coefficients:
            if coefficient.variable == "zdot":
                velocity_terms.append((coefficient.degree, coefficient.mean))
            elif coefficient.variable == "1":
                nl_terms.append((0, coefficient.mean))
            elif not (corrected and coefficient.degree == 1):
                nl_terms.append((coefficient.degree, coefficient.mean))
        k = self.k_corrected if corrected else self.k_map
        return PolynomialOde(
            m=self.m, c=self.c, k=k, nl_terms=tuple(nl_terms), velocity_terms=tuple(velocity_terms)
        )

    def to_linear_ode(self) -> PolynomialOde:
        return linearised(self.to_ode(corrected=False))


class ResidualReport(Artifact):
    nmse: float = Field(ge=0)
    ks_statistic: float
    ks_p_value: float = Field(ge=0, le=1)
    ks_reject: bool
    residual: list[float]
    frequencies: list[float]
    power: list[float]


class RunManifest(Artifact):
    command: str
    status: str = "running"
    config: dict
    seeds: dict[str, int | None] = Field(default_factory=dict)
    artifacts: dict[str, str] = Field(default_factory=dict)
    partial: bool = False
    error: str | None = None
    started_at: str
    finished_at: str | None = None


class MetricReport(Artifact):
    """Named scalar metrics of one run stage (NMSE in percent, RMSE in signal units)."""

    metrics: dict[str, float] = Field(default_factory=dict)
    notes: list[str] = Field(default_factory=list)


class PriorSensitivityReport(Artifact):
    runs: list[PosteriorSummary]
    priors: list[dict[str, float]]
    map_spread: dict[str, float]
    selected_orders: list[int]

    def __str__(self) -> str:
        return "\n".join(
            f"{name:>9}: relative MAP spread {spread:.2%}"
            for name, spread in self.map_spread.items()
        )
