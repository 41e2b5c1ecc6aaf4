"""Request and response bodies for the HTTP service.

These models are also the on-disk format of sweep config files, so the CLI
and the service validate input the same way.
"""

from __future__ import annotations

from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt

from dpmask.dataset import GaussianMixtureSpec, LabeledDataset, MixtureComponent, toy_mixture_spec
from dpmask.harness import DEFAULT_EPSILONS, METHODS, BoundReport, SweepConfig, SweepRecord
from dpmask.maskgen import MaskGenOptions
from dpmask.model import ModelParams

Method = Literal["mdg", "input_perturb", "output_perturb"]
NormalizeMode = Literal["max", "clip", "none"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DatasetPayload(_Strict):
    features: list[list[float]] = Field(min_length=1)
    labels: list[int] = Field(min_length=1)
    n_classes: int = Field(2, ge=2)
    norm_bounded: bool = False

    def to_dataset(self) -> LabeledDataset:
        if len({len(row) for row in self.features}) != 1:
            raise ValueError("all feature rows must have the same length")
        return LabeledDataset(
            self.features,
            self.labels,
            n_classes=self.n_classes,
            norm_bounded=self.norm_bounded,
        )

    @classmethod
    def from_dataset(cls, ds: LabeledDataset) -> "DatasetPayload":
        return cls(
            features=ds.features.tolist(),
            labels=ds.labels.tolist(),
            n_classes=ds.n_classes,
            norm_bounded=ds.norm_bounded,
        )


class ModelPayload(_Strict):
    mode: Literal["binary", "multiclass"]
    d: int
    C: int
    weights: list[float]
    scale: Optional[float] = None

    def to_params(self) -> ModelParams:
        return ModelParams.from_dict(self.model_dump())

    @classmethod
    def from_params(cls, params: ModelParams, scale: float | None = None) -> "ModelPayload":
        return cls(**params.to_dict(), scale=scale)


class MixtureComponentModel(_Strict):
    mean: list[float] = Field(min_length=1)
    variance: PositiveFloat
    count: PositiveInt


class MixtureSpecModel(_Strict):
    components: list[MixtureComponentModel] = Field(min_length=2)

    def to_spec(self) -> GaussianMixtureSpec:
        return GaussianMixtureSpec(
            tuple(MixtureComponent(tuple(c.mean), c.variance, c.count) for c in self.components)
        )

    @classmethod
    def from_spec(cls, spec: GaussianMixtureSpec) -> "MixtureSpecModel":
        return cls.model_validate(spec.to_dict())


class MaskOptionsModel(_Strict):
    restarts: PositiveInt = 5
    init_norm: PositiveFloat = 0.5
    tol: PositiveFloat = 1e-8
    max_iters: PositiveInt = 500
    radius: Optional[PositiveFloat] = None

    def to_options(self) -> MaskGenOptions:
        return MaskGenOptions(**self.model_dump())


# --------------------------------------------------------------------------
# Endpoints
# --------------------------------------------------------------------------


class SynthRequest(_Strict):
    mixture: Optional[MixtureSpecModel] = None
    n: Optional[PositiveInt] = None
    seed: int = Field(0, ge=0)


class DatasetResponse(_Strict):
    dataset: DatasetPayload
    scale: Optional[float] = None


class TrainRequest(_Strict):
    dataset: DatasetPayload
    lam: PositiveFloat = 0.5
    tol: PositiveFloat = 1e-8
    normalize: NormalizeMode = "none"
    scale: Optional[PositiveFloat] = None


class TrainResponse(_Strict):
    model: ModelPayload
    residual_norm: float
    objective: float


class MaskRequest(_Strict):
    dataset: DatasetPayload
    epsilon: PositiveFloat
    lam: PositiveFloat = 0.5
    seed: int = Field(0, ge=0)
    tol: PositiveFloat = 1e-8
    seed_set: Optional[DatasetPayload] = None
    normalize: NormalizeMode = "max"
    scale: Optional[PositiveFloat] = None
    options: MaskOptionsModel = Field(default_factory=MaskOptionsModel)
    verbose: bool = False


class MaskResponse(_Strict):
    dataset: DatasetPayload
    w_prime: ModelPayload
    scale: float
    final_mean_residual: float
    warnings: list[str] = Field(default_factory=list)
    diagnostics: Optional[list[dict[str, Any]]] = None


class PerturbRequest(_Strict):
    dataset: DatasetPayload
    epsilon: PositiveFloat
    seed: int = Field(0, ge=0)
    normalize: NormalizeMode = "max"
    scale: Optional[PositiveFloat] = None


class EvalRequest(_Strict):
    model: ModelPayload
    dataset: DatasetPayload


class EvalResponse(_Strict):
    accuracy: float
    n: int


class SweepConfigModel(_Strict):
    """JSON form of a sweep configuration."""

    mixture: Optional[MixtureSpecModel] = None
    csv_path: Optional[str] = None
    label_column: str = "label"
    ns: list[PositiveInt] = Field(default_factory=lambda: [100, 200], min_length=1)
    epsilons: list[PositiveFloat] = Field(default_factory=lambda: list(DEFAULT_EPSILONS), min_length=1)
    lam: PositiveFloat = 0.5
    repetitions: PositiveInt = 50
    methods: list[Method] = Field(default_factory=lambda: list(METHODS), min_length=1)
    validation_size: PositiveInt = 1000
    validation_fraction: float = Field(0.3, gt=0, lt=1)
    seed: int = Field(0, ge=0)
    jobs: PositiveInt = 1
    mask_options: MaskOptionsModel = Field(default_factory=MaskOptionsModel)

    def to_config(self) -> SweepConfig:
        mixture = self.mixture.to_spec() if self.mixture is not None else None
        if mixture is None and self.csv_path is None:
            mixture = toy_mixture_spec()
        return SweepConfig(
            mixture=mixture,
            csv_path=self.csv_path,
            label_column=self.label_column,
            ns=tuple(self.ns),
            epsilons=tuple(self.epsilons),
            lam=self.lam,
            repetitions=self.repetitions,
            methods=tuple(self.methods),
            validation_size=self.validation_size,
            validation_fraction=self.validation_fraction,
            seed=self.seed,
            jobs=self.jobs,
            mask_options=self.mask_options.to_options(),
        )


class SweepRecordModel(_Strict):
    method: Method
    epsilon: float
    n: int
    mean_accuracy: float
    std_accuracy: float
    reps: int

    @classmethod
    def from_record(cls, r: SweepRecord) -> "SweepRecordModel":
        return cls(
            method=r.method,
            epsilon=r.epsilon,
            n=r.n,
            mean_accuracy=r.mean_accuracy,
            std_accuracy=r.std_accuracy,
            reps=r.repetitions,
        )

    def to_record(self) -> SweepRecord:
        return SweepRecord(self.method, self.epsilon, self.n, self.mean_accuracy, self.std_accuracy, self.reps)


class SweepResponse(_Strict):
    records: list[SweepRecordModel]


class BoundCheckRequest(_Strict):
    method: Literal["output_perturb", "input_perturb"]
    delta: float = Field(0.05, gt=0, lt=1)
    epsilon: Optional[PositiveFloat] = None
    n: Optional[PositiveInt] = None
    config: SweepConfigModel = Field(default_factory=SweepConfigModel)


class BoundReportModel(_Strict):
    method: str
    delta: float
    epsilon: float
    n: int
    dim: int
    bound: float
    violation_rate: float
    max_gap: float
    mean_gap: float
    gaps: list[float]

    @classmethod
    def from_report(cls, report: BoundReport) -> "BoundReportModel":
        return cls(**report.to_dict())
