from typing import Annotated, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, TypeAdapter

from core.dynamics import DEFAULT_BETA, DEFAULT_DT
from core.kernels import FastLimit, Sigma
from core.loss import LossQuadConfig

SigmaList = List[Annotated[Sigma, Field(union_mode="left_to_right")]]


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class QuadParams(StrictModel):
    n_z: int = Field(21, ge=1)
    n_level: int = Field(64, ge=2)
    m_outer: int = Field(256, ge=1)
    n_pairs: int = Field(256, ge=1)
    support_floor: float = Field(0.0, ge=0.0, lt=1.0)

    def config(self, seed: int) -> LossQuadConfig:
        return LossQuadConfig(seed=seed, **self.model_dump())


class LumpabilityDecayParams(StrictModel):
    dims: List[Annotated[int, Field(ge=2, le=5)]] = [2, 3]
    tau: float = Field(1.0, gt=0)
    sigmas: List[Annotated[float, Field(gt=0)]] = [1.0 + 0.25 * i for i in range(13)]
    nodes: int = Field(128, ge=8)
    fit_from: float = Field(2.0, gt=0)


class TransitionDensityParams(StrictModel):
    tau: float = Field(1.0, gt=0)
    sigmas: SigmaList = [1.0, 2.0, 4.0, FastLimit.INFINITE]
    start: Tuple[float, float] = (0.0, 0.0)
    nodes: int = Field(64, ge=8)


class LossLandscapeParams(StrictModel):
    tau: float = Field(1.0, gt=0)
    sigmas: SigmaList = [1.0, 2.0, FastLimit.INFINITE]
    n_alpha: int = Field(33, ge=3)
    quad: QuadParams = QuadParams()


class VarianceStudyParams(StrictModel):
    tau: float = Field(0.5, gt=0)
    sigmas: SigmaList = [1.0, 2.0, 4.0, FastLimit.INFINITE]
    quad: QuadParams = QuadParams(m_outer=512)


class McErrorParams(StrictModel):
    dims: List[Annotated[int, Field(ge=2, le=3)]] = [2, 3]
    tau: float = Field(1.0, gt=0)
    sigmas: SigmaList = [2.0, FastLimit.INFINITE]
    m_list: List[Annotated[int, Field(ge=2)]] = [16, 64, 256, 1024]
    n_trials: int = Field(50, ge=1)
    quad: QuadParams = QuadParams(n_z=16, n_level=32, n_pairs=128)


class CircularLossParams(StrictModel):
    sigmas: List[Annotated[float, Field(gt=0)]] = [1.0, 10.0, 100.0]
    beta: float = Field(DEFAULT_BETA, gt=0)
    dt: float = Field(DEFAULT_DT, gt=0)
    tau: float = Field(0.1, gt=0)
    n_replicas: int = Field(2000, ge=2)
    bandwidth: Optional[float] = Field(None, gt=0)
    grid_nodes: int = Field(96, ge=8)
    smoothed_ratio: bool = True
    quad: QuadParams = QuadParams(n_z=16, n_level=32, m_outer=96, n_pairs=128, support_floor=1e-2)


class SpectrumParams(StrictModel):
    sigmas: List[Annotated[float, Field(gt=0)]] = [1.0, 100.0]
    beta: float = Field(DEFAULT_BETA, gt=0)
    dt: float = Field(DEFAULT_DT, gt=0)
    tau: float = Field(0.1, gt=0)
    grid_k: int = Field(48, ge=4)
    samples_per_cell: int = Field(100, ge=10)
    k_eigs: int = Field(10, ge=6)


class OracleSuiteParams(StrictModel):
    n_chains: int = Field(100, ge=1)
    max_states: int = Field(20, ge=6)
    max_labels: int = Field(5, ge=2)
    block_sizes: List[Annotated[int, Field(ge=1)]] = [4, 3, 5]
    epsilons: List[Annotated[float, Field(gt=0, le=1)]] = [1e-3 * 10 ** (i / 4) for i in range(9)]
    torus_n: int = Field(2, ge=2, le=3)
    torus_k: int = Field(12, ge=2, le=64)
    torus_tau: float = Field(1.0, gt=0)
    torus_sigma: Annotated[Sigma, Field(union_mode="left_to_right")] = 2.0
    quad: QuadParams = QuadParams(n_level=1024, m_outer=2048, n_pairs=8192)
    m_list: List[Annotated[int, Field(ge=2)]] = [16, 64, 256]
    n_trials: int = Field(20, ge=1)


class RunSettings(StrictModel):
    seed: int = Field(0, ge=0)
    output_dir: str = "results"


class LumpabilityDecayConfig(RunSettings):
    experiment: Literal["lumpability-decay"]
    parameters: LumpabilityDecayParams = LumpabilityDecayParams()


class TransitionDensityConfig(RunSettings):
    experiment: Literal["transition-density"]
    parameters: TransitionDensityParams = TransitionDensityParams()


class LossLandscapeConfig(RunSettings):
    experiment: Literal["loss-landscape"]
    parameters: LossLandscapeParams = LossLandscapeParams()


class VarianceStudyConfig(RunSettings):
    experiment: Literal["variance-study"]
    parameters: VarianceStudyParams = VarianceStudyParams()


class McErrorConfig(RunSettings):
    experiment: Literal["mc-error"]
    parameters: McErrorParams = McErrorParams()


class CircularLossConfig(RunSettings):
    experiment: Literal["circular-loss"]
    parameters: CircularLossParams = CircularLossParams()


class SpectrumConfig(RunSettings):
    experiment: Literal["spectrum"]
    parameters: SpectrumParams = SpectrumParams()


class OracleSuiteConfig(RunSettings):
    experiment: Literal["oracle-suite"]
    parameters: OracleSuiteParams = OracleSuiteParams()


ExperimentConfig = Annotated[
    Union[
        LumpabilityDecayConfig,
        TransitionDensityConfig,
        LossLandscapeConfig,
        VarianceStudyConfig,
        McErrorConfig,
        CircularLossConfig,
        SpectrumConfig,
        OracleSuiteConfig,
    ],
    Field(discriminator="experiment"),
]

EXPERIMENT_CONFIG = TypeAdapter(ExperimentConfig)
