"""Configuration management for the gann toolkit."""

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Toolkit settings, overridable through ``GANN_*`` environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="GANN_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
    )

    # Application Configuration
    app_name: str = Field(default="gann query server", description="Application name")
    app_version: str = Field(default="0.1.0", description="Application version")
    debug: bool = Field(default=False, description="Debug mode")
    log_level: str = Field(default="INFO", description="Root log level")

    # Build Configuration
    cap_r: int = Field(default=60, ge=1, description="Maximum out-degree R")
    beam_l_build: int = Field(default=800, ge=1, description="Build-time beam width L")
    m: float = Field(default=16, gt=2, description="Layer-assignment parameter M")
    alpha: float = Field(default=1.2, ge=1.0, description="RRND relaxation factor")
    theta_deg: float = Field(default=60.0, gt=0, lt=180, description="MOND angle")
    leaf_size: int = Field(default=2500, ge=2, description="DC partition cap")

    # Seed Structure Configuration
    kd_trees: int = Field(default=4, ge=1, description="Number of K-D trees")
    kd_leaf_size: int = Field(default=32, ge=1, description="K-D tree leaf size")
    sample_fraction: float = Field(
        default=0.05, gt=0, le=1, description="Fraction of points sampled for KD/KM"
    )
    sample_cap: int = Field(default=100_000, ge=1, description="Sampled point cap")
    km_branching: int = Field(default=8, ge=2, description="K-means tree branching")
    km_leaf_cap: int = Field(default=64, ge=1, description="K-means tree leaf size")
    km_iters: int = Field(default=5, ge=1, description="Lloyd iterations per split")

    # Neighborhood Propagation Configuration
    nnd_max_iters: int = Field(default=10, ge=1, description="NN-Descent iterations")
    nnd_delta: float = Field(default=0.001, ge=0, lt=1, description="Early-stop ratio")

    # Benchmark Configuration
    complexity_k: int = Field(default=100, ge=2, description="k for LID/LRC")
    sweep_repeats: int = Field(default=6, ge=1, description="Workload repetitions")
    sweep_trim: int = Field(
        default=2, ge=0, description="Best and worst runs dropped from each end"
    )

    # API Configuration
    host: str = Field(default="0.0.0.0", description="API host")
    port: int = Field(default=8000, ge=1, le=65535, description="API port")
    index_path: str = Field(default="index.gann", description="Index served by the API")
    data_path: str = Field(default="base.fvecs", description="Vectors of that index")


# Global settings instance
settings = Settings()
