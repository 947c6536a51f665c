from pydantic_settings import BaseSettings
from typing import List, Optional


class Settings(BaseSettings):
    """
    Toolkit settings loaded from environment variables
    Using pydantic's BaseSettings for automatic .env file loading
    (every field can be overridden with a LYACERT_ prefixed variable)
    """

    # Application Configuration
    app_name: str = "Lyapunov Invariant Verification API"
    app_version: str = "1.0.0"
    debug: bool = False
    log_level: str = "INFO"

    # Reproducibility
    seed: int = 0

    # Solver tolerances
    tol: float = 1e-8                 # feasibility residual
    tol_psd: float = 1e-7             # minimum LMI eigenvalue margin
    strict_gap: float = 1e-6          # ≺ 0 is assembled as ⪯ -strict_gap·I, above tol_psd
    max_iterations: int = 200
    block_size_cap: int = 200
    ruiz_passes: int = 6
    variable_bound: float = 1e6       # box |y_i| ≤ bound keeps interior-point iterates bounded

    # Rate grids swept when no rates are given
    theta_grid: List[float] = [0.0, 0.5, 0.9, 0.98, 1.0, 1.02]
    mu_grid: List[float] = [0.0, 1e-3, 1.0]

    # Certificate post-processing
    max_denominator: int = 10**6
    separation_gap: float = 1e-6

    # Simulation
    step_budget: int = 10_000
    witness_runs: int = 200           # random runs searched for an unsafe-set witness
    witness_steps: int = 1_000
    exhaustive_binary_cap: int = 10

    # Relaxation
    vertex_enumeration_cap: int = 12
    propagation_rounds: int = 2
    sos_degree_cap: int = 4
    sos_multiplier_degree_cap: int = 2
    constraint_products: bool = True
    shared_multipliers: bool = False

    # Invariant search
    search_rounds: int = 4
    search_edge_cap: int = 6          # cycle edges whose θ is enumerated individually
    bisection_attempts: int = 40

    # Grid sweeps (0 = run in-process)
    workers: int = 0

    # Optional directory with extra model files served by /casestudies
    casestudy_dir: Optional[str] = None

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"
        env_prefix = "LYACERT_"
        case_sensitive = False


# Create a single settings instance to be used throughout the application
settings = Settings()
