"""Passivity-based PI tracking control for bilinear systems.

Core pieces: storage certificates and passive outputs (``bilinear``), PI laws
(``controllers``), a fixed-step closed-loop simulator with passivity monitors
(``sim``), the boost PFC and MMC plants (``boost``, ``mmc``), power-quality
metrics (``metrics``) and the scenario-file CLI (``cli``).
"""

__version__ = "0.1.0"

from .bilinear import (
    BilinearSystem,
    ReferenceFrame,
    StorageCertificate,
    admissibility_residual,
    output_matrix,
    passive_output,
    psd_sqrt,
    search_diagonal_certificate,
    tracking_rank_matrix,
    verify_storage_certificate,
)
from .controllers import AntiWindupPIState, ControllerState, PIGains, antiwindup_pi_update, pi_update, tanh_pi_update
from .sim import (
    Event,
    Scenario,
    SimulationDiverged,
    SimulationTrace,
    augmented_output_series,
    dissipation_check,
    lyapunov_monitor,
    run_closed_loop,
)
