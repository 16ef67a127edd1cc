"""Diffusion-bridge schedules, solvers, and few-step consistency sampling."""

from .bridge import (
    Coupling,
    GaussianCouplingOracle,
    data_pred_from_score,
    oracle_data_pred,
    oracle_posterior_score,
    pinning_score,
    sample_bridge_point,
    score_from_data_pred,
    simulate_forward_sde,
)
from .datasets import Gauss1d, Masked2d, Mixture2dShifted, dataset_from_id
from .evaluation import (
    MetricReport,
    convergence_order,
    energy_distance,
    marginal_preservation_test,
    prop3_gap_ladder,
    sliced_wasserstein2,
)
from .model import (
    BridgeModel,
    EndpointStats,
    Mlp,
    estimate_endpoint_stats,
    load_checkpoint,
    save_checkpoint,
)
from .rng import stream
from .sample import (
    TimestepPlan,
    TrajectoryTape,
    cdbm_sample,
    integrate_ode,
    interpolate,
    ode_sample,
    replay,
    slerp,
)
from .schedule import (
    BridgeCoeffs,
    BridgeTtsGmax,
    BridgeTtsVp,
    BrownianBridge,
    CustomSchedule,
    DdbmVe,
    DdbmVp,
    I2SB,
    NoiseSchedule,
    ScheduleEval,
    schedule_from_id,
)
from .solver import (
    OdeStepCoeffs,
    brownian_oracle_ode,
    brownian_oracle_reverse_sde,
    ei_ode_step,
    euler_ode_step,
    ode_step_coeffs,
    posterior_sde_step,
)
from .train import (
    Adam,
    ConstantGap,
    InverseGapWeight,
    PseudoHuber,
    SigmoidGap,
    SquaredL2,
    UnitWeight,
    cbd_loss,
    cbt_loss,
    dbsm_loss,
    train_loop,
)

__version__ = "0.1.0"
