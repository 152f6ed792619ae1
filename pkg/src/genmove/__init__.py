"""Masked conditional diffusion for general mobility-trajectory modeling.

One trained model covers trajectory generation, controllable generation,
recovery, and next/long-term/sparse prediction; the task is selected purely
by the mask condition handed to the sampler.
"""

from .config import ExperimentConfig, TaskSpec, load_config
from .context import (
    ConditionalFlow,
    ConditionFeatures,
    ContextEmbedding,
    ContextEncoder,
    FlowConfig,
    condition_features,
    flow_forward,
    flow_inverse,
    radius_of_gyration,
)
from .data import (
    Dataset,
    EprParams,
    Location,
    Trajectory,
    load_dataset,
    save_dataset,
    split_by_user,
    synthesize_epr,
)
from .denoiser import DenoiserConfig, DenoiserModel, parameter_gradients, step_embedding
from .diffusion import (
    DiffusionState,
    GuidanceConfig,
    NoiseSchedule,
    guided_noise,
    make_schedule,
    p_sample_step,
    q_sample,
    sample,
    sample_batch,
    training_loss,
    training_loss_graph,
)
from .embedding import (
    EmbeddedTrajectory,
    EmbeddingTable,
    SpatialGraph,
    build_spatial_graph,
    decode,
    embed,
    train_embeddings,
)
from .harness import TrainResult, run_baseline, run_task, sweep_mask_ratio, train
from .masks import (
    Mask,
    MaskMixture,
    MaskedPair,
    apply_mask,
    sample_mask,
    sample_strategy,
)
from .metrics import (
    EvalReport,
    Histogram,
    accuracy_at_k,
    compare_mobility,
    jsd,
    mobility_statistics,
    recovery_scores,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
