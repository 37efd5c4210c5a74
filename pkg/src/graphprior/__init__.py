"""Graph priors for detection post-processing, with energy-based refinement.

The pipeline: count class co-occurrence into a prior matrix T, turn per-image
class probabilities P into a probabilistic edge graph P T P^T, optionally
refine that graph by Langevin descent under a learned energy model, pass
messages over it with doubly stochastic graph attention, and reclassify the
enhanced features. A synthetic scene benchmark with planted co-occurrence
structure exercises the whole chain at desk scale.
"""

from .tensorcore import (
    Rng,
    derive_seed,
    finite_diff_grad,
    leaky_relu,
    load_matrix_csv,
    matmul,
    save_matrix_csv,
    sigmoid,
    softmax_rows,
)
from .prior import (
    Annotations,
    Box,
    ImageRecord,
    PriorMatrix,
    build_prior,
    load_annotations,
    load_prior,
    save_prior,
)
from .graphhead import (
    SceneGraph,
    build_edges,
    build_oracle_edges,
    connected_subset,
    iou,
    match_proposals,
)
from .messagepassing import (
    MPLayerParams,
    MPParams,
    attention_scores,
    init_mp_params,
    mp_layer,
    propagate,
    propagate_grad,
    sinkhorn_ds,
)
from .energy import (
    EnergyParams,
    SgldConfig,
    energy,
    energy_grad,
    init_energy_params,
    sgld_refine,
    sgld_refine_trace,
)
from .training import (
    ClassifierParams,
    ModelSpec,
    TrainConfig,
    TrainResult,
    cd_loss,
    classify,
    cross_entropy,
    init_model,
    sgd_step,
    task_loss,
    train,
)
from .scenes import (
    Benchmark,
    EvalReport,
    Scene,
    SceneConfig,
    World,
    evaluate,
    generate_dataset,
    make_benchmark,
    rare_class_report,
    run_inference,
)
from .bundle import load_checkpoint, save_checkpoint
from .config import RunConfig, default_config_text, load_config, resolved_config_text
from .gradcheck import run_gradcheck

__version__ = "0.1.0"

__all__ = [
    "Rng", "derive_seed", "finite_diff_grad", "leaky_relu", "load_matrix_csv",
    "matmul", "save_matrix_csv", "sigmoid", "softmax_rows",
    "Annotations", "Box", "ImageRecord", "PriorMatrix", "build_prior",
    "load_annotations", "load_prior", "save_prior",
    "SceneGraph", "build_edges", "build_oracle_edges", "connected_subset", "iou", "match_proposals",
    "MPLayerParams", "MPParams", "attention_scores", "init_mp_params", "mp_layer",
    "propagate", "propagate_grad", "sinkhorn_ds",
    "EnergyParams", "SgldConfig", "energy", "energy_grad", "init_energy_params",
    "sgld_refine", "sgld_refine_trace",
    "ClassifierParams", "ModelSpec", "TrainConfig", "TrainResult", "cd_loss",
    "classify", "cross_entropy", "init_model", "sgd_step", "task_loss", "train",
    "Benchmark", "EvalReport", "Scene", "SceneConfig", "World", "evaluate",
    "generate_dataset", "make_benchmark", "rare_class_report", "run_inference",
    "load_checkpoint", "save_checkpoint",
    "RunConfig", "default_config_text", "load_config", "resolved_config_text",
    "run_gradcheck",
]
