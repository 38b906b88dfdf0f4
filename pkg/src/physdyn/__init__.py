"""Physical-dynamics toolkit: predict post-action object attributes from
symbolic, visual, and textual inputs, with a synthetic oracle world and a
multi-seed training/evaluation harness."""

from .schema import (
    ACTION_NAMES,
    ATTRIBUTE_NAMES,
    AttributeSchema,
    ActionRecord,
    ImagePair,
    ObjectState,
    TrajectoryRecord,
    validate_trajectory,
)
from .filtering import (
    FilterThresholds,
    apply_visual_filters,
    count_changed_pixels,
    max_pixel_change,
)
from .splits import SplitManifest, audit_split, build_zero_shot_split
from .synthetic import (
    WorldConfig,
    apply_action_effect,
    build_synthetic_schema,
    generate_synthetic_world,
)
from .features import (
    BoxFeatureSet,
    FeatureCache,
    StubBoxAdapter,
    StubTextAdapter,
    read_feature_cache,
    write_feature_cache,
)
from .model import (
    AttributeLayout,
    ModelConfig,
    PhysicalDynamicsModel,
    compute_loss,
    count_parameters,
    load_checkpoint,
    save_checkpoint,
)
from .training import TrainConfig, run_finetuning, run_pretraining, tensorize_records
from .evaluation import (
    EvalReport,
    aggregate_runs,
    exact_match_accuracy,
    export_attention_maps,
    grouped_accuracy,
    zero_shot_accuracy,
)

__version__ = "0.1.0"
