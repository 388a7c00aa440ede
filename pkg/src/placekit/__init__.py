"""placekit: synthesis and evaluation of spatial-composition instruction data.

The package covers the full loop for two-object "place X left/right of Y"
scenes: co-occurrence-driven pair sampling, prompt construction for caption
and layout generation (with a fully deterministic offline provider), layout
parsing and validation, training-triplet derivation, detection-based
spatial scoring, a synthetic rasterizer with an oracle detector, and a
small exact-math diffusion core (dual guidance, DDIM stepping and
inversion, latent composition, attention energies with analytic
gradients).
"""

from ._version import __version__
from .config import (
    DatasetConfig,
    DiffusionConfig,
    EvalConfig,
    PipelineConfig,
    SamplingConfig,
    apply_overrides,
    config_hash,
    load_config,
)
from .cooccur import (
    CategoryVocab,
    CooccurrenceMatrix,
    PairSample,
    build_matrix,
    load_default_matrix,
    load_matrix,
    sample_pairs,
)
from .diffusion import (
    DDIMSchedule,
    EnhancementSchedule,
    GaussianScoreOracle,
    GuidanceScales,
    attention_map,
    cfg_score,
    compose_latents,
    ddim_inverse_step,
    ddim_step,
    denoising_loss,
    enhancement_phases,
    gaussian_oracle_eps,
    invert_step_fixed_point,
    run_enhancement,
    softmax_rows,
)
from .energies import (
    AttentionControlObjective,
    BackgroundRetentionObjective,
    EnergyConfig,
    attention_control_energy,
    background_retention_energy,
    energy_total,
    finite_difference_gradient,
    latent_energy_update,
    topk_mean,
)
from .errors import PlacekitError, SchemaError
from .evaluator import (
    Detection,
    DetectionRecord,
    EvalCase,
    EvalReport,
    extract_relation,
    object_accuracy,
    visor,
)
from .geometry import BBox, CanvasSpec, Center, SpatialRelation, center, relation_of, validate_box
from .layout import (
    CaptionSpec,
    EditInstruction,
    Layout,
    ObjectAnnotation,
    TrainingTriplet,
    derive_source_layout,
    head_noun,
    make_edit_instruction,
    parse_caption,
    parse_instruction,
    parse_layout_response,
    read_triplets,
    render_layout,
    triplet_to_jsonl_line,
    validate_layout,
)
from .pipeline import (
    cases_from_triplets,
    generate_dataset,
    simulate_and_score,
    synthesize_record,
    vocab_from_triplets,
    write_dataset,
)
from .prompting import (
    ChatRequest,
    DeterministicProvider,
    ExternalProvider,
    ProviderConfig,
    deterministic_caption,
    deterministic_layout,
    make_provider,
    render_caption_prompt,
    render_layout_prompt,
)
from .scenesim import (
    DropObject,
    Jitter,
    LabelGrid,
    SwapPositions,
    export_pgm,
    oracle_detect,
    perturb,
    rasterize,
)

__all__ = [name for name in dir() if not name.startswith("_")]
