"""Multi-sensor human motion annotation, refinement, and evaluation toolkit."""

from .body import (
    JOINT_NAMES,
    NUM_JOINTS,
    BodyShape,
    MotionSequence,
    PoseFrame,
    SkinnedBody,
    build_default_body,
    capsule_proxies,
    forward_kinematics,
    load_body,
    load_motion,
    save_body,
    save_motion,
    skin_vertices,
)
from .errors import (
    GenerationError,
    NonFiniteLossError,
    StructuralError,
    SyncFailureError,
    ValidationError,
)
from .fusion import (
    FusionUnitWeights,
    TrimodalWeights,
    cross_attention_fuse,
    encoder_block,
    init_trimodal_weights,
    init_unit_weights,
    load_weights,
    save_weights,
    scaled_dot_attention,
    trimodal_fuse,
)
from .geometry import (
    Capsule,
    TriangleMesh,
    box_mesh,
    capsule_overlap,
    chamfer_distance,
    convex_hull_3d,
    ground_plane,
    hidden_point_removal,
    penetration_depths,
    procrustes_align,
)
from .metrics import EvalReport, accel_error, evaluate
from .optim import (
    CalibrationMatrix,
    LossBreakdown,
    OptimConfig,
    OptimResult,
    initialize_from_sensors,
    loss_contact,
    loss_geo,
    loss_smooth,
    optimize,
    total_loss,
)
from .sync import (
    Event,
    EventFrame,
    SampledSeries,
    accumulate_event_image,
    denoise_events,
    detect_jump_peaks,
    estimate_offset,
    frame_events,
    resample,
)
from .synth import (
    SynthBundle,
    SynthSpec,
    generate,
    make_benchmark_spec,
    perturb_motion,
    read_bundle,
    write_bundle,
)

__version__ = "0.1.0"
