"""Click-driven interactive segmentation engine.

Raster primitives, click/mask encodings, simulated-annotator samplers, the
iterative training loop, clicks-to-IoU evaluation protocols, and an
annotation service around a pluggable predictor.
"""

from .guidance import (
    Click,
    ClickSet,
    GuidanceStack,
    assemble_stack,
    encode_click_distance,
    encode_gaussian,
    encode_mask_channel,
)
from .predictor import (
    NearestClickPredictor,
    PredictorDescriptor,
    builtin_nearest_click_predict,
    create_predictor,
    threshold,
)
from .raster import (
    Bitmask,
    LabelMap,
    boundary,
    connected_components,
    distance_transform,
    iou,
    load_mask,
    mask_from_rle,
    mask_to_rle,
    save_mask,
)
from .sampling import (
    InitialSamplingParams,
    InstanceTruth,
    get_sampler,
    next_click_cluster_sampling,
    next_click_random,
    next_correction_click,
    sample_initial_clicks,
)
from .simloop import (
    LoopConfig,
    ObjectTrainState,
    bootstrapped_ce,
    epoch_update,
    gamma_augment,
    run_training_loop,
    sample_training_crop,
)
from .evaluation import (
    DatasetInstance,
    EvaluationReport,
    SimulationTrace,
    clicks_to_reach,
    load_dataset,
    mean_clicks_per_object,
    miou_curve,
    read_traces,
    run_simulations,
    simulate_instance,
    uniform_clicks_to_reach,
    write_traces,
)

__version__ = "0.1.0"
