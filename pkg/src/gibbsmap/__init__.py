"""Batch mapping of elliptical extended landmarks from cluttered 2-D
detections, by collapsed Gibbs sampling over measurement partitions."""

from .conjugacy import (
    CellStats,
    DegenerateCellError,
    NiwGammaParams,
    cell_stats,
    existence_probability,
    log_cell_evidence,
    log_cell_likelihood,
    posterior_params,
)
from .estimation import (
    IntensityMixture,
    LandmarkEstimate,
    LandmarkSample,
    MapEstimate,
    associate_and_average,
    estimate_clutter_rate,
    estimate_map,
    extract_landmarks,
    intensity_mixture,
    trace_landmarks,
)
from .geometry import (
    FovParams,
    Measurement,
    MeasurementBatch,
    ModelConfig,
    PriorParams,
    Rect,
    SensorPose,
    batch_from_arrays,
    fov_area,
    fov_contains,
)
from .metrics import NonSpdCovarianceError, cardinality_report, ise
from .partition import (
    FRESH,
    Partition,
    enumerate_partitions,
    from_labels,
    init_singletons,
    log_weight,
    move_measurement,
)
from .sampler import (
    STAY,
    Candidate,
    SampleTrace,
    SamplerConfig,
    TraceEntry,
    chain_rng,
    gating_components,
    gibbs_step,
    run_blocked_chains,
    run_chain,
    transition_distribution,
)
from .scenario import (
    GroundTruthLandmark,
    Scenario,
    default_prior,
    default_scenario,
    generate_measurements,
    generate_trajectory,
    simulate,
)
from .undetected import (
    Grid,
    IntensityRaster,
    log_survival_factor,
    make_grid,
    survival_factor,
    undetected_raster,
    visit_counts,
)

__version__ = "0.1.0"
