"""Statistical shape analysis on Kendall's shape and size-and-shape spaces.

Frechet mean families (full/partial Procrustes, Ziezold), CLT-based
one-sample inference in local charts, perturbation-model compatibility
experiments, an embedding of mildly rank-deficient symmetric PSD tensors,
and distance-to-cylinder analysis of frustum shapes with bootstrap bands.
"""

__version__ = "0.1.0"

from .asymptotics import (
    Chart,
    CLTEstimate,
    CutLocusError,
    NormalityResult,
    TestReport,
    build_chart,
    clt_normality_experiment,
    estimate_clt,
    one_sample_test,
    rho_squared_grad_hess,
)
from .difftensor import (
    BiasCheckResult,
    DiffusionTensor,
    NotPositiveSemidefiniteError,
    PullbackError,
    UpperTriangularCanonical,
    cholesky_bias_check,
    extended_cholesky,
    mean_tensor,
    tau,
    tau_s,
)
from .frusta import (
    BootstrapBand,
    FrustumParams,
    GeodesicSegment,
    GrowthMode,
    StandScenario,
    SyntheticStand,
    bootstrap_band,
    cylinder_geodesic,
    distance_to_geodesic,
    frustum_config,
    growth_curve,
    synthetic_stand,
)
from .geometry import (
    Configuration,
    PreShape,
    Rotation,
    ShapePoint,
    SizeShapePoint,
    center,
    dist_shape_intrinsic,
    dist_shape_procrustes,
    dist_shape_ziezold,
    dist_sizeshape,
    helmert_matrix,
    optimal_rotation,
    to_preshape,
    uncenter,
)
from .io import Dataset, RunManifest, load_dataset, save_dataset
from .means import (
    MeanConfig,
    MeanResult,
    NonUniqueMeanError,
    Rho,
    extrinsic_mean_2d,
    frechet_mean,
    full_procrustes_mean,
    partial_procrustes_mean,
    ziezold_mean,
)
from .perturbation import (
    CompatibilityReport,
    ErrorShape,
    KentBranch,
    KentMean,
    KentScatter,
    PerturbationKind,
    PerturbationSpec,
    compatibility_experiment,
    hopf_coordinates,
    kent_critical_intensity,
    kent_integrals,
    kent_population_mean,
    kent_shape_scatter,
    sample,
)
