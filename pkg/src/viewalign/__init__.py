"""Reference-guided camera view alignment toolkit.

Matches dense semantic descriptors between the current RGB-D view and a
reference image, solves a robust perspective-n-point problem for the camera
adjustment, and iterates until the view stops improving.  Includes a
text-based reference retrieval pipeline and a deterministic synthetic scene
simulator for benchmarking.
"""

from .alignment import (
    AlignmentConfig,
    AlignmentReport,
    AlignmentState,
    CameraUnavailable,
    CropRect,
    ReferenceSpec,
    StepOutcome,
    View,
    WorkspaceLimits,
    alignment_step,
    crop_captured,
    fit_reference,
    run_alignment,
    should_terminate,
)
from .correspondence import (
    DescriptorGrid,
    DimensionMismatch,
    EmptyInput,
    InsufficientCorrespondences,
    MatchPair,
    SelectionConfig,
    attach_depth,
    load_depth,
    load_grid,
    mutual_nearest_matches,
    save_depth,
    save_grid,
    select_correspondences,
)
from .geometry import (
    BehindCamera,
    CameraIntrinsics,
    CameraPose,
    Correspondence,
    InvalidDepth,
    PixelPoint,
    ScenePoint,
    back_project,
    compose,
    invert,
    project,
    reprojection_error,
)
from .pnp import (
    DegenerateConfiguration,
    InsufficientSupport,
    PnPSolution,
    TooFewCorrespondences,
    refine_weighted,
    solve_epnp,
)
from .retrieval import (
    EmbeddingIndex,
    GalleryEntry,
    HashedBagOfWordsEmbedder,
    KeywordOverlapRanker,
    RetrievalConfig,
    UserPrompt,
    build_caption,
    coarse_retrieve,
    index_gallery,
    rerank,
    suggest,
)
from .robust import (
    MagsacConfig,
    NoSolution,
    RansacConfig,
    RobustResult,
    magsac_pnp,
    magsac_weights,
    ransac_pnp,
)
from .simulate import (
    CorruptionConfig,
    SimCamera,
    SyntheticScene,
    make_reference,
    make_scene,
    render,
)

__version__ = "0.1.0"
