"""Two-stage multi-scale slide classification on synthetic cytology slides."""

from ._less import (  # noqa: F401
    Config,
    ConfigError,
    DivergenceError,
    MissingArtifactError,
    OutputExistsError,
    ShapeError,
    attention,
    auc,
    counting_score,
    create_run,
    filter_patch,
    generate_slide,
    graph_edges,
    ingest,
    metrics,
    mixup_consistency,
    run_downstream,
    synth_gen,
    tile_positions,
    top_k_indices,
    train_counts,
    variational_loss,
    vpu_objective,
)
