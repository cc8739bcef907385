from .als import (
    ITEM_EMBEDDINGS,
    USER_EMBEDDINGS,
    FactorModel,
    InteractionMatrix,
    export_embeddings,
    ials_sweep,
    load_embeddings,
    objective,
    solve_half,
    train_mf,
)
