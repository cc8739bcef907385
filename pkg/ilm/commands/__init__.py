from .ablation import router as ablation_router
from .data import router as data_router
from .evaluation import router as evaluation_router
from .pipeline import router as pipeline_router
from .router import CommandRouter
from .training import router as training_router

cli_router = CommandRouter()
cli_router.include_router(data_router)
cli_router.include_router(training_router)
cli_router.include_router(evaluation_router)
cli_router.include_router(ablation_router)
cli_router.include_router(pipeline_router)
