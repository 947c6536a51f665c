from .models import router as models_router
from .verify import router as verify_router
from .casestudies import router as casestudies_router

__all__ = [
    "models_router",
    "verify_router",
    "casestudies_router"
]
