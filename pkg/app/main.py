# FastAPI application: model, verification and case-study routers
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from contextlib import asynccontextmanager
import logging

from app.config import settings
from app.routers import casestudies_router, models_router, verify_router
from app.services.casestudies import CASESTUDIES, CASESTUDY_DIR


@asynccontextmanager
async def lifespan(app: FastAPI):
    """
    Application lifespan manager
    """
    logging.basicConfig(level=getattr(logging, settings.log_level.upper(), logging.INFO))
    print(f"🚀 Starting {settings.app_name}...")
    if not CASESTUDY_DIR.is_dir():
        print(f"⚠️  Case-study directory {CASESTUDY_DIR} is missing")
    print(f"🎉 {settings.app_name} is ready with {len(CASESTUDIES)} bundled case studies!")
    yield
    print(f"👋 Shutting down {settings.app_name}...")


app = FastAPI(
    title=settings.app_name,
    description="Lyapunov-invariant verification of numerical programs",
    version=settings.app_version,
    lifespan=lifespan
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=False,
    allow_methods=["GET", "POST", "OPTIONS"],
    allow_headers=["*"],
)

app.include_router(models_router)
app.include_router(verify_router)
app.include_router(casestudies_router)


@app.get("/")
async def root():
    """
    Root endpoint with welcome message
    """
    return {
        "message": f"Welcome to the {settings.app_name}!",
        "description": "Compile programs to graph models and certify them with Lyapunov invariants",
        "version": settings.app_version,
        "endpoints": {
            "docs": "/docs",
            "models": "/models",
            "verify": "/verify",
            "casestudies": "/casestudies"
        }
    }


@app.get("/health", tags=["Health"])
async def health_check():
    """
    Health check endpoint
    """
    return {
        "status": "healthy",
        "service": settings.app_name,
        "version": settings.app_version
    }


# Error handlers
@app.exception_handler(404)
async def not_found_handler(request: Request, exc):
    detail = getattr(exc, "detail", None)
    return JSONResponse(
        status_code=404,
        content={
            "detail": detail if detail and detail != "Not Found" else "Endpoint not found",
            "message": "The requested endpoint does not exist. Check the API documentation at /docs"
        }
    )


@app.exception_handler(500)
async def internal_error_handler(request: Request, exc):
    return JSONResponse(
        status_code=500,
        content={
            "detail": "Internal server error",
            "message": "An unexpected error occurred. Please try again later."
        }
    )


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(
        "app.main:app",
        host="0.0.0.0",
        port=8000,
        reload=True,
        log_level="info"
    )
