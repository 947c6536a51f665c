#!/usr/bin/env python3
"""
Production startup script for the Lyapunov invariant verification API
"""
import os
import uvicorn
from app.main import app
from app.config import settings

if __name__ == "__main__":
    port = int(os.environ.get("PORT", 8000))
    host = os.environ.get("HOST", "0.0.0.0")

    print(f"🚀 Starting {settings.app_name} on {host}:{port}")

    uvicorn.run(
        app,
        host=host,
        port=port,
        log_level=settings.log_level.lower(),
        access_log=True
    )
