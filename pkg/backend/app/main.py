import os

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from . import __version__
from .routers import caption, evaluate, llm_status, rewrite

CORS_ORIGINS_ENV = "SAR_NARRATOR_CORS_ORIGINS"


def cors_origins() -> list[str]:
    """Comma-separated origins from SAR_NARRATOR_CORS_ORIGINS; empty means no CORS headers."""
    raw = os.getenv(CORS_ORIGINS_ENV, "")
    return [o.strip() for o in raw.split(",") if o.strip()]


def create_app() -> FastAPI:
    app = FastAPI(title="SAR-Narrator", version=__version__)

    origins = cors_origins()
    if origins:
        app.add_middleware(
            CORSMiddleware,
            allow_origins=origins,
            allow_credentials=True,
            allow_methods=["*"],
            allow_headers=["*"],
        )

    app.include_router(caption.router, prefix="/api", tags=["caption"])
    app.include_router(rewrite.router, prefix="/api", tags=["rewrite"])
    app.include_router(evaluate.router, prefix="/api", tags=["eval"])
    app.include_router(llm_status.router, prefix="/api", tags=["llm"])

    @app.get("/api/health")
    def health():
        return {"status": "ok"}

    return app


app = create_app()
