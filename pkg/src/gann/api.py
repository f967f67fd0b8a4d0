"""FastAPI query server over one GANN bundle and its dataset."""

import itertools
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import uvicorn
from fastapi import FastAPI, Request, status
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import ValidationError

from .config import settings
from .data import VectorSet, load_vecs
from .errors import GannError, ParameterError
from .graph import Index, LayeredGraph, PartitionedIndex
from .models import SearchParams, SearchRequest, SearchResponse
from .profiler import Profiler
from .search import search_index
from .seeds import SeedIndex, load_bundle

logger = logging.getLogger(__name__)


class QueryService:
    """Holds the loaded index, seed structure and vectors for the server."""

    def __init__(self, index: Index, seed_index: Optional[SeedIndex], vectors: VectorSet) -> None:
        self.index = index
        self.seed_index = seed_index
        self.vectors = vectors
        self._query_ids = itertools.count()

    @classmethod
    def from_files(
        cls, index_path: Union[str, Path], data_path: Union[str, Path]
    ) -> "QueryService":
        index, seed_index = load_bundle(index_path)
        vectors = load_vecs(data_path)
        logger.info("serving %s over %s (n=%d, d=%d)", index_path, data_path, vectors.n, vectors.d)
        return cls(index, seed_index, vectors)

    @property
    def kind(self) -> str:
        if isinstance(self.index, LayeredGraph):
            return "layered"
        if isinstance(self.index, PartitionedIndex):
            return f"partitioned-{self.index.mode.value}"
        return "flat"

    def search(self, request: SearchRequest) -> SearchResponse:
        try:
            params = SearchParams(
                k=request.k,
                beam_l=request.beam_l,
                seed_count_s=request.seed_count_s,
                nprobe=request.nprobe,
            )
        except ValidationError as exc:
            raise ParameterError(str(exc)) from exc
        profiler = Profiler("request")
        with profiler.time_block("search"):
            result = search_index(
                self.index,
                self.seed_index,
                self.vectors,
                np.asarray(request.vector, dtype=np.float32),
                params,
                next(self._query_ids),
            )
        return SearchResponse(
            ids=result.ids,
            distances=[c.dist for c in result.answers],
            distance_calcs=result.distance_calcs,
            visited=result.visited,
            latency_seconds=profiler.stop(),
        )


def create_app(service: QueryService) -> FastAPI:
    """Build the FastAPI app around a loaded service."""
    app = FastAPI(
        title=settings.app_name,
        version=settings.app_version,
        description="k-NN queries over a graph-based ANN index",
        debug=settings.debug,
    )
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_credentials=True,
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.get("/")
    async def root() -> Dict[str, Any]:
        """Root endpoint with API information."""
        return {
            "message": "gann query server",
            "version": settings.app_version,
            "status": "active",
            "endpoints": {"search": "/search", "health": "/health", "docs": "/docs"},
        }

    @app.get("/health")
    async def health_check() -> Dict[str, Any]:
        return {
            "status": "healthy",
            "index": service.kind,
            "nodes": service.vectors.n,
            "dim": service.vectors.d,
            "seeds": service.seed_index.kind.value if service.seed_index else None,
            "version": settings.app_version,
        }

    @app.post("/search", response_model=SearchResponse)
    def search(request: SearchRequest) -> SearchResponse:
        return service.search(request)

    @app.exception_handler(GannError)
    async def gann_exception_handler(request: Request, exc: GannError) -> JSONResponse:
        return JSONResponse(
            status_code=status.HTTP_400_BAD_REQUEST,
            content={"detail": str(exc), "error": type(exc).__name__},
        )

    @app.exception_handler(Exception)
    async def global_exception_handler(request: Request, exc: Exception) -> JSONResponse:
        logger.exception("unhandled error on %s", request.url.path)
        return JSONResponse(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            content={
                "detail": "Internal server error",
                "error": str(exc) if settings.debug else "An unexpected error occurred",
            },
        )

    return app


def run_server(
    index_path: Optional[str] = None,
    data_path: Optional[str] = None,
    host: Optional[str] = None,
    port: Optional[int] = None,
) -> None:
    """Load the bundle and serve it with uvicorn."""
    service = QueryService.from_files(
        index_path or settings.index_path, data_path or settings.data_path
    )
    uvicorn.run(
        create_app(service),
        host=host or settings.host,
        port=port or settings.port,
        log_level="debug" if settings.debug else "info",
    )
