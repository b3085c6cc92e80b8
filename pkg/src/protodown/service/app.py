"""HTTP API over the session pipeline."""

from __future__ import annotations

import json
import os

from fastapi import FastAPI, File, Form, Request, Response, UploadFile
from fastapi.responses import JSONResponse

from ..errors import (
    ConfigError,
    DataError,
    DesignError,
    IngestError,
    ProtodownError,
    StateError,
    TransportError,
)
from ..ingest import GenericMapping, IngestConfig
from ..preprocess import PreprocessParams
from ..diffexpr import TestConfig
from ..ppi import PpiConfig
from .pipeline import EnrichConfig, SessionStore
from .render import render_png, render_svg

MAX_UPLOAD = 512 * 1024 * 1024


def _error(status: int, code: str, message: str, detail=None):
    return JSONResponse(
        status_code=status,
        content={"code": code, "message": message, "detail": detail},
    )


def create_app(store: SessionStore | None = None) -> FastAPI:
    app = FastAPI(title="protodown", version="0.1.0")
    app.state.store = store or SessionStore()

    @app.exception_handler(ProtodownError)
    async def handle_engine_error(request: Request, exc: ProtodownError):
        if isinstance(exc, (ConfigError, DesignError)):
            return _error(422, "config_error", str(exc))
        if isinstance(exc, StateError):
            return _error(409, "state_error", str(exc))
        if isinstance(exc, TransportError):
            return _error(502, "transport_error", str(exc), detail=exc.kind)
        if isinstance(exc, (IngestError, DataError)):
            return _error(422, "data_error", str(exc))
        return _error(500, "engine_error", str(exc))

    def _get_session(session_id: str):
        try:
            return app.state.store.get(session_id)
        except KeyError:
            return None

    @app.post("/sessions")
    async def create_session(
        file: UploadFile = File(...),
        config: str = Form(...),
        report: UploadFile | None = File(None),
        gmt: UploadFile | None = File(None),
    ):
        cfg_raw = json.loads(config)
        mapping = cfg_raw.pop("generic_mapping", None)
        try:
            ingest_cfg = IngestConfig(
                **{k: v for k, v in cfg_raw.items() if k != "delimiter"},
                generic_mapping=GenericMapping(**mapping) if mapping else None,
            )
        except (TypeError, ValueError) as exc:
            return _error(422, "config_error", str(exc))
        data = await file.read()
        if len(data) > MAX_UPLOAD:
            return _error(413, "too_large", "upload exceeds the size limit")
        files = {}
        if ingest_cfg.platform == "diann":
            files["pg_matrix"] = data
            if report is not None:
                files["report"] = await report.read()
        else:
            files["main"] = data
        if cfg_raw.get("delimiter") == ",":
            files["delimiter"] = b","
        if gmt is not None:
            files["gmt"] = await gmt.read()
        session = app.state.store.create(files, ingest_cfg)
        return session.summary()

    @app.get("/sessions/{session_id}")
    async def get_session(session_id: str):
        session = _get_session(session_id)
        if session is None:
            return _error(404, "not_found", f"no session {session_id}")
        return session.summary()

    @app.delete("/sessions/{session_id}")
    async def delete_session(session_id: str):
        app.state.store.delete(session_id)
        return {"deleted": session_id}

    @app.put("/sessions/{session_id}/design")
    async def put_design(session_id: str, body: list[dict]):
        session = _get_session(session_id)
        if session is None:
            return _error(404, "not_found", f"no session {session_id}")
        patterns = [(g["name"], g["pattern"]) for g in body]

        def apply(s):
            from ..ingest import select_groups

            matrix = s._compute("ingest")["matrix"]
            select_groups(matrix, patterns)  # validate before committing
            s.group_patterns = patterns

        invalidated = session.update_params("preprocess", apply)
        return {"invalidated": invalidated}

    @app.put("/sessions/{session_id}/preprocess")
    async def put_preprocess(session_id: str, body: dict):
        session = _get_session(session_id)
        if session is None:
            return _error(404, "not_found", f"no session {session_id}")

        def apply(s):
            s.preprocess_params = PreprocessParams(**body)

        invalidated = session.update_params("preprocess", apply)
        return {"invalidated": invalidated}

    @app.put("/sessions/{session_id}/test")
    async def put_test(session_id: str, body: dict):
        session = _get_session(session_id)
        if session is None:
            return _error(404, "not_found", f"no session {session_id}")

        def apply(s):
            body2 = dict(body)
            comparison = tuple(body2.pop("comparison"))
            s.test_config = TestConfig(comparison=comparison, **body2)

        invalidated = session.update_params("diffexpr", apply)
        return {"invalidated": invalidated}

    @app.put("/sessions/{session_id}/enrich")
    async def put_enrich(session_id: str, body: dict):
        session = _get_session(session_id)
        if session is None:
            return _error(404, "not_found", f"no session {session_id}")

        def apply(s):
            s.enrich_config = EnrichConfig(**body)

        invalidated = session.update_params("enrich", apply)
        return {"invalidated": invalidated}

    @app.put("/sessions/{session_id}/ppi")
    async def put_ppi(session_id: str, body: dict):
        session = _get_session(session_id)
        if session is None:
            return _error(404, "not_found", f"no session {session_id}")

        def apply(s):
            s.ppi_config = PpiConfig(**body)

        invalidated = session.update_params("ppi", apply)
        return {"invalidated": invalidated}

    @app.get("/sessions/{session_id}/payload/{artifact}")
    async def get_payload(session_id: str, artifact: str):
        session = _get_session(session_id)
        if session is None:
            return _error(404, "not_found", f"no session {session_id}")
        return session.get_payload(artifact)

    @app.get("/sessions/{session_id}/export/{artifact}")
    async def export(session_id: str, artifact: str, format: str = "csv"):
        session = _get_session(session_id)
        if session is None:
            return _error(404, "not_found", f"no session {session_id}")
        if format == "csv":
            try:
                text = session.export_csv(artifact)
            except ConfigError as exc:
                return _error(422, "unsupported_pair", str(exc))
            return Response(content=text, media_type="text/csv")
        if format in ("svg", "png"):
            payload = session.get_payload(artifact)
            try:
                if format == "svg":
                    return Response(content=render_svg(artifact, payload["data"]),
                                    media_type="image/svg+xml")
                return Response(content=render_png(artifact, payload["data"]),
                                media_type="image/png")
            except ConfigError as exc:
                return _error(422, "unsupported_pair", str(exc))
        return _error(422, "unsupported_pair", f"unknown format {format!r}")

    return app


def main():
    import uvicorn

    addr = os.environ.get("PROTODOWN_ADDR", "127.0.0.1:8000")
    host, _, port = addr.partition(":")
    uvicorn.run(create_app(), host=host, port=int(port or 8000))


app = create_app()
