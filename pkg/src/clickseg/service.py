"""Session-based annotation HTTP service.

One session = one image plus a click history and a mask version stack.
Every click re-runs the predictor and pushes a new mask version; undo pops
the click and its version atomically. Sessions live in memory; an optional
write-ahead click log makes them reconstructable, since a session's state
is a pure function of its click history and predictor.

Endpoints: POST /sessions, POST /sessions/{id}/clicks, POST
/sessions/{id}/undo, GET /sessions/{id}, GET /sessions/{id}/mask.png,
DELETE /sessions/{id}. Errors come back as {"code", "message"}.
"""

from __future__ import annotations

import io
import json
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from fastapi import FastAPI, File, Form, UploadFile
from fastapi.responses import JSONResponse, Response
from PIL import Image
from pydantic import BaseModel, Field

from .guidance import ClickSet, assemble_stack
from .predictor import create_predictor, threshold
from .raster import Bitmask, mask_to_rle


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str) -> None:
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


class ClickRequest(BaseModel):
    x: int
    y: int
    polarity: Literal["positive", "negative"]


class MaskVersion(BaseModel):
    session_id: str
    version: int
    width: int
    height: int
    mask_rle: str


class ClickInfo(BaseModel):
    x: int
    y: int
    polarity: str
    round: int


class SessionInfo(BaseModel):
    session_id: str
    version: int
    width: int
    height: int
    mode: str
    encoding: str
    predictor: str
    clicks: list[ClickInfo]
    created: str
    updated: str


class ErrorBody(BaseModel):
    code: str
    message: str = Field(description="human-readable failure description")


@dataclass
class Session:
    session_id: str
    image: np.ndarray
    mode: str
    encoding: str
    predictor_name: str
    clicks: ClickSet
    versions: list[Bitmask]
    created: str
    updated: str
    lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def version(self) -> int:
        return len(self.versions) - 1

    @property
    def current_mask(self) -> Bitmask:
        return self.versions[-1]


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class SessionStore:
    """In-memory sessions; mutations on one session are serialized by its lock."""

    def __init__(self, log_dir: Optional[Path] = None) -> None:
        self._sessions: dict[str, Session] = {}
        self._registry_lock = threading.Lock()
        self._log_dir = Path(log_dir) if log_dir else None
        if self._log_dir:
            self._log_dir.mkdir(parents=True, exist_ok=True)

    def log_event(self, session_id: str, event: dict) -> None:
        if self._log_dir is None:
            return
        with (self._log_dir / f"{session_id}.jsonl").open("a", encoding="utf-8") as f:
            f.write(json.dumps(event, sort_keys=True) + "\n")

    def add(self, session: Session) -> None:
        with self._registry_lock:
            self._sessions[session.session_id] = session

    def get(self, session_id: str) -> Session:
        with self._registry_lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise ApiError(404, "unknown_session", f"no session {session_id!r}")
        return session

    def remove(self, session_id: str) -> None:
        with self._registry_lock:
            if session_id not in self._sessions:
                raise ApiError(404, "unknown_session", f"no session {session_id!r}")
            del self._sessions[session_id]

    def __len__(self) -> int:
        return len(self._sessions)


def _decode_image(data: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as img:
            return np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    except Exception as e:
        raise ApiError(400, "bad_image", f"cannot decode image: {e}") from e


def _decode_mask(data: bytes, width: int, height: int) -> Bitmask:
    try:
        with Image.open(io.BytesIO(data)) as img:
            arr = np.asarray(img.convert("L"))
    except Exception as e:
        raise ApiError(400, "bad_mask", f"cannot decode mask: {e}") from e
    if arr.shape != (height, width):
        raise ApiError(400, "bad_mask", "initial mask dimensions do not match the image")
    return Bitmask(arr != 0)


def create_app(
    predictor_spec: str = "builtin",
    encoding: str = "gaussian",
    session_log_dir: Optional[str] = None,
    ui_dir: Optional[str] = None,
) -> FastAPI:
    """Build the service around one configured predictor.

    Sessions may name "default" (whatever the app was configured with) or
    "builtin" as their predictor; anything else is rejected.
    """
    app = FastAPI(title="clickseg annotation service")
    store = SessionStore(Path(session_log_dir) if session_log_dir else None)
    predictors = {"default": create_predictor(predictor_spec, encoding)}
    if predictor_spec == "builtin":
        predictors["builtin"] = predictors["default"]
    else:
        predictors["builtin"] = create_predictor("builtin", encoding)
    app.state.store = store
    app.state.predictors = predictors

    @app.exception_handler(ApiError)
    async def api_error_handler(request, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content=ErrorBody(code=exc.code, message=exc.message).model_dump())

    def mask_payload(session: Session) -> MaskVersion:
        m = session.current_mask
        return MaskVersion(
            session_id=session.session_id,
            version=session.version,
            width=m.width,
            height=m.height,
            mask_rle=mask_to_rle(m),
        )

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "sessions": len(store)}

    @app.post("/sessions", response_model=MaskVersion, status_code=201)
    def create_session(
        image: UploadFile = File(...),
        mode: str = Form("scratch"),
        predictor: str = Form("default"),
        initial_mask: Optional[UploadFile] = File(None),
    ):
        if mode not in ("scratch", "refine"):
            raise ApiError(400, "bad_mode", f"mode must be scratch or refine, got {mode!r}")
        if predictor not in predictors:
            raise ApiError(400, "unknown_predictor",
                           f"predictor must be one of {sorted(predictors)}, got {predictor!r}")
        rgb = _decode_image(image.file.read())
        h, w = rgb.shape[:2]
        if mode == "refine":
            if initial_mask is None:
                raise ApiError(400, "missing_initial_mask", "refine mode needs an initial mask")
            first = _decode_mask(initial_mask.file.read(), w, h)
        else:
            first = Bitmask.empty(w, h)
        now = _now()
        session = Session(
            session_id=uuid.uuid4().hex,
            image=rgb,
            mode=mode,
            encoding=encoding,
            predictor_name=predictor,
            clicks=ClickSet(),
            versions=[first],
            created=now,
            updated=now,
        )
        store.add(session)
        store.log_event(session.session_id,
                        {"event": "create", "mode": mode, "width": w, "height": h})
        return mask_payload(session)

    @app.post("/sessions/{session_id}/clicks", response_model=MaskVersion)
    def add_click(session_id: str, click: ClickRequest):
        session = store.get(session_id)
        with session.lock:
            h, w = session.image.shape[:2]
            if not (0 <= click.x < w and 0 <= click.y < h):
                raise ApiError(400, "click_out_of_bounds",
                               f"({click.x}, {click.y}) outside {w}x{h} image")
            try:
                clicks = session.clicks.with_click(click.x, click.y, click.polarity)
            except ValueError as e:
                raise ApiError(409, "duplicate_click", str(e)) from e
            prev = session.current_mask if session.mode == "refine" else None
            stack = assemble_stack(session.image, clicks, prev_mask=prev,
                                   encoding=session.encoding)
            try:
                p = predictors[session.predictor_name].predict(stack)
            except Exception as e:  # session state must survive predictor failures
                raise ApiError(502, "predictor_failure", str(e)) from e
            mask = threshold(p)
            session.clicks = clicks
            session.versions.append(mask)
            session.updated = _now()
            store.log_event(session_id, {"event": "click", "x": click.x, "y": click.y,
                                         "polarity": click.polarity,
                                         "version": session.version})
            return mask_payload(session)

    @app.post("/sessions/{session_id}/undo", response_model=MaskVersion)
    def undo(session_id: str):
        session = store.get(session_id)
        with session.lock:
            if session.version == 0:
                raise ApiError(409, "nothing_to_undo", "already at the initial version")
            session.versions.pop()
            session.clicks = session.clicks.without_last()
            session.updated = _now()
            store.log_event(session_id, {"event": "undo", "version": session.version})
            return mask_payload(session)

    @app.get("/sessions/{session_id}", response_model=SessionInfo)
    def get_state(session_id: str):
        session = store.get(session_id)
        with session.lock:
            return SessionInfo(
                session_id=session.session_id,
                version=session.version,
                width=session.image.shape[1],
                height=session.image.shape[0],
                mode=session.mode,
                encoding=session.encoding,
                predictor=predictors[session.predictor_name].descriptor.kind,
                clicks=[ClickInfo(x=c.x, y=c.y, polarity=c.polarity, round=c.round)
                        for c in session.clicks],
                created=session.created,
                updated=session.updated,
            )

    @app.get("/sessions/{session_id}/mask.png")
    def get_mask_png(session_id: str):
        session = store.get(session_id)
        with session.lock:
            arr = np.where(session.current_mask.a, 255, 0).astype(np.uint8)
        buf = io.BytesIO()
        Image.fromarray(arr, mode="L").save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.delete("/sessions/{session_id}", status_code=204)
    def delete_session(session_id: str):
        store.remove(session_id)
        store.log_event(session_id, {"event": "delete"})
        return Response(status_code=204)

    if ui_dir and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
