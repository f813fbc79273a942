"""FastAPI application wrapping the core package.

Stateless numerics (calibration, fitting, steady-state, ICC) are plain POST
endpoints. Live sessions are created through /sessions and then stream their
binary messages both over a raw TCP endpoint and a WebSocket bridge carrying
the identical wire bytes; control messages flow upstream on either.
"""
from __future__ import annotations

import asyncio
import logging
import math
import uuid
from contextlib import asynccontextmanager

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect

from ..errors import SononavError
from ..geometry import MotionPair, hand_eye_calibrate
from ..metrics import icc_pairs
from ..quant import TimeIntensityCurve, detect_steady_state, fit_replenishment
from ..session import SessionConfig, SessionSource
from ..stream.codec import ControlMessage, StreamDecoder
from ..stream.server import SessionService
from .schemas import (
    CalibrationRequest,
    CalibrationResponse,
    ControlRequest,
    FitRequest,
    FitResponse,
    IccRequest,
    IccResponse,
    SessionCreateRequest,
    SessionInfo,
    SteadyStateRequest,
    SteadyStateResponse,
)

import numpy as np


class ManagedSession:
    def __init__(self, session_id: str, config: SessionConfig, service: SessionService):
        self.id = session_id
        self.config = config
        self.service = service

    @property
    def source(self) -> SessionSource:
        return self.service.source  # type: ignore[return-value]

    def info(self) -> SessionInfo:
        return SessionInfo(
            id=self.id,
            tcp_port=self.service.port,
            config_digest=self.config.digest(),
            feedback_mode=self.source.feedback_mode,
            flash_times_s=list(self.source.flash_times),
            n_subscribers=self.service.hub.n_subscribers,
            messages_published=self.service.hub.messages_published,
            finished=self.service.finished.is_set(),
            voi=self.config.voi.to_dict() if self.config.voi is not None else None,
            dynamic_range_db=self.config.dynamic_range_db,
        )


def _tic(times: list[float], values: list[float]) -> TimeIntensityCurve:
    return TimeIntensityCurve(
        np.asarray(times, float), np.asarray(values, float), np.ones(len(times), dtype=int)
    )


def create_app(console_dir: str | None = None) -> FastAPI:
    @asynccontextmanager
    async def lifespan(app: FastAPI):
        if app.state.preload is not None:
            config, endpoint, max_speed = app.state.preload
            managed = await _start_session(app, config, endpoint, max_speed)
            logging.getLogger("sononav.service").info(
                "preloaded session %s on tcp port %d", managed.id, managed.service.port
            )
        yield
        for managed in list(app.state.sessions.values()):
            await managed.service.stop()
        app.state.sessions.clear()

    app = FastAPI(title="sononav service", version="0.1.0", lifespan=lifespan)
    app.state.sessions = {}
    app.state.preload = None

    @app.get("/healthz")
    async def healthz() -> dict:
        return {"status": "ok", "sessions": len(app.state.sessions)}

    @app.post("/calibration/hand-eye", response_model=CalibrationResponse)
    async def calibrate(req: CalibrationRequest) -> CalibrationResponse:
        pairs = [
            MotionPair(
                image_motion=p.image_motion.to_transform(),
                marker_motion=p.marker_motion.to_transform(),
                displacement=p.displacement_mm,
                quality=p.quality_mm,
            )
            for p in req.pairs
        ]
        try:
            cal = hand_eye_calibrate(
                pairs,
                max_displacement=req.max_displacement_mm,
                max_quality=req.max_quality_mm,
                lever_arm=req.lever_arm_mm,
            )
        except SononavError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        doc = cal.transform.to_dict()
        return CalibrationResponse(
            quaternion=doc["quaternion"],
            translation_mm=doc["translation_mm"],
            rms_error_mm=cal.rms_error,
            n_accepted=cal.n_accepted,
            n_rejected=cal.n_rejected,
        )

    @app.post("/quant/fit", response_model=FitResponse)
    async def fit(req: FitRequest) -> FitResponse:
        try:
            result = fit_replenishment(
                _tic(req.times_s, req.values), min_span=req.min_span_s, t0=req.t0_s
            )
        except SononavError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return FitResponse(
            A=result.A,
            beta_per_s=result.beta,
            rBV=result.rBV,
            rBF=result.rBF,
            r_squared=result.r_squared,
            rms_residual=result.rms_residual,
            t0_s=result.t0,
            converged=result.converged,
            degenerate=result.degenerate,
        )

    @app.post("/quant/steady-state", response_model=SteadyStateResponse)
    async def steady_state(req: SteadyStateRequest) -> SteadyStateResponse:
        try:
            report = detect_steady_state(
                _tic(req.times_s, req.values),
                window=req.window_s,
                slope_tolerance=req.slope_tolerance,
            )
        except SononavError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return SteadyStateResponse(
            reached=report.reached,
            time_to_steady_s=None if math.isnan(report.time_to_steady) else report.time_to_steady,
            window_s=report.window,
            slope_tolerance=report.slope_tolerance,
        )

    @app.post("/metrics/icc", response_model=IccResponse)
    async def icc(req: IccRequest) -> IccResponse:
        try:
            res = icc_pairs(req.pairs, log_transform=req.log_transform)
        except SononavError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return IccResponse(
            icc=res.icc, ci_lo=res.ci95[0], ci_hi=res.ci95[1], band=res.band, n_pairs=res.n_pairs
        )

    @app.post("/sessions", response_model=SessionInfo, status_code=201)
    async def create_session(req: SessionCreateRequest) -> SessionInfo:
        try:
            config = SessionConfig.from_dict(req.config)
            managed = await _start_session(
                app, config, req.endpoint, req.max_speed, req.min_subscribers
            )
        except SononavError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return managed.info()

    @app.get("/sessions", response_model=list[SessionInfo])
    async def list_sessions() -> list[SessionInfo]:
        return [m.info() for m in app.state.sessions.values()]

    @app.get("/sessions/{session_id}", response_model=SessionInfo)
    async def get_session(session_id: str) -> SessionInfo:
        return _lookup(app, session_id).info()

    @app.post("/sessions/{session_id}/control", response_model=SessionInfo)
    async def control_session(session_id: str, req: ControlRequest) -> SessionInfo:
        managed = _lookup(app, session_id)
        managed.source.handle_control(
            ControlMessage(
                timestamp_us=0, event=req.event, params=tuple(req.params.items())
            )
        )
        return managed.info()

    @app.delete("/sessions/{session_id}")
    async def delete_session(session_id: str) -> dict:
        managed = _lookup(app, session_id)
        await managed.service.stop()
        del app.state.sessions[session_id]
        return {"stopped": session_id}

    @app.websocket("/sessions/{session_id}/stream")
    async def stream_session(websocket: WebSocket, session_id: str) -> None:
        managed = app.state.sessions.get(session_id)
        if managed is None:
            await websocket.close(code=4404)
            return
        await websocket.accept()
        sid, queue = managed.service.hub.subscribe()
        decoder = StreamDecoder()

        async def pump_down() -> None:
            while True:
                data = await queue.get()
                if data is None:
                    break
                await websocket.send_bytes(data)

        async def pump_up() -> None:
            while True:
                data = await websocket.receive_bytes()
                for msg in decoder.feed(data):
                    if isinstance(msg, ControlMessage):
                        managed.source.handle_control(msg)

        down = asyncio.create_task(pump_down())
        up = asyncio.create_task(pump_up())
        try:
            done, pending = await asyncio.wait({down, up}, return_when=asyncio.FIRST_COMPLETED)
            for task in pending:
                task.cancel()
        except WebSocketDisconnect:
            pass
        finally:
            managed.service.hub.unsubscribe(sid)
            try:
                await websocket.close()
            except Exception:
                pass

    if console_dir is not None:
        from fastapi.staticfiles import StaticFiles

        # registered after the API routes, so they keep matching priority
        app.mount("/", StaticFiles(directory=console_dir, html=True), name="console")

    return app


def _lookup(app: FastAPI, session_id: str) -> ManagedSession:
    managed = app.state.sessions.get(session_id)
    if managed is None:
        raise HTTPException(status_code=404, detail=f"no session {session_id}")
    return managed


async def _start_session(
    app: FastAPI,
    config: SessionConfig,
    endpoint: str,
    max_speed: bool,
    min_subscribers: int = 0,
) -> ManagedSession:
    source = SessionSource(config)
    host, _, port = endpoint.rpartition(":")
    service = SessionService(
        source,
        host=host or "127.0.0.1",
        port=int(port or 0),
        max_speed=max_speed,
        min_subscribers=min_subscribers,
    )
    await service.start()
    session_id = uuid.uuid4().hex[:12]
    managed = ManagedSession(session_id, config, service)
    app.state.sessions[session_id] = managed
    return managed


def preload_session(
    app: FastAPI, config: SessionConfig, endpoint: str = "127.0.0.1:0", max_speed: bool = False
) -> None:
    """Arrange for a session to start with the app (used by the CLI)."""
    app.state.preload = (config, endpoint, max_speed)
