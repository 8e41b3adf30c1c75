"""FastAPI service wrapping the core package.

Computation results travel as structured JSON; clients (the bundled CLI
included) render files locally from the returned record.  Scientific
failure modes are regular responses with a status and exit code, not HTTP
errors; only malformed requests map to 4xx.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..config import parse_config
from ..errors import EXIT_USAGE, ConfigError
from ..runner import COMMANDS, RunRecord, build_report, execute
from .schemas import (
    HealthResponse,
    ReportRequest,
    ReportResponse,
    RunRecordModel,
    RunRequest,
    ValidateRequest,
    ValidateResponse,
)


def _config_error_record(command: str, exc: ConfigError, seed: int) -> RunRecordModel:
    from ..runner import _now

    stamp = _now()
    return RunRecordModel(
        command=command,
        config_hash="",
        seed=seed,
        started_utc=stamp,
        finished_utc=stamp,
        tool_version=__version__,
        status="config-error",
        exit_code=EXIT_USAGE,
        error="; ".join(exc.errors),
        outputs={"config_errors": exc.errors},
    )


def create_app() -> FastAPI:
    app = FastAPI(
        title="attractor-dim service",
        version=__version__,
        description=(
            "Simulation, spectral analysis, dimension estimation and analytic "
            "dimension bounds for reaction-diffusion dynamics on box domains."
        ),
    )

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/v1/validate", response_model=ValidateResponse)
    def validate(req: ValidateRequest) -> ValidateResponse:
        try:
            cfg = parse_config(req.config_text)
        except ConfigError as exc:
            return ValidateResponse(valid=False, errors=exc.errors)
        return ValidateResponse(valid=True, config_hash=cfg.config_hash())

    @app.post("/v1/run/{command}", response_model=RunRecordModel)
    def run(command: str, req: RunRequest) -> RunRecordModel:
        if command not in COMMANDS or command == "report":
            raise HTTPException(status_code=404, detail=f"unknown command {command!r}")
        try:
            cfg = parse_config(req.config_text)
        except ConfigError as exc:
            return _config_error_record(command, exc, req.seed)
        record: RunRecord = execute(command, cfg, seed=req.seed)
        return RunRecordModel(**record.as_dict())

    @app.post("/v1/report", response_model=ReportResponse)
    def report(req: ReportRequest) -> ReportResponse:
        try:
            rows = build_report([r.model_dump() for r in req.records])
        except ConfigError as exc:
            raise HTTPException(status_code=400, detail="; ".join(exc.errors))
        return ReportResponse(rows=rows)

    return app


app = create_app()
