"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from typing import Any

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class ValidateRequest(BaseModel):
    config_text: str


class ValidateResponse(BaseModel):
    valid: bool
    errors: list[str] = Field(default_factory=list)
    config_hash: str | None = None


class RunRequest(BaseModel):
    config_text: str
    seed: int = 0


class RunRecordModel(BaseModel):
    command: str
    config_hash: str
    seed: int
    started_utc: str
    finished_utc: str
    tool_version: str
    status: str
    exit_code: int
    error: str | None = None
    outputs: dict[str, Any] = Field(default_factory=dict)


class ReportRequest(BaseModel):
    records: list[RunRecordModel]


class ReportResponse(BaseModel):
    rows: list[dict[str, Any]]
