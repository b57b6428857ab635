from ninja import Schema
from typing import Dict, Optional
from pydantic import validator


class DeploySchema(Schema):
    handler: str
    threads: int = 1
    keygroup: Optional[str] = None
    replicate_from_existing: bool = True
    env: Dict[str, str] = {}

    @validator('handler')
    def validate_handler(cls, v):
        if not v or not v.strip():
            raise ValueError('Handler is required')
        return v.strip()

    @validator('threads')
    def validate_threads(cls, v):
        if v < 1:
            raise ValueError('Threads must be at least 1')
        return v


class DeploymentResultSchema(Schema):
    created_keygroup: bool
    replicated_from: Optional[str] = None
    kv_node: Optional[str] = None


class FunctionSchema(Schema):
    name: str
    handler: str
    threads: int
    keygroup: str
    replicate_from_existing: bool
    env: Dict[str, str]


class BuiltinSchema(Schema):
    name: str
    description: str
    persists: bool


class ErrorSchema(Schema):
    kind: str
    detail: str
