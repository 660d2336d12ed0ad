from clh.backend.backends import (
    Backend,
    GenerationRequest,
    HttpBackend,
    OracleBackend,
    RecordingBackend,
    ScriptedBackend,
    generate,
    script_key,
)
from clh.backend.parsing import (
    GenerationResult,
    extract_ids,
    extract_strings,
    id_constraint,
    parse_generation,
    parse_ids,
)
from clh.backend.prompts import PromptTemplate, load_template, load_templates, render

__all__ = [
    "Backend",
    "GenerationRequest",
    "GenerationResult",
    "HttpBackend",
    "OracleBackend",
    "PromptTemplate",
    "RecordingBackend",
    "ScriptedBackend",
    "extract_ids",
    "extract_strings",
    "generate",
    "id_constraint",
    "load_template",
    "load_templates",
    "parse_generation",
    "parse_ids",
    "render",
    "script_key",
]
