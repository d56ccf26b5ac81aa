from .base import ExpansionBackend, backend_describe, backend_prompt
from .http import HttpBackend, HttpBackendConfig, http_expand
from .synthetic import SyntheticEnv, brute_force_best, synthetic_expand

__all__ = [
    "ExpansionBackend",
    "HttpBackend",
    "HttpBackendConfig",
    "SyntheticEnv",
    "backend_describe",
    "backend_prompt",
    "brute_force_best",
    "http_expand",
    "synthetic_expand",
]
