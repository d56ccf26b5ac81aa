"""HTTP client backend for an external generation service.

Wire format (JSON, UTF-8)::

    POST {endpoint}/expand
    {"width": w, "max_new_tokens": mini_step,
     "rows": [{"node_id": int, "tokens": [int, ...]}, ...]}

    200 -> {"rows": [{"children": [{"tokens": [...], "confidence": float,
                                    "terminated": bool,
                                    "terminal_reward": float | null}, ...]}, ...]}
    >=400 -> {"error": str}

The service keeps its own generation cache; locally each returned token gets
a deterministic nonzero placeholder cell so the batching arithmetic runs the
same way as with the synthetic backend.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
import requests

from ..errors import BackendError, BackendUnavailable, InvalidConfig, ProtocolViolation
from ..streamline import BatchInput, BatchOutput, ChildRecord

log = logging.getLogger(__name__)


@dataclass
class HttpBackendConfig:
    endpoint: str
    timeout: float = 30.0
    max_retries: int = 2
    auth_token: str | None = None
    retry_backoff: float = 0.05

    def __post_init__(self) -> None:
        if not self.endpoint.startswith(("http://", "https://")):
            raise InvalidConfig(f"endpoint must be an http(s) URL, got {self.endpoint!r}")
        if self.timeout <= 0 or self.max_retries < 0:
            raise InvalidConfig("timeout must be > 0 and max_retries >= 0")


def placeholder_cells(tokens: np.ndarray, cache_dim: int) -> np.ndarray:
    comp = np.arange(1, cache_dim + 1, dtype=np.int64)
    return 1.0 + ((tokens[:, None] * comp[None, :]) % 251) / 251.0


class HttpBackend:
    def __init__(self, cfg: HttpBackendConfig, *, cache_dim: int = 4, pad_token: int = 0,
                 prompt: Sequence[int] | None = None,
                 session: requests.Session | None = None) -> None:
        self.cfg = cfg
        self.cache_dim = cache_dim
        self.pad_token = pad_token
        self._prompt = None if prompt is None else np.asarray(prompt, dtype=np.int64)
        self.session = session or requests.Session()

    def prompt(self) -> np.ndarray:
        if self._prompt is None:
            raise InvalidConfig("the HTTP backend needs an explicit prompt")
        return self._prompt.copy()

    def describe(self) -> dict[str, Any]:
        return {"kind": "http", "endpoint": self.cfg.endpoint}

    def expand(self, batch: BatchInput, w: int, mini_step: int) -> BatchOutput:
        return http_expand(self, batch, w, mini_step)

    def close(self) -> None:
        self.session.close()


def _post(backend: HttpBackend, payload: dict) -> Any:
    cfg = backend.cfg
    url = cfg.endpoint.rstrip("/") + "/expand"
    headers = {"Content-Type": "application/json"}
    if cfg.auth_token:
        headers["Authorization"] = f"Bearer {cfg.auth_token}"
    last: Exception | None = None
    for attempt in range(cfg.max_retries + 1):
        try:
            resp = backend.session.post(url, json=payload, headers=headers, timeout=cfg.timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            last = exc
            log.debug("transport error on attempt %d: %s", attempt + 1, exc)
            if attempt < cfg.max_retries:
                time.sleep(cfg.retry_backoff * (attempt + 1))
            continue
        if resp.status_code >= 400:
            try:
                msg = str(resp.json().get("error", ""))
            except ValueError:
                msg = resp.text[:200]
            raise BackendError(resp.status_code, msg)
        try:
            return resp.json()
        except ValueError as exc:
            raise ProtocolViolation(f"response is not JSON: {exc}") from exc
    raise BackendUnavailable(
        f"{url} unreachable after {cfg.max_retries + 1} attempts: {last}")


def _is_real(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _parse_child(raw: Any, where: str, backend: HttpBackend, mini_step: int) -> ChildRecord:
    if not isinstance(raw, dict):
        raise ProtocolViolation(f"{where}: child must be an object")
    toks = raw.get("tokens")
    if (not isinstance(toks, list) or not toks
            or not all(isinstance(t, int) and not isinstance(t, bool) and t >= 0 for t in toks)):
        raise ProtocolViolation(f"{where}: tokens must be a non-empty list of token ids")
    if len(toks) > mini_step:
        raise ProtocolViolation(f"{where}: {len(toks)} tokens exceed max_new_tokens {mini_step}")
    if backend.pad_token in toks:
        raise ProtocolViolation(f"{where}: tokens contain the pad token")
    conf = raw.get("confidence")
    if not _is_real(conf) or not 0.0 <= conf <= 1.0:
        raise ProtocolViolation(f"{where}: confidence {conf!r} outside [0, 1]")
    term = raw.get("terminated")
    if not isinstance(term, bool):
        raise ProtocolViolation(f"{where}: terminated must be a boolean")
    reward = raw.get("terminal_reward")
    if term:
        if not _is_real(reward) or not 0.0 <= reward <= 1.0:
            raise ProtocolViolation(f"{where}: terminated child needs terminal_reward in [0, 1]")
        reward = float(reward)
    elif reward is not None:
        raise ProtocolViolation(f"{where}: terminal_reward given for a live child")
    arr = np.asarray(toks, dtype=np.int64)
    return ChildRecord(tokens=arr, cells=placeholder_cells(arr, backend.cache_dim),
                       confidence=float(conf), terminated=term, terminal_reward=reward)


def http_expand(backend: HttpBackend, batch: BatchInput, w: int, mini_step: int) -> BatchOutput:
    payload = {
        "width": w,
        "max_new_tokens": mini_step,
        "rows": [{"node_id": int(nid), "tokens": batch.row_tokens(i).tolist()}
                 for i, nid in enumerate(batch.row_nodes)],
    }
    body = _post(backend, payload)
    rows = body.get("rows") if isinstance(body, dict) else None
    if not isinstance(rows, list) or len(rows) != batch.n_rows:
        raise ProtocolViolation(f"expected {batch.n_rows} rows in the response")
    out = []
    for i, row in enumerate(rows):
        kids = row.get("children") if isinstance(row, dict) else None
        if not isinstance(kids, list) or len(kids) != w:
            raise ProtocolViolation(f"row {i}: expected {w} children")
        out.append([_parse_child(c, f"row {i} child {j}", backend, mini_step)
                    for j, c in enumerate(kids)])
    return BatchOutput(out)
