from __future__ import annotations

from typing import Any, Protocol, runtime_checkable

import numpy as np

from ..streamline import BatchInput, BatchOutput


@runtime_checkable
class ExpansionBackend(Protocol):
    """Anything that turns a padded batch into ``w`` children per row."""

    def expand(self, batch: BatchInput, w: int, mini_step: int) -> BatchOutput: ...


def backend_prompt(backend: Any) -> np.ndarray | None:
    fn = getattr(backend, "prompt", None)
    return np.asarray(fn(), dtype=np.int64) if callable(fn) else None


def backend_describe(backend: Any) -> dict[str, Any]:
    fn = getattr(backend, "describe", None)
    return fn() if callable(fn) else {"kind": type(backend).__name__}
