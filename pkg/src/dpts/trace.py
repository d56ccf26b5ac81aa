"""Append-only run trace and the run result shared by every search algorithm."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import InvalidInput, IoError

EVENT_TYPES = ("expanded", "transition", "terminated", "queue_resized")
TRANSITION_KINDS = ("EarlyStop", "DeepSeek", "Continue")

_REQUIRED = {
    "expanded": ("cycle", "node", "parent", "mode", "confidence", "new_tokens"),
    "transition": ("cycle", "kind", "node"),
    "terminated": ("cycle", "node", "reward", "path_tokens", "path_index"),
    "queue_resized": ("cycle", "tau_p"),
}


class StopReason(str, enum.Enum):
    BUDGET_EXHAUSTED = "BudgetExhausted"
    POOL_DRAINED = "PoolDrained"
    WALL_CLOCK = "WallClock"
    COMPLETED = "Completed"
    BACKEND_FAILURE = "BackendFailure"


@dataclass
class RunTrace:
    config: dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    events: list[dict[str, Any]] = field(default_factory=list)
    _n_term: int = field(default=-1, init=False, repr=False, compare=False)

    # recording -------------------------------------------------------------
    def expanded(self, cycle: int, node: int, parent: int | None, mode: str,
                 confidence: float, new_tokens: int, depth: int) -> None:
        self.events.append({"type": "expanded", "cycle": cycle, "node": node,
                            "parent": parent, "mode": mode,
                            "confidence": float(confidence),
                            "new_tokens": int(new_tokens), "depth": depth})

    def transition(self, cycle: int, kind: str, node: int, child: int | None = None) -> None:
        self.events.append({"type": "transition", "cycle": cycle, "kind": kind,
                            "node": node, "child": child})

    def terminated(self, cycle: int, node: int, parent: int | None, reward: float,
                   path_tokens: int, confidence: float) -> int:
        index = self.n_terminated + 1
        self._n_term = index
        self.events.append({"type": "terminated", "cycle": cycle, "node": node,
                            "parent": parent, "reward": float(reward),
                            "path_tokens": int(path_tokens), "path_index": index,
                            "confidence": float(confidence)})
        return index

    def queue_resized(self, cycle: int, tau_p: int) -> None:
        self.events.append({"type": "queue_resized", "cycle": cycle, "tau_p": int(tau_p)})

    # views -----------------------------------------------------------------
    def of_type(self, kind: str) -> list[dict[str, Any]]:
        return [e for e in self.events if e["type"] == kind]

    @property
    def n_terminated(self) -> int:
        if self._n_term < 0:
            self._n_term = sum(1 for e in self.events if e["type"] == "terminated")
        return self._n_term

    # serialization ---------------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        return {"config": self.config, "seed": self.seed, "events": self.events}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_dict(cls, data: Any) -> "RunTrace":
        if not isinstance(data, dict) or not isinstance(data.get("events"), list):
            raise InvalidInput("trace must be an object with an 'events' list")
        for i, ev in enumerate(data["events"]):
            if not isinstance(ev, dict) or ev.get("type") not in EVENT_TYPES:
                raise InvalidInput(f"event {i} has no recognised 'type'")
            missing = [k for k in _REQUIRED[ev["type"]] if k not in ev]
            if missing:
                raise InvalidInput(f"event {i} ({ev['type']}) lacks fields {missing}")
        return cls(config=dict(data.get("config") or {}), seed=int(data.get("seed", 0)),
                   events=list(data["events"]))

    @classmethod
    def from_json(cls, text: str) -> "RunTrace":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidInput(f"trace is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def save(self, path: str | Path) -> None:
        try:
            Path(path).write_text(self.to_json(), encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot write trace to {path}: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "RunTrace":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot read trace {path}: {exc}") from exc
        return cls.from_json(text)


@dataclass
class RunResult:
    best: int | None = None
    best_reward: float | None = None
    terminated_paths: list[tuple[int, float, int]] = field(default_factory=list)
    cycles: int = 0
    expansions: int = 0
    stop_reason: StopReason = StopReason.POOL_DRAINED
    error: str | None = None
    wall_seconds: float = 0.0
    # root-first child indices, filled only by algorithms that know them
    best_path: tuple[int, ...] | None = None

    def record(self, node: int, reward: float, tokens: int) -> None:
        self.terminated_paths.append((node, reward, tokens))
        if self.best_reward is None or reward > self.best_reward:
            self.best, self.best_reward = node, reward
