"""Run configuration: JSON file, CLI overrides, and seed derivation."""

from __future__ import annotations

import datetime as dt
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from .errors import SchemaError

NORMALIZATION_MODES = ("per-country", "global")


@dataclass
class RunConfig:
    """All knobs for a reproducible run; every field has a usable default.

    A config with just `data_path` and `static_path` set is valid. Dates
    serialize as ISO strings so serialize-then-parse round-trips exactly.
    """

    data_path: str | None = None
    static_path: str | None = None
    model_path: str | None = None  # defaults to <output_dir>/model.json
    output_dir: str = "out"
    window_start: dt.date = dt.date(2021, 1, 1)
    window_end: dt.date | None = None  # None = last available date
    train_fraction: float = 0.7
    split_scheme: str = "chronological"
    seed: int = 0
    budget_doses: float = 3_000_000
    allocation_date: dt.date | None = None
    omegas: list[float] = field(default_factory=lambda: [0.0, 8.0, 20.0, 50.0])
    max_iters: int = 10000
    tol: float = 1e-8
    starts: int = 8
    normalization: str = "per-country"

    def __post_init__(self) -> None:
        if not 0.0 < self.train_fraction < 1.0:
            raise SchemaError("train_fraction must lie in (0, 1)")
        if self.split_scheme not in ("chronological", "random"):
            raise SchemaError(f"unknown split_scheme {self.split_scheme!r}")
        if self.normalization not in NORMALIZATION_MODES:
            raise SchemaError(f"unknown normalization {self.normalization!r}")
        if self.budget_doses < 0:
            raise SchemaError("budget_doses must be >= 0")
        if not self.omegas:
            raise SchemaError("omegas must be non-empty")
        if any(w < 0 for w in self.omegas):
            raise SchemaError("omegas must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("window_start", "window_end", "allocation_date"):
            if d[key] is not None:
                d[key] = d[key].isoformat()
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise SchemaError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        kwargs = dict(data)
        for key in ("window_start", "window_end", "allocation_date"):
            if kwargs.get(key) is not None and not isinstance(kwargs[key], dt.date):
                try:
                    kwargs[key] = dt.date.fromisoformat(kwargs[key])
                except ValueError as exc:
                    raise SchemaError(f"bad date for {key}: {kwargs[key]!r}") from exc
        if "omegas" in kwargs and kwargs["omegas"] is not None:
            kwargs["omegas"] = [float(w) for w in kwargs["omegas"]]
        return cls(**kwargs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise SchemaError("config must be a JSON object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def derive_seed(seed: int, purpose: str) -> int:
    """Stable sub-seed for one purpose (e.g. "split:GHA", "multistart").

    All randomness in a run flows from the single config seed; sub-seeds are
    the first 8 bytes of sha256("<seed>:<purpose>") so they are reproducible
    across processes and platforms.
    """
    digest = hashlib.sha256(f"{seed}:{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "big")
