"""Flat parameter vectors with a named, immutable segment layout."""

from __future__ import annotations

import hashlib
import json
from typing import Iterable, Mapping

import numpy as np

from .errors import ShapeError


class ParamVector:
    """A flat float64 array partitioned into named segments.

    The layout is a tuple of ``(name, shape)`` pairs and never changes after
    construction. Gradients are returned as ``ParamVector`` objects sharing
    the layout of the parameters they differentiate.
    """

    __slots__ = ("_values", "_layout", "_offsets")

    def __init__(self, values, layout: Iterable[tuple[str, tuple[int, ...]]]):
        layout = tuple((str(name), tuple(int(d) for d in shape)) for name, shape in layout)
        offsets = {}
        start = 0
        for name, shape in layout:
            if name in offsets:
                raise ShapeError(f"duplicate segment name {name!r}")
            size = int(np.prod(shape, dtype=np.int64))
            offsets[name] = (start, start + size, shape)
            start += size
        values = np.array(values, dtype=np.float64).reshape(-1)
        if values.size != start:
            raise ShapeError(f"layout needs {start} values, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise ValueError("parameter values must be finite")
        values.flags.writeable = False
        self._values = values
        self._layout = layout
        self._offsets = offsets

    @classmethod
    def from_segments(cls, segments: Mapping[str, np.ndarray]) -> "ParamVector":
        arrays = [np.asarray(v, dtype=np.float64) for v in segments.values()]
        layout = [(name, a.shape) for name, a in zip(segments, arrays)]
        flat = np.concatenate([a.ravel() for a in arrays]) if arrays else np.zeros(0)
        return cls(flat, layout)

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def layout(self) -> tuple[tuple[str, tuple[int, ...]], ...]:
        return self._layout

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self._layout]

    def __len__(self) -> int:
        return self._values.size

    def __getitem__(self, name: str) -> np.ndarray:
        start, stop, shape = self._offsets[name]
        return self._values[start:stop].reshape(shape)

    def slice_of(self, name: str) -> slice:
        start, stop, _ = self._offsets[name]
        return slice(start, stop)

    def like(self, values) -> "ParamVector":
        """New vector with the same layout and different values."""
        return ParamVector(values, self._layout)

    def zeros_like(self) -> "ParamVector":
        return self.like(np.zeros_like(self._values))

    def layout_hash(self) -> str:
        blob = json.dumps([[n, list(s)] for n, s in self._layout]).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def __repr__(self) -> str:
        segs = ", ".join(f"{n}{list(s)}" for n, s in self._layout)
        return f"ParamVector({segs})"
