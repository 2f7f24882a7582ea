"""Feature containers shared across the backbone."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class StagedFeatureMap:
    """Multi-stage latent grids for one view.

    stages: n_stages arrays of shape (d_E + 3, h, w); the last 3 channels of
    every stage hold RGB in [0, 1]. cls: (d_E,) global vector.
    """

    view_id: int
    is_reference: bool
    stages: list[np.ndarray] = field(default_factory=list)
    cls: np.ndarray | None = None

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    @property
    def grid(self) -> tuple[int, int]:
        return self.stages[0].shape[1:]


@dataclass
class DepthMap:
    """Per-cell positive depths (meters) with a validity mask."""

    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        if self.valid is None:
            self.valid = np.isfinite(self.depth) & (self.depth > 0)
        bad = self.valid & ~(np.isfinite(self.depth) & (self.depth > 0))
        if bad.any():
            raise ValueError("valid entries must be positive and finite")
