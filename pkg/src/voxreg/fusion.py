"""Channel fusion of a registered pair into one multi-channel volume."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatchError
from .volume import GridMeta, Volume


@dataclass
class FusedVolume:
    """Two aligned channels on one grid: channel 0 fixed, channel 1 registered moving."""

    meta: GridMeta
    channels: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float32)
        if self.channels.shape != self.meta.dims + (2,):
            raise GridMismatchError(
                f"channel array shape {self.channels.shape} does not match dims {self.meta.dims} + (2,)"
            )

    def channel(self, index: int) -> Volume:
        return Volume(self.meta, self.channels[..., index].copy())


def fuse(fixed: Volume, moving_registered: Volume) -> FusedVolume:
    """Stack the fixed volume and the registered moving volume; intensities pass through unchanged."""
    if not fixed.meta.matches(moving_registered.meta):
        raise GridMismatchError("fusion inputs must share a grid")
    return FusedVolume(fixed.meta, np.stack([fixed.voxels, moving_registered.voxels], axis=-1))
