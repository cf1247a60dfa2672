"""Frame-rate alignment between low-rate video and high-rate audio frames.

Video features arrive at 25 fps while audio frames tick every 10 ms; the
integer line-drawing map distributes the V video indices over the T audio
slots by first-order hold (frames are repeated, never interpolated).
"""

from __future__ import annotations

import numpy as np


def bresenham_map(target_count: int, source_count: int) -> np.ndarray:
    """Map each of ``target_count`` slots to a source index in [0, source_count).

    The map is monotone non-decreasing, covers both endpoints, and uses each
    source index either floor(T/V) or ceil(T/V) times. Upsampling only.
    """
    if source_count < 1:
        raise ValueError("source_count must be >= 1")
    if source_count > target_count:
        raise ValueError(
            f"cannot map {source_count} source frames onto {target_count} slots; "
            "upsampling direction only"
        )
    t = np.arange(target_count, dtype=np.int64)
    return (t * source_count) // target_count


def align_stream(features: np.ndarray, frame_map: np.ndarray) -> np.ndarray:
    """Repeat feature rows up to the audio rate: output row t = input row map[t]."""
    features = np.asarray(features)
    if frame_map.size and frame_map.max() >= features.shape[0]:
        raise ValueError(
            f"frame map addresses row {frame_map.max()} but input has "
            f"{features.shape[0]} rows"
        )
    return features[frame_map]
