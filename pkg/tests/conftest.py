import numpy as np
import pytest

from poseforge.skeleton import NUM_KEYPOINTS, KeypointSet, Visibility


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def random_keypoints(rng, resolution, integer=False):
    """Keypoint set uniform over a (H, W) grid, all visible."""
    h, w = resolution
    if integer:
        xy = np.stack([rng.integers(0, w, NUM_KEYPOINTS),
                       rng.integers(0, h, NUM_KEYPOINTS)], axis=1).astype(np.float64)
    else:
        xy = np.stack([rng.uniform(0, w - 1, NUM_KEYPOINTS),
                       rng.uniform(0, h - 1, NUM_KEYPOINTS)], axis=1)
    return KeypointSet(xy, np.full(NUM_KEYPOINTS, Visibility.visible, dtype=np.int64))
