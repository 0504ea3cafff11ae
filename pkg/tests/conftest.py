import numpy as np
import pytest

from actseg.clustering import run_lengths
from actseg.config import RunConfig
from actseg.data import synth_generate
from actseg.hmm import Segmentation
from actseg.pipeline import run_pipeline

# the standard synthetic dataset used by the acceptance suite
STANDARD = dict(n_videos=20, n_actions=5, dim=10,
                mean_lengths=[20, 30, 25, 20, 30],
                separation=4.0, skip_prob=0.1, seed=7)


@pytest.fixture(scope="session")
def standard_dataset():
    return synth_generate(**STANDARD)


@pytest.fixture(scope="session")
def gt_segmentations(standard_dataset):
    _, ground_truth, _ = standard_dataset
    segs = {}
    for video_id, labels in ground_truth.items():
        runs = run_lengths(labels)
        segs[video_id] = Segmentation(np.array([r[0] for r in runs]),
                                      np.array([r[1] for r in runs]))
    return segs


@pytest.fixture(scope="session")
def asal_run(standard_dataset):
    """One full ASAL pipeline run on the standard dataset, shared by tests."""
    videos, ground_truth, _ = standard_dataset
    cfg = RunConfig(n_actions=5, variant="asal", seed=7)
    return run_pipeline(cfg, videos, ground_truth)


@pytest.fixture()
def small_dataset():
    return synth_generate(8, 3, 8, [12, 16, 12], 4.0, 0.1, 5)
