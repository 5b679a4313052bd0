import numpy as np
import pytest

from geoact.evalharness import CorpusEntry
from geoact.synth import constant_velocity_track, make_synthetic_corpus
from geoact.trajdata import Trajectory, dominant_gap, train_test_split


def uniform_track(duration=720.0, tau=5.0, speed=15.0, heading=30.0,
                  jitter=2.0, seed=0):
    rng = np.random.default_rng(seed)
    return constant_velocity_track(duration, tau, speed, heading, jitter, rng)


def entry_from(traj: Trajectory, traj_id="fixture") -> CorpusEntry:
    return CorpusEntry(traj_id=traj_id, split=train_test_split(traj, 300.0),
                       tau=dominant_gap(traj))


@pytest.fixture(scope="session")
def small_corpus():
    """Six mixed tracks, split and ready for harness-level tests."""
    entries = []
    for tid, traj in make_synthetic_corpus(6, seed=11):
        entries.append(entry_from(traj, tid))
    return entries
