import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def random_frame(rng, spread=30.0, offset=100.0, frame_index=0):
    """A valid ContourFrame with all 10 articulators at random positions."""
    from vtinv.datamodel import (ArticulatorId, POINTS_PER_CONTOUR, Contour,
                                 ContourFrame)
    contours = {
        art: Contour(offset + spread * rng.random((POINTS_PER_CONTOUR, 2)))
        for art in ArticulatorId
    }
    return ContourFrame(frame_index=frame_index, contours=contours)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Small synthetic corpus shared by experiment/CLI integration tests."""
    from vtinv.synth import SynthConfig, generate_corpus
    root = tmp_path_factory.mktemp("corpus")
    generate_corpus(SynthConfig(seed=7, n_acquisitions=5, frames_per_acq=150),
                    root)
    return root
