import numpy as np
import pytest

from geogen.data_model import CheckIn, POICatalog, Trajectory

WEEK = 7 * 86400.0


@pytest.fixture
def five_poi_coords():
    # two spatial clusters: 0-2 downtown, 3-4 uptown
    return np.array(
        [
            [40.7128, -74.0060],
            [40.7180, -74.0000],
            [40.7200, -74.0150],
            [40.8500, -73.9000],
            [40.8600, -73.9100],
        ]
    )


@pytest.fixture
def five_poi_catalog(five_poi_coords):
    freq = np.zeros((5, 24))
    freq[:, 9] = 0.5
    freq[:, 21] = 0.5
    return POICatalog(
        coords=five_poi_coords,
        category=np.array([0, 0, 1, 1, 2]),
        freq=freq,
        category_count=3,
    )


def random_trajectory(rng: np.random.Generator, n_pois: int, n_events: int, duration: float = WEEK):
    """Strictly increasing random check-ins over a window."""
    times = np.sort(rng.uniform(0.0, duration - 1.0, size=n_events))
    times = np.unique(np.floor(times))
    checkins = [CheckIn(int(rng.integers(0, n_pois)), float(t)) for t in times]
    return Trajectory(checkins, duration)


@pytest.fixture
def trajectory_factory():
    return random_trajectory
