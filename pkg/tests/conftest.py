import numpy as np
import pytest

from hhattrib.corpus import (
    Household, RatingEvent, SynthConfig, TestEvent, make_dataset, synth_generate,
)

# Sunday 2010-01-03 00:00:00 UTC; day k of the synthetic week is DAY0 + k days.
DAY0 = 1_262_476_800
DAY = 86_400


def event(user, movie, rating=50.0, day=0, hour=12, week=0):
    """One rating event at a controlled weekday/hour, week offset in weeks."""
    stamp = DAY0 + week * 7 * DAY + day * DAY + hour * 3_600
    return RatingEvent(user, movie, rating, stamp)


def anon_event(household, movie, rating=50.0, day=0, hour=12, week=0, true_user=None):
    stamp = DAY0 + week * 7 * DAY + day * DAY + hour * 3_600
    return TestEvent(household, movie, rating, stamp, true_user)


@pytest.fixture
def pair_household():
    return Household(0, (0, 1))


@pytest.fixture
def small_dataset():
    """Two 2-member households, members with distinct weekday habits."""
    events = []
    movie = 0
    for user, day in ((0, 0), (1, 3), (2, 1), (3, 5)):
        for k in range(12):
            events.append(event(user, movie, rating=40.0 + 3 * user + k % 5,
                                day=day, week=k % 8, hour=(user * 5) % 24))
            movie += 1
    households = {0: Household(0, (0, 1)), 1: Household(1, (2, 3))}
    return make_dataset(events, households)


@pytest.fixture(scope="session")
def planted_dataset():
    """Mid-size planted dataset shared by classifier-quality tests."""
    config = SynthConfig(
        households_size2=10, households_size3=2, households_size4=1,
        events_per_user=80, overlap=0.1, rank=2, noise_sigma=8.0, seed=11,
    )
    return synth_generate(config)


def as_rating_events(test_events):
    """Map evaluation events back to plain rating events via the true user."""
    return [
        RatingEvent(ev.true_user, ev.movie, ev.rating, ev.timestamp)
        for ev in test_events
    ]


def rng_for(test_seed):
    return np.random.default_rng(test_seed)
