"""Gaussian residual scoring on top of the low-rank model and priors.

A member's joint score for an anonymized rating is a normal density
centered on that member's predicted rating, scaled by the member's prior
probability. Normalizing the scores across household members gives a
posterior over who produced the rating; the classifier takes the argmax.
With the residual scale set to infinity the density factor drops out and
the decision coincides with the prior-only classifier of the same mode.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .corpus import Household, TestEvent
from .factorize import TemporalFactorModel, predict
from .temporal import TemporalPriors, argmax_member, prior_value

log = logging.getLogger(__name__)

SCOPES = ("infinite", "global", "per_user")


@dataclass(frozen=True)
class SigmaModel:
    """Residual standard deviations at the chosen scope, floored below.

    ``infinite`` drops the Gaussian factor entirely; ``global`` shares a
    single value; ``per_user`` keeps one value per user, falling back to
    the global one for users with too few residuals.
    """

    scope: str
    sigma_all: float
    sigma_by_user: dict[int, float]
    floor: float = 0.5

    def __post_init__(self):
        if self.scope not in SCOPES:
            raise ValueError(f"scope {self.scope!r} not in {SCOPES}")
        if self.floor <= 0:
            raise ValueError("floor must be positive")
        if self.scope != "infinite":
            stored = [self.sigma_all, *self.sigma_by_user.values()]
            if any(s < self.floor for s in stored):
                raise ValueError("every stored sigma must be >= floor")

    def sigma_for(self, member: int) -> float:
        if self.scope == "infinite":
            return math.inf
        if self.scope == "global":
            return self.sigma_all
        return self.sigma_by_user.get(member, self.sigma_all)


def residuals(train, model: TemporalFactorModel) -> np.ndarray:
    """Observed minus predicted rating for every training event."""
    return np.array(
        [ev.rating - predict(model, ev.user, ev.movie, ev.timestamp) for ev in train]
    )


def estimate_sigma(train, model: TemporalFactorModel, scope: str,
                   floor: float = 0.5, min_residuals: int = 5) -> SigmaModel:
    """Population std of training residuals, overall and optionally per user.

    Users with fewer than ``min_residuals`` residuals inherit the global
    value. All stored values are floored to keep densities finite.
    """
    if scope not in SCOPES:
        raise ValueError(f"scope {scope!r} not in {SCOPES}")
    train = tuple(train)
    if not train:
        raise ValueError("cannot estimate sigma from an empty training set")
    if scope == "infinite":
        return SigmaModel("infinite", math.inf, {}, floor)
    errors = residuals(train, model)
    sigma_all = max(floor, float(np.std(errors)))
    by_user: dict[int, float] = {}
    if scope == "per_user":
        users = np.array([ev.user for ev in train])
        for user in np.unique(users):
            mine = errors[users == user]
            if len(mine) < min_residuals:
                by_user[int(user)] = sigma_all
            else:
                by_user[int(user)] = max(floor, float(np.std(mine)))
    return SigmaModel(scope, sigma_all, by_user, floor)


def joint_score(member: int, rating: float, event: TestEvent,
                model: TemporalFactorModel, priors: TemporalPriors,
                mode: str, sigma_model: SigmaModel) -> float:
    """Normal density of the rating around the member's prediction, times prior."""
    q = prior_value(priors, member, mode, event)
    if sigma_model.scope == "infinite":
        return q
    sigma = sigma_model.sigma_for(member)
    gap = rating - predict(model, member, event.movie, event.timestamp)
    norm = math.sqrt(2.0 * math.pi * sigma * sigma)
    return math.exp(-(gap * gap) / (2.0 * sigma * sigma)) / norm * q


def posterior(household: Household, event: TestEvent,
              model: TemporalFactorModel, priors: TemporalPriors,
              mode: str, sigma_model: SigmaModel) -> dict[int, float]:
    """Joint scores normalized over members; uniform if every score is zero."""
    scores = {
        member: joint_score(member, event.rating, event, model, priors,
                            mode, sigma_model)
        for member in household.members
    }
    total = sum(scores.values())
    if total <= 0.0 or not math.isfinite(total):
        log.debug("household %s: degenerate joint scores, uniform posterior",
                  household.id)
        share = 1.0 / len(household.members)
        return {member: share for member in household.members}
    return {member: value / total for member, value in scores.items()}


def classify_generative(household: Household, event: TestEvent,
                        model: TemporalFactorModel, priors: TemporalPriors,
                        mode: str, sigma_model: SigmaModel) -> int:
    """Attribute the event to the member with the largest joint score."""
    return argmax_member(
        household.members,
        lambda member: joint_score(member, event.rating, event, model,
                                   priors, mode, sigma_model),
    )


def residual_histogram(train, model: TemporalFactorModel, bins: int = 50,
                       user: int | None = None):
    """Histogram (edges, counts) of training residuals, overall or per user."""
    errors = residuals(train, model)
    if user is not None:
        users = np.array([ev.user for ev in train])
        errors = errors[users == user]
    counts, edges = np.histogram(errors, bins=bins)
    return edges, counts
