"""Per-member binary classification from composite context features.

For each household member we fit an L1-regularized logistic regression on
the household's training events: label 1 when that member produced the
event. Feature blocks, concatenated in a fixed order, are

    (a) weekday indicator        7      Sunday first
    (b) hour-of-day indicator    24     UTC
    (c) movie factor vector      r      from the fitted low-rank model
    (d) time-bin indicator       T
    (e) rescaled rating          1      0 -> 1.0, 100 -> 5.0

Rows are standardized per coordinate on the household's training rows
only. An anonymized event is attributed to the member whose model assigns
it the highest probability.

The solver is accelerated proximal gradient descent with backtracking and
restart-on-increase, run until the L1 subgradient (KKT) residual is tiny
or the objective stalls.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .corpus import Binning, Household, bin_of, hour_of, weekday_of
from .factorize import TemporalFactorModel
from .temporal import argmax_member

log = logging.getLogger(__name__)

FEATURE_ORDER = "abcde"


@dataclass(frozen=True)
class FeatureConfig:
    """Which feature blocks to build, plus the L1 weight."""

    day: bool = True
    hour: bool = True
    movie_vector: bool = True
    bin: bool = True
    rating: bool = True
    lambda1: float = 0.01

    def __post_init__(self):
        if not any((self.day, self.hour, self.movie_vector, self.bin, self.rating)):
            raise ValueError("at least one feature block must be enabled")
        if self.lambda1 < 0:
            raise ValueError(f"lambda1 {self.lambda1} must be >= 0")

    @classmethod
    def from_letters(cls, letters: str, lambda1: float = 0.01) -> "FeatureConfig":
        unknown = set(letters) - set(FEATURE_ORDER)
        if unknown:
            raise ValueError(f"unknown feature letters {sorted(unknown)}")
        return cls(
            day="a" in letters, hour="b" in letters, movie_vector="c" in letters,
            bin="d" in letters, rating="e" in letters, lambda1=lambda1,
        )

    @property
    def letters(self) -> str:
        flags = (self.day, self.hour, self.movie_vector, self.bin, self.rating)
        return "".join(c for c, on in zip(FEATURE_ORDER, flags) if on)


@dataclass(frozen=True, eq=False)
class Standardization:
    """Per-coordinate centering and scaling learned from training rows."""

    mean: np.ndarray
    scale: np.ndarray


@dataclass(frozen=True, eq=False)
class LogitModel:
    member: int
    household: int
    theta: np.ndarray
    standardization: Standardization
    config: FeatureConfig


def _one_hot(length: int, index: int) -> np.ndarray:
    out = np.zeros(length)
    out[index] = 1.0
    return out


def build_features(event, config: FeatureConfig,
                   model: TemporalFactorModel | None = None,
                   binning: Binning | None = None) -> np.ndarray:
    """Concatenated feature vector for one rating event.

    ``event`` only needs movie / rating / timestamp fields, so both train
    and test events work. The movie-vector block needs a fitted model; the
    bin block needs a binning (taken from the model when not given).
    A movie the model has never seen yields a zero movie-vector block.
    """
    parts = []
    if config.day:
        parts.append(_one_hot(7, weekday_of(event.timestamp)))
    if config.hour:
        parts.append(_one_hot(24, hour_of(event.timestamp)))
    if config.movie_vector:
        if model is None:
            raise ValueError("movie-vector feature needs a fitted factor model")
        b = bin_of(event.timestamp, model.binning, clamp=True) - 1
        if 0 <= event.movie < model.movie_count:
            parts.append(np.array(model.movie_factors[b, event.movie], dtype=float))
        else:
            log.debug("movie %s unknown to the factor model, zero block", event.movie)
            parts.append(np.zeros(model.rank))
    if config.bin:
        if binning is None:
            binning = model.binning if model is not None else None
        if binning is None:
            raise ValueError("bin feature needs a binning")
        parts.append(_one_hot(binning.bin_count,
                              bin_of(event.timestamp, binning, clamp=True) - 1))
    if config.rating:
        parts.append(np.array([1.0 + 4.0 * event.rating / 100.0]))
    return np.concatenate(parts)


def standardize_fit(rows: np.ndarray) -> Standardization:
    """Mean/std per coordinate; exactly-constant coordinates get scale 1."""
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[0] < 2:
        raise ValueError("standardization needs at least 2 rows")
    constant = np.all(rows == rows[0], axis=0)
    mean = np.where(constant, rows[0], rows.mean(axis=0))
    scale = np.where(constant, 1.0, rows.std(axis=0))
    scale = np.where(scale == 0.0, 1.0, scale)
    return Standardization(mean=mean, scale=scale)


def standardize_apply(stats: Standardization, rows: np.ndarray) -> np.ndarray:
    return (np.asarray(rows, dtype=float) - stats.mean) / stats.scale


# ---------------------------------------------------------------------------
# L1-regularized logistic regression
# ---------------------------------------------------------------------------

def _log1pexp(u: np.ndarray) -> np.ndarray:
    # log(1 + e^u), stable on both tails
    return np.logaddexp(0.0, u)


def _sigmoid(u: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    eu = np.exp(u[~pos])
    out[~pos] = eu / (1.0 + eu)
    return out


def logistic_objective(theta: np.ndarray, rows: np.ndarray, labels: np.ndarray,
                       lambda1: float) -> float:
    """Negative log-likelihood plus lambda1 * ||theta||_1."""
    u = rows @ theta
    return float(np.sum(_log1pexp(u) - labels * u) + lambda1 * np.abs(theta).sum())


def _soft_threshold(v: np.ndarray, t: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def kkt_residual(theta: np.ndarray, rows: np.ndarray, labels: np.ndarray,
                 lambda1: float) -> float:
    """Largest violation of the L1 optimality conditions at theta."""
    grad = rows.T @ (_sigmoid(rows @ theta) - labels)
    viol = np.where(
        theta == 0.0,
        np.maximum(np.abs(grad) - lambda1, 0.0),
        np.abs(grad + lambda1 * np.sign(theta)),
    )
    return float(viol.max())


def _prox_descend(rows, labels, lambda1, theta, *, max_iter, obj_rtol, kkt_tol,
                  stall_cap=60):
    """Accelerated proximal gradient phase; returns the improved iterate.

    Momentum restarts whenever the objective would rise, so the accepted
    objective sequence is non-increasing. Stops on the KKT residual, on an
    exact prox fixed point, or after a run of relative-objective stalls.
    """
    p = rows.shape[1]
    # Lipschitz estimate for the smooth part: lambda_max(X^T X) / 4.
    probe = np.ones(p) / math.sqrt(p)
    for _ in range(20):
        nxt = rows.T @ (rows @ probe)
        norm = np.linalg.norm(nxt)
        if norm == 0.0:
            break
        probe = nxt / norm
    step_l = max(float(probe @ (rows.T @ (rows @ probe))) / 4.0, 1e-12)

    def smooth(t):
        u = rows @ t
        return float(np.sum(_log1pexp(u) - labels * u))

    obj = smooth(theta) + lambda1 * float(np.abs(theta).sum())
    momentum = theta
    t_k = 1.0
    stall_streak = 0
    for it in range(max_iter):
        u = rows @ momentum
        grad = rows.T @ (_sigmoid(u) - labels)
        smooth_at_w = float(np.sum(_log1pexp(u) - labels * u))
        while True:
            candidate = _soft_threshold(momentum - grad / step_l, lambda1 / step_l)
            delta = candidate - momentum
            bound = smooth_at_w + float(grad @ delta) + 0.5 * step_l * float(delta @ delta)
            if smooth(candidate) <= bound + 1e-12 * abs(bound):
                break
            step_l *= 2.0
        new_obj = smooth(candidate) + lambda1 * float(np.abs(candidate).sum())
        at_rest = bool(np.array_equal(momentum, theta))
        if new_obj > obj:
            # momentum overshot: restart from the last accepted point
            momentum = theta
            t_k = 1.0
            continue
        if at_rest and np.array_equal(candidate, theta):
            break  # exact prox fixed point: nothing better is representable
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_k * t_k))
        momentum = candidate + ((t_k - 1.0) / t_next) * (candidate - theta)
        improvement = obj - new_obj
        theta, obj, t_k = candidate, new_obj, t_next
        step_l *= 0.95

        if improvement <= obj_rtol * max(1.0, abs(obj)):
            stall_streak += 1
        else:
            stall_streak = 0
        if stall_streak == 1 or it % 25 == 24:
            if kkt_residual(theta, rows, labels, lambda1) <= kkt_tol:
                break
        if stall_streak >= stall_cap:
            break
    return theta


def _polish_active_set(rows, labels, lambda1, theta, kkt_tol, rounds=25):
    """Newton refinement on the support the proximal phase identified.

    With signs held fixed the restricted problem is smooth, so damped
    Newton steps (clipped to zero at sign crossings) converge quadratically
    to machine precision. Zero coordinates whose gradient violates the L1
    condition are pulled into the support between rounds.
    """
    theta = theta.copy()

    def objective(t):
        u = rows @ t
        return float(np.sum(_log1pexp(u) - labels * u) + lambda1 * np.abs(t).sum())

    for _ in range(rounds):
        grad = rows.T @ (_sigmoid(rows @ theta) - labels)
        active = (theta != 0.0) | (np.abs(grad) > lambda1)
        if not active.any():
            return theta
        signs = np.where(theta[active] != 0.0,
                         np.sign(theta[active]), -np.sign(grad[active]))
        sub = rows[:, active]
        for _ in range(40):
            u = rows @ theta
            sig = _sigmoid(u)
            g_active = sub.T @ (sig - labels) + lambda1 * signs
            gnorm = float(np.max(np.abs(g_active)))
            if gnorm <= 0.25 * kkt_tol:
                break
            weight = sig * (1.0 - sig)
            hess = sub.T @ (sub * weight[:, None])
            hess[np.diag_indices_from(hess)] += 1e-10
            try:
                step = np.linalg.solve(hess, g_active)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(hess, g_active, rcond=None)[0]
            base = objective(theta)
            scale = 1.0
            improved = False
            for _ in range(60):
                trial_active = theta[active] - scale * step
                crossed = np.sign(trial_active) * signs < 0
                trial_active[crossed] = 0.0
                trial = theta.copy()
                trial[active] = trial_active
                trial_obj = objective(trial)
                if trial_obj < base:
                    theta = trial
                    improved = True
                    break
                # Near the optimum the objective is flat at float resolution;
                # accept the full Newton step on gradient-norm progress instead.
                if scale == 1.0 and trial_obj <= base + 1e-12 * max(1.0, abs(base)):
                    g_trial = sub.T @ (_sigmoid(rows @ trial) - labels) + lambda1 * signs
                    if float(np.max(np.abs(g_trial))) < 0.5 * gnorm:
                        theta = trial
                        improved = True
                        break
                scale *= 0.5
            if not improved:
                break
        if kkt_residual(theta, rows, labels, lambda1) <= kkt_tol:
            return theta
    return theta


def fit_logistic(rows: np.ndarray, labels, lambda1: float, *,
                 max_iter: int = 50_000, obj_rtol: float = 1e-10,
                 kkt_tol: float = 1e-8) -> np.ndarray:
    """Minimize the L1-regularized logistic loss from a zero start.

    Two phases, both deterministic: accelerated proximal gradient descent
    with backtracking to find the support, then sign-fixed Newton polish
    on that support to drive the KKT residual to ``kkt_tol``. Alternates
    if the support was not yet settled. The proximal phase alone is a
    complete solver; the polish only sharpens the answer it returns.
    """
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise ValueError("need a 2-D row matrix with at least one row")
    labels = np.asarray(labels, dtype=float)
    if labels.shape != (rows.shape[0],) or not np.all(np.isin(labels, (0.0, 1.0))):
        raise ValueError("labels must be one 0/1 value per row")
    if lambda1 < 0:
        raise ValueError(f"lambda1 {lambda1} must be >= 0")

    theta = np.zeros(rows.shape[1])
    budget = max_iter
    # The proximal phase only needs to get close and settle the support;
    # the Newton polish does the final descent, so hand over early.
    handover_tol = max(kkt_tol, 1e-4)
    for _ in range(8):
        phase = min(budget, 600)
        theta = _prox_descend(rows, labels, lambda1, theta, max_iter=phase,
                              obj_rtol=obj_rtol, kkt_tol=handover_tol,
                              stall_cap=10)
        budget -= phase
        if kkt_residual(theta, rows, labels, lambda1) <= kkt_tol:
            return theta
        theta = _polish_active_set(rows, labels, lambda1, theta, kkt_tol)
        if kkt_residual(theta, rows, labels, lambda1) <= kkt_tol or budget <= 0:
            return theta
    return theta


def logit_prob(theta: np.ndarray, x: np.ndarray) -> float:
    """Numerically stable sigmoid of <theta, x>."""
    u = float(np.dot(theta, x))
    if u >= 0:
        return 1.0 / (1.0 + math.exp(-u))
    eu = math.exp(u)
    return eu / (1.0 + eu)


# ---------------------------------------------------------------------------
# Household-level fitting and classification
# ---------------------------------------------------------------------------

def fit_household(train, household: Household, config: FeatureConfig,
                  model: TemporalFactorModel | None = None,
                  binning: Binning | None = None) -> dict[int, LogitModel]:
    """One logistic model per member, sharing rows and standardization.

    Labels are complementary across members: each training event counts as
    a positive example for exactly its rater. Members whose labels are all
    zero or all one are still fit (the L1 term keeps theta bounded).
    """
    member_set = set(household.members)
    events = [ev for ev in train if ev.user in member_set]
    if len(events) < 2:
        raise ValueError(f"household {household.id} needs >= 2 training events")
    rows = np.stack([build_features(ev, config, model, binning) for ev in events])
    stats = standardize_fit(rows)
    scaled = standardize_apply(stats, rows)
    fitted = {}
    for member in household.members:
        labels = np.array([1.0 if ev.user == member else 0.0 for ev in events])
        if labels.min() == labels.max():
            log.debug("household %s member %s: one-sided labels",
                      household.id, member)
        theta = fit_logistic(scaled, labels, config.lambda1)
        fitted[member] = LogitModel(member, household.id, theta, stats, config)
    return fitted


def classify_logistic(models: dict[int, LogitModel], event,
                      model: TemporalFactorModel | None = None,
                      binning: Binning | None = None) -> int:
    """Attribute the event to the member with the highest logit probability."""
    if not models:
        raise ValueError("no fitted member models")
    first = next(iter(models.values()))
    x = standardize_apply(
        first.standardization, build_features(event, first.config, model, binning)
    )
    return argmax_member(
        sorted(models), lambda member: logit_prob(models[member].theta, x)
    )


def member_probabilities(models: dict[int, LogitModel], event,
                         model: TemporalFactorModel | None = None,
                         binning: Binning | None = None) -> dict[int, float]:
    """Per-member logit probabilities for one event (not normalized)."""
    first = next(iter(models.values()))
    x = standardize_apply(
        first.standardization, build_features(event, first.config, model, binning)
    )
    return {member: logit_prob(models[member].theta, x) for member in models}


# ---------------------------------------------------------------------------
# Model dump (text format; see README)
# ---------------------------------------------------------------------------

_LOGIT_MAGIC = "logit-models 1"


def save_logit_models(by_household: dict[int, dict[int, LogitModel]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_LOGIT_MAGIC + "\n")
        for hid in by_household:
            for member, lm in by_household[hid].items():
                fh.write(f"model {hid} {member} {lm.config.letters} "
                         f"{repr(lm.config.lambda1)}\n")
                for name, arr in (("theta", lm.theta),
                                  ("mean", lm.standardization.mean),
                                  ("scale", lm.standardization.scale)):
                    fh.write(name + " " + " ".join(repr(float(v)) for v in arr) + "\n")


def load_logit_models(path) -> dict[int, dict[int, LogitModel]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _LOGIT_MAGIC:
        raise ValueError(f"{path}: not a logit model file")
    out: dict[int, dict[int, LogitModel]] = {}
    i = 1
    while i < len(lines):
        tag, hid, member, letters, lam = lines[i].split()
        if tag != "model":
            raise ValueError(f"{path}: malformed at line {i + 1}")
        arrays = {}
        for offset in range(1, 4):
            name, _, rest = lines[i + offset].partition(" ")
            arrays[name] = np.array([float(v) for v in rest.split()])
        config = FeatureConfig.from_letters(letters, float(lam))
        stats = Standardization(arrays["mean"], arrays["scale"])
        lm = LogitModel(int(member), int(hid), arrays["theta"], stats, config)
        out.setdefault(int(hid), {})[int(member)] = lm
        i += 4
    return out
