"""Low-rank rating models fit by alternating ridge block updates.

Two fitting routines are provided: a time-independent factorization and a
time-dependent one in which user factors, movie factors, and user biases
all vary across time bins, with a quadratic penalty tying adjacent bins
together. Every block update is an exact minimizer of the full objective
over that block, so the training cost is non-increasing after each one.

The classifier at the bottom attributes an anonymized household rating to
the member whose predicted rating is closest, with a scaling knob that
biases the decision for or against the household's first member (used to
trace ROC curves).
"""

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .corpus import Binning, Household, TestEvent, bin_of, derive_binning

_MASK64 = (1 << 64) - 1


class Xorshift64Star:
    """Minimal xorshift64* uniform generator.

    Used only for factor initialization so that the init stream is exactly
    reproducible from the written description in the README, independent
    of any library's generator internals. The raw seed is conditioned
    through one splitmix64 step to avoid weak small-integer states.
    """

    def __init__(self, seed: int):
        z = (int(seed) + 0x9E3779B97F4A7C15) & _MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        z ^= z >> 31
        self._state = z if z != 0 else 0x9E3779B97F4A7C15

    def next_uint64(self) -> int:
        x = self._state
        x ^= x >> 12
        x = (x ^ (x << 25)) & _MASK64
        x ^= x >> 27
        self._state = x
        return (x * 0x2545F4914F6CDD1D) & _MASK64

    def uniform(self) -> float:
        """One double in [0, 1), from the top 53 bits of the next output."""
        return (self.next_uint64() >> 11) * 2.0 ** -53

    def uniforms(self, count: int) -> np.ndarray:
        return np.array([self.uniform() for _ in range(count)], dtype=float)


@dataclass(frozen=True)
class FactorParams:
    """Fitting hyper-parameters (defaults follow the tuned reference setup)."""

    rank: int = 10
    reg_lambda: float = 1.0
    xi_u: float = 10.0
    xi_v: float = 40.0
    xi_z: float = 40.0
    bin_count: int = 12
    iterations: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1 or self.iterations < 1 or self.bin_count < 1:
            raise ValueError(f"rank/iterations/bin_count must be >= 1 in {self}")
        if min(self.reg_lambda, self.xi_u, self.xi_v, self.xi_z) < 0:
            raise ValueError(f"regularization weights must be >= 0 in {self}")


@dataclass(frozen=True, eq=False)
class TemporalFactorModel:
    """Per-bin user factors, movie factors, and user biases.

    Arrays are indexed bin-first: user_factors[b, i] is user i's factor
    vector in bin b+1, movie_factors[b, j] is movie j's, and user_bias[b, i]
    the additive bias. bin_count == 1 is the time-independent model.
    """

    user_factors: np.ndarray   # (T, m, r)
    movie_factors: np.ndarray  # (T, n, r)
    user_bias: np.ndarray      # (T, m)
    binning: Binning
    params: FactorParams

    def __post_init__(self):
        if self.user_factors.shape[0] != self.binning.bin_count:
            raise ValueError("tensor bin dimension disagrees with binning")
        for arr in (self.user_factors, self.movie_factors, self.user_bias):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite factor entries")

    @property
    def user_count(self) -> int:
        return self.user_factors.shape[1]

    @property
    def movie_count(self) -> int:
        return self.movie_factors.shape[1]

    @property
    def rank(self) -> int:
        return self.user_factors.shape[2]

    @property
    def bin_count(self) -> int:
        return self.user_factors.shape[0]


# ---------------------------------------------------------------------------
# Ridge block solvers
# ---------------------------------------------------------------------------

def _spd_solve(gram: np.ndarray, rhs: np.ndarray, alpha: float) -> np.ndarray:
    """Solve (gram + alpha I) w = rhs via Cholesky, pseudo-inverse on failure.

    The pseudo-inverse branch returns the minimum-norm solution; it is only
    reachable when alpha == 0 leaves the Gram matrix (numerically)
    singular, which the factor's pivots detect even when the LAPACK
    routine itself does not raise.
    """
    system = gram.copy()
    system[np.diag_indices_from(system)] += alpha
    try:
        factor = scipy.linalg.cho_factor(system, lower=True, check_finite=False)
        pivots = np.diagonal(factor[0]) ** 2
        scale = max(float(np.max(np.diagonal(system), initial=0.0)), 1e-300)
        if float(np.min(pivots, initial=scale)) <= 1e-12 * scale:
            raise scipy.linalg.LinAlgError("numerically singular system")
        return scipy.linalg.cho_solve(factor, rhs, check_finite=False)
    except scipy.linalg.LinAlgError:
        return np.linalg.pinv(system) @ rhs


def ridge_solve(A: np.ndarray, x: np.ndarray, alpha: float) -> np.ndarray:
    """Minimizer of 0.5||A^T w - x||^2 + (alpha/2)||w||^2.

    A has one row per latent coordinate and one column per observation,
    so the solution is (A A^T + alpha I)^-1 A x.
    """
    A = np.asarray(A, dtype=float)
    x = np.asarray(x, dtype=float)
    rhs = A @ x
    gram = A @ A.T
    return _spd_solve(gram, rhs, alpha)


def smoothed_ridge_solve(A, x, y, alpha: float, beta: float) -> np.ndarray:
    """(A A^T + alpha I)^-1 (A x + beta y): a ridge solve pulled toward y.

    With beta == 0 this is bit-identical to ridge_solve(A, x, alpha).
    """
    A = np.asarray(A, dtype=float)
    x = np.asarray(x, dtype=float)
    rhs = A @ x
    if beta != 0.0:
        rhs = rhs + beta * np.asarray(y, dtype=float)
    gram = A @ A.T
    return _spd_solve(gram, rhs, alpha)


# ---------------------------------------------------------------------------
# Alternating minimization
# ---------------------------------------------------------------------------

def _init_factors(m, n, rank, bins, seed):
    """Seeded uniform init: users before movies, row-major, bins fastest."""
    gen = Xorshift64Star(seed)
    u = gen.uniforms(m * rank * bins).reshape(m, rank, bins)
    v = gen.uniforms(n * rank * bins).reshape(n, rank, bins)
    user_factors = np.ascontiguousarray(u.transpose(2, 0, 1)) / math.sqrt(m)
    movie_factors = np.ascontiguousarray(v.transpose(2, 0, 1)) / math.sqrt(n)
    user_bias = np.full((bins, m), 50.0)
    return user_factors, movie_factors, user_bias


def _group_events(train, binning):
    """Per bin: observations keyed by user and by movie, in train order."""
    by_user = [defaultdict(lambda: ([], [])) for _ in range(binning.bin_count)]
    by_movie = [defaultdict(lambda: ([], [])) for _ in range(binning.bin_count)]
    for ev in train:
        b = bin_of(ev.timestamp, binning, clamp=True) - 1
        slot = by_user[b][ev.user]
        slot[0].append(ev.movie)
        slot[1].append(ev.rating)
        slot = by_movie[b][ev.movie]
        slot[0].append(ev.user)
        slot[1].append(ev.rating)

    def freeze(groups):
        return [
            {key: (np.array(ids, dtype=np.intp), np.array(vals, dtype=float))
             for key, (ids, vals) in g.items()}
            for g in groups
        ]

    return freeze(by_user), freeze(by_movie)


def _dims(train, user_count, movie_count):
    m = user_count if user_count is not None else max(ev.user for ev in train) + 1
    n = movie_count if movie_count is not None else max(ev.movie for ev in train) + 1
    return m, n


def fit_lowrank(train, params: FactorParams, user_count=None, movie_count=None,
                block_hook=None, progress=None) -> TemporalFactorModel:
    """Time-independent alternating minimization (bin_count must be 1).

    Each iteration updates all user factors, then all movie factors, then
    all user biases, each by its closed-form ridge solution. Factors start
    from seeded uniforms scaled by 1/sqrt(m) and 1/sqrt(n); biases start
    at 50. Users or movies with no ratings keep their current values.
    """
    if params.bin_count != 1:
        raise ValueError("fit_lowrank requires bin_count == 1")
    train = tuple(train)
    if not train:
        raise ValueError("empty training set")
    m, n = _dims(train, user_count, movie_count)
    binning = derive_binning(train, 1)
    U, V, Z = _init_factors(m, n, params.rank, 1, params.seed)
    by_user, by_movie = _group_events(train, binning)
    model = TemporalFactorModel(U, V, Z, binning, params)
    lam = params.reg_lambda

    for k in range(params.iterations):
        for i, (movies, ratings) in by_user[0].items():
            U[0, i] = ridge_solve(V[0, movies].T, ratings - Z[0, i], lam)
        if block_hook:
            block_hook("u", 1, model)
        for j, (users, ratings) in by_movie[0].items():
            V[0, j] = ridge_solve(U[0, users].T, ratings - Z[0, users], lam)
        if block_hook:
            block_hook("v", 1, model)
        for i, (movies, ratings) in by_user[0].items():
            resid = ratings - V[0, movies] @ U[0, i]
            Z[0, i] = ridge_solve(np.ones((1, len(resid))), resid, 0.0)[0]
        if block_hook:
            block_hook("z", 1, model)
        if progress:
            progress(k + 1, model)
    return model


def fit_lowrank_temporal(train, params: FactorParams, user_count=None,
                         movie_count=None, binning=None, block_hook=None,
                         progress=None) -> TemporalFactorModel:
    """Time-dependent alternating minimization over bins 1..T.

    Bins are swept in order inside each iteration; within a bin all user
    factors, then all movie factors, then all user biases are refreshed.
    Each update solves its ridge subproblem with the diagonal shift raised
    by xi per existing neighbor bin and the right-hand side pulled toward
    the sum of the neighboring bins' current vectors (the bin below has
    already been refreshed this iteration, the bin above has not). Bias
    updates carry no lambda shrinkage, only the smoothing term.

    A user or movie with no ratings in a bin is still pulled toward its
    neighbors whenever a smoothing term exists; with bin_count == 1 the
    updates (and the RNG stream) coincide exactly with fit_lowrank.
    """
    train = tuple(train)
    if not train:
        raise ValueError("empty training set")
    m, n = _dims(train, user_count, movie_count)
    T = params.bin_count
    if binning is None:
        binning = derive_binning(train, T)
    if binning.bin_count != T:
        raise ValueError("binning bin_count disagrees with params")
    U, V, Z = _init_factors(m, n, params.rank, T, params.seed)
    by_user, by_movie = _group_events(train, binning)
    model = TemporalFactorModel(U, V, Z, binning, params)
    lam = params.reg_lambda
    empty = (np.zeros((params.rank, 0)), np.zeros(0))
    empty_bias = (np.ones((1, 0)), np.zeros(0))

    def update(tensor, row, data, base_shift, xi, b, is_bias=False):
        neighbors = []
        if b > 0:
            neighbors.append(tensor[b - 1, row])
        if b + 1 < T:
            neighbors.append(tensor[b + 1, row])
        if data is None and (not neighbors or xi == 0.0):
            return None
        if data is None:
            A, x = empty_bias if is_bias else empty
        else:
            A, x = data
        shift = base_shift + len(neighbors) * xi
        if not neighbors:
            return ridge_solve(A, x, shift)
        pull = neighbors[0] if len(neighbors) == 1 else neighbors[0] + neighbors[1]
        return smoothed_ridge_solve(A, x, pull, shift, xi)

    for k in range(params.iterations):
        for b in range(T):
            for i in range(m):
                data = by_user[b].get(i)
                if data is not None:
                    movies, ratings = data
                    data = (V[b, movies].T, ratings - Z[b, i])
                new = update(U, i, data, lam, params.xi_u, b)
                if new is not None:
                    U[b, i] = new
            if block_hook:
                block_hook("u", b + 1, model)
            for j in range(n):
                data = by_movie[b].get(j)
                if data is not None:
                    users, ratings = data
                    data = (U[b, users].T, ratings - Z[b, users])
                new = update(V, j, data, lam, params.xi_v, b)
                if new is not None:
                    V[b, j] = new
            if block_hook:
                block_hook("v", b + 1, model)
            for i in range(m):
                data = by_user[b].get(i)
                if data is not None:
                    movies, ratings = data
                    resid = ratings - V[b, movies] @ U[b, i]
                    data = (np.ones((1, len(resid))), resid)
                new = update(Z, i, data, 0.0, params.xi_z, b, is_bias=True)
                if new is not None:
                    Z[b, i] = new[0]
            if block_hook:
                block_hook("z", b + 1, model)
        if progress:
            progress(k + 1, model)
    return model


def cost(model: TemporalFactorModel, train) -> float:
    """Regularized squared-error objective the fitting routines minimize."""
    total = 0.0
    if train:
        users = np.array([ev.user for ev in train], dtype=np.intp)
        movies = np.array([ev.movie for ev in train], dtype=np.intp)
        ratings = np.array([ev.rating for ev in train], dtype=float)
        bins = np.array(
            [bin_of(ev.timestamp, model.binning, clamp=True) - 1 for ev in train],
            dtype=np.intp,
        )
        predicted = model.user_bias[bins, users] + np.einsum(
            "er,er->e", model.user_factors[bins, users], model.movie_factors[bins, movies]
        )
        total += 0.5 * float(np.sum((ratings - predicted) ** 2))
    p = model.params
    for tensor, lam, xi in (
        (model.user_factors, p.reg_lambda, p.xi_u),
        (model.movie_factors, p.reg_lambda, p.xi_v),
        (model.user_bias, 0.0, p.xi_z),
    ):
        total += 0.5 * lam * float(np.sum(tensor ** 2))
        if model.bin_count > 1:
            total += 0.5 * xi * float(np.sum(np.diff(tensor, axis=0) ** 2))
    return total


def predict(model: TemporalFactorModel, user: int, movie: int, timestamp: int) -> float:
    """Predicted rating of (user, movie) at the timestamp's bin, unclamped."""
    if not 0 <= user < model.user_count:
        raise ValueError(f"user {user} outside [0, {model.user_count})")
    if not 0 <= movie < model.movie_count:
        raise ValueError(f"movie {movie} outside [0, {model.movie_count})")
    b = bin_of(timestamp, model.binning, clamp=True) - 1
    return float(
        model.user_bias[b, user]
        + model.user_factors[b, user] @ model.movie_factors[b, movie]
    )


def residual_gaps(model: TemporalFactorModel, household: Household,
                  event: TestEvent) -> list[float]:
    """Per-member |observed - predicted| for one anonymized rating."""
    return [
        abs(event.rating - predict(model, member, event.movie, event.timestamp))
        for member in household.members
    ]


def classify_by_residual(model: TemporalFactorModel, household: Household,
                         event: TestEvent, alpha: float = 1.0) -> int:
    """Attribute the rating to the member with the closest prediction.

    The first member wins iff alpha times their residual beats every other
    member's residual strictly; otherwise the best of the remaining
    members wins, smaller user id on ties. alpha = 1 is the plain argmin
    for two-member households; alpha sweeps trade the first member's true
    positive rate against the rest's.
    """
    if alpha < 0:
        raise ValueError(f"alpha {alpha} must be >= 0")
    gaps = residual_gaps(model, household, event)
    rest = list(zip(gaps[1:], household.members[1:]))
    if alpha * gaps[0] < min(gap for gap, _ in rest):
        return household.members[0]
    return min(rest, key=lambda pair: (pair[0], pair[1]))[1]


# ---------------------------------------------------------------------------
# Serialization (layout documented in the README)
# ---------------------------------------------------------------------------

_MODEL_MAGIC = "temporal-factor-model 1"


def _dump_array(fh, name, values):
    fh.write(name + " " + " ".join(repr(float(v)) for v in values) + "\n")


def save_model(model: TemporalFactorModel, path) -> None:
    """Write the model as a line-oriented text file (README: model format)."""
    p, b = model.params, model.binning
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_MODEL_MAGIC + "\n")
        fh.write(f"dims {model.user_count} {model.movie_count} "
                 f"{model.rank} {model.bin_count}\n")
        fh.write(f"params {p.rank} {repr(p.reg_lambda)} {repr(p.xi_u)} "
                 f"{repr(p.xi_v)} {repr(p.xi_z)} {p.bin_count} {p.iterations} "
                 f"{p.seed}\n")
        fh.write(f"binning {b.kind} {b.bin_count} {b.origin} {b.span}\n")
        _dump_array(fh, "U", model.user_factors.transpose(1, 2, 0).ravel())
        _dump_array(fh, "V", model.movie_factors.transpose(1, 2, 0).ravel())
        _dump_array(fh, "Z", model.user_bias.transpose(1, 0).ravel())


def load_model(path) -> TemporalFactorModel:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _MODEL_MAGIC:
        raise ValueError(f"{path}: not a factor model file")
    fields = {}
    for line in lines[1:]:
        name, _, rest = line.partition(" ")
        fields[name] = rest.split()
    m, n, r, T = (int(v) for v in fields["dims"])
    pv = fields["params"]
    params = FactorParams(
        rank=int(pv[0]), reg_lambda=float(pv[1]), xi_u=float(pv[2]),
        xi_v=float(pv[3]), xi_z=float(pv[4]), bin_count=int(pv[5]),
        iterations=int(pv[6]), seed=int(pv[7]),
    )
    bv = fields["binning"]
    binning = Binning(int(bv[1]), int(bv[2]), int(bv[3]), kind=bv[0])
    U = np.array(fields["U"], dtype=float).reshape(m, r, T).transpose(2, 0, 1)
    V = np.array(fields["V"], dtype=float).reshape(n, r, T).transpose(2, 0, 1)
    Z = np.array(fields["Z"], dtype=float).reshape(m, T).transpose(1, 0)
    return TemporalFactorModel(
        np.ascontiguousarray(U), np.ascontiguousarray(V),
        np.ascontiguousarray(Z), binning, params,
    )
