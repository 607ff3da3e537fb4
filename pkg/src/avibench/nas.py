"""Desk-scale architecture search: GP surrogate, expected improvement, morphism candidates."""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import ndtr

from .errors import NumericError, SearchComplete, SearchFailed, TrainingDiverged
from .nnet import (AdamSpec, Conv2D, Dense, Flatten, MaxPool, ModelConfig, ReLU, SGDSpec, Softmax,
                   Splits, TrainConfig, TrainingRun, train)

log = logging.getLogger(__name__)

MORPH_OPS = ("widen_filters", "deepen_block", "widen_dense")
DEFAULT_LRS = tuple(float(10.0 ** e) for e in (-4.0, -3.5, -3.0, -2.5, -2.0))


@dataclass(frozen=True)
class Genome:
    n_conv_blocks: int
    filters: int
    kernel: int
    pool: bool
    dense_units: int
    lr: float
    optimizer: str

    def key(self) -> tuple:
        return (self.n_conv_blocks, self.filters, self.kernel, self.pool,
                self.dense_units, round(self.lr, 12), self.optimizer)

    def summary(self) -> str:
        return (f"{self.n_conv_blocks}x[conv{self.kernel}x{self.kernel}/{self.filters}"
                f"{'+pool' if self.pool else ''}]-dense{self.dense_units}-{self.optimizer}@{self.lr:.2e}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SearchSpace:
    """Discrete choices per dimension; ``lr`` is a log-spaced grid."""

    n_conv_blocks: tuple[int, ...] = (1, 2, 3, 4)
    filters: tuple[int, ...] = (8, 16, 32)
    kernel: tuple[int, ...] = (3, 5)
    pool: tuple[bool, ...] = (False, True)
    dense_units: tuple[int, ...] = (32, 64, 128)
    lr: tuple[float, ...] = DEFAULT_LRS
    optimizer: tuple[str, ...] = ("adam", "sgd")
    sgd_momentum: float = 0.9

    ORDINAL = ("n_conv_blocks", "filters", "kernel", "pool", "dense_units")

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpace":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def size(self) -> int:
        return math.prod(len(getattr(self, d)) for d in self.ORDINAL + ("lr", "optimizer"))

    def contains(self, g: Genome) -> bool:
        return all(getattr(g, d) in getattr(self, d) for d in self.ORDINAL + ("optimizer",)) \
            and any(math.isclose(g.lr, v, rel_tol=1e-9) for v in self.lr)

    def sample(self, rng: np.random.Generator) -> Genome:
        pick = {d: getattr(self, d)[int(rng.integers(len(getattr(self, d))))]
                for d in self.ORDINAL + ("lr", "optimizer")}
        return Genome(**pick)

    def all_genomes(self) -> Iterable[Genome]:
        dims = self.ORDINAL + ("lr", "optimizer")
        for combo in itertools.product(*(getattr(self, d) for d in dims)):
            yield Genome(**dict(zip(dims, combo)))

    @property
    def encoded_length(self) -> int:
        return len(self.ORDINAL) + 1 + len(self.optimizer)


def _unit(index: int, n: int) -> float:
    return index / (n - 1) if n > 1 else 0.0


def encode(genome: Genome, space: SearchSpace) -> np.ndarray:
    """Ordinal choices at equally spaced points of [0, 1], lr on a log scale, optimizer one-hot."""
    v = [_unit(getattr(space, d).index(getattr(genome, d)), len(getattr(space, d))) for d in space.ORDINAL]
    lo, hi = min(space.lr), max(space.lr)
    v.append(math.log(genome.lr / lo) / math.log(hi / lo) if hi > lo else 0.0)
    v.extend(1.0 if genome.optimizer == o else 0.0 for o in space.optimizer)
    return np.array(v)


def build_model_config(genome: Genome, input_shape: Sequence[int], n_classes: int, init_seed: int,
                       space: SearchSpace | None = None) -> ModelConfig:
    """Conv blocks (conv -> relu [-> 2x2 pool]) then dense -> relu -> dense(K) -> softmax.

    Pooling is skipped once a spatial dimension drops below 2, so every
    genome shape-checks for any input.
    """
    _, h, w = input_shape
    layers = []
    for _ in range(genome.n_conv_blocks):
        layers += [Conv2D(genome.filters, genome.kernel), ReLU()]
        if genome.pool and h >= 2 and w >= 2:
            layers.append(MaxPool(2))
            h, w = h // 2, w // 2
    layers += [Flatten(), Dense(genome.dense_units), ReLU(), Dense(n_classes), Softmax()]
    if genome.optimizer == "adam":
        opt = AdamSpec(lr=genome.lr)
    else:
        opt = SGDSpec(lr=genome.lr, momentum=space.sgd_momentum if space else 0.9)
    return ModelConfig(layers, opt, init_seed)


def morph(genome: Genome, op: str, space: SearchSpace) -> tuple[Genome, bool]:
    """Apply one network-morphism edit; returns ``(genome, applied)``."""
    if op == "widen_filters":
        dim = "filters"
    elif op == "widen_dense":
        dim = "dense_units"
    elif op == "deepen_block":
        # blocks share settings, so the new block copies the last one
        dim = "n_conv_blocks"
    else:
        raise ValueError(f"unknown morph op {op!r}")
    choices = getattr(space, dim)
    i = choices.index(getattr(genome, dim))
    if i + 1 >= len(choices):
        return genome, False
    return Genome(**{**genome.to_dict(), dim: choices[i + 1]}), True


def morphs(genome: Genome, space: SearchSpace) -> list[Genome]:
    out = []
    for op in MORPH_OPS:
        g, ok = morph(genome, op, space)
        if ok:
            out.append(g)
    return out


# -- surrogate ---------------------------------------------------------------

LENGTH_SCALES = (0.1, 0.25, 0.5, 1.0, 2.0, 4.0)
SIGNAL_SCALES = (0.25, 1.0, 4.0)


def _cholesky(K: np.ndarray, jitter: float = 1e-8, max_jitter: float = 1e-4) -> np.ndarray:
    j = jitter
    eye = np.eye(len(K))
    while j <= max_jitter:
        try:
            return np.linalg.cholesky(K + j * eye)
        except np.linalg.LinAlgError:
            j *= 10
    raise NumericError("covariance is not positive definite even with jitter "
                       f"{max_jitter:g}")


def rbf_kernel(A: np.ndarray, B: np.ndarray, length_scales: np.ndarray, signal_var: float) -> np.ndarray:
    d = (A[:, None, :] - B[None, :, :]) / length_scales
    return signal_var * np.exp(-0.5 * np.sum(d * d, axis=-1))


@dataclass
class Surrogate:
    X: np.ndarray
    y: np.ndarray
    length_scales: np.ndarray
    signal_var: float
    noise_var: float
    mean: float
    chol: np.ndarray
    alpha: np.ndarray
    log_likelihood: float

    def predict(self, Xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        Xs = np.atleast_2d(Xs)
        Ks = rbf_kernel(Xs, self.X, self.length_scales, self.signal_var)
        mu = self.mean + Ks @ self.alpha
        v = solve_triangular(self.chol, Ks.T, lower=True)
        var = np.maximum(self.signal_var - np.sum(v * v, axis=0), 0.0)
        return mu, var


def _gp_fit(X, y, ls, sv, noise_var, mean) -> Surrogate:
    K = rbf_kernel(X, X, ls, sv) + noise_var * np.eye(len(X))
    L = _cholesky(K)
    r = y - mean
    alpha = cho_solve((L, True), r)
    ll = -0.5 * r @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * len(X) * math.log(2 * math.pi)
    return Surrogate(X, y, ls, sv, noise_var, mean, L, alpha, float(ll))


def fit_gp(X: np.ndarray, y: np.ndarray, noise_var: float = 1e-4) -> Surrogate:
    """Fit length scales and signal variance by grid search on the marginal likelihood.

    A shared length scale and signal variance are chosen first, then each
    dimension's length scale is refined once over the same grid.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(X) == 0:
        raise ValueError("need at least one observation")
    mean = float(y.mean())
    base = max(float(y.var()), 1e-4)
    best = None
    for ls, s in itertools.product(LENGTH_SCALES, SIGNAL_SCALES):
        gp = _gp_fit(X, y, np.full(X.shape[1], ls), s * base, noise_var, mean)
        if best is None or gp.log_likelihood > best.log_likelihood:
            best = gp
    for d in range(X.shape[1]):
        for ls in LENGTH_SCALES:
            scales = best.length_scales.copy()
            scales[d] = ls
            gp = _gp_fit(X, y, scales, best.signal_var, noise_var, mean)
            if gp.log_likelihood > best.log_likelihood:
                best = gp
    return best


@dataclass
class Trial:
    trial: int
    genome: Genome
    seed: int
    epochs: int
    best_val_f1: float
    status: str = "ok"
    val_curve: list[float] = field(default_factory=list)

    def log_record(self) -> dict:
        return {"trial": self.trial, "genome": self.genome.to_dict(), "seed": self.seed,
                "epochs": self.epochs, "best_val_f1": self.best_val_f1, "status": self.status}


def surrogate_fit(trials: Sequence[Trial], space: SearchSpace, noise_var: float = 1e-4) -> Surrogate:
    if not any(t.status == "ok" for t in trials):
        raise SearchFailed("surrogate needs at least one successful trial")
    X = np.stack([encode(t.genome, space) for t in trials])
    y = np.array([t.best_val_f1 if t.status == "ok" else 0.0 for t in trials])
    return fit_gp(X, y, noise_var)


def ei_closed_form(mu, sigma, best: float) -> np.ndarray:
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    gap = mu - best
    out = np.maximum(gap, 0.0)
    pos = sigma > 0
    # a subnormal sigma sends z to +-inf, where the limits below are exact
    with np.errstate(over="ignore"):
        z = np.where(pos, gap / np.where(pos, sigma, 1.0), 0.0)
        pdf = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    ei = gap * ndtr(z) + sigma * pdf
    return np.where(pos, np.maximum(ei, 0.0), out)


def expected_improvement(surrogate: Surrogate, genomes: Genome | Sequence[Genome], best_f1: float,
                         space: SearchSpace) -> np.ndarray | float:
    single = isinstance(genomes, Genome)
    items = [genomes] if single else list(genomes)
    mu, var = surrogate.predict(np.stack([encode(g, space) for g in items]))
    ei = ei_closed_form(mu, np.sqrt(var), best_f1)
    return float(ei[0]) if single else ei


def incumbent(trials: Sequence[Trial]) -> Trial:
    best = trials[0]
    for t in trials[1:]:
        if t.best_val_f1 > best.best_val_f1:
            best = t
    return best


def propose(surrogate: Surrogate, trials: Sequence[Trial], rng: np.random.Generator,
            space: SearchSpace, n_random: int = 64, count: int = 1) -> list[Genome]:
    """Top-``count`` unevaluated candidates by expected improvement.

    The pool is ``n_random`` uniform draws followed by the incumbent's
    morphs; ties go to the earlier candidate.
    """
    seen = {t.genome.key() for t in trials}
    pool: list[Genome] = []
    keys = set()
    for g in [space.sample(rng) for _ in range(n_random)] + morphs(incumbent(trials).genome, space):
        k = g.key()
        if k not in seen and k not in keys:
            pool.append(g)
            keys.add(k)
    if not pool:
        raise SearchComplete("every candidate in the pool has been evaluated")
    best = max(t.best_val_f1 for t in trials)
    ei = expected_improvement(surrogate, pool, best, space)
    order = sorted(range(len(pool)), key=lambda i: (-ei[i], i))
    return [pool[i] for i in order[:count]]


# -- search loop -------------------------------------------------------------

def derived_seed(base: int, *parts) -> int:
    blob = json.dumps([base, *parts]).encode()
    return int.from_bytes(hashlib.blake2b(blob, digest_size=4).digest(), "little")


def trial_seed(base: int, genome: Genome) -> int:
    return derived_seed(base, list(genome.key()))


@dataclass
class Outcome:
    best_val_f1: float
    epochs: int
    status: str
    val_curve: list[float] = field(default_factory=list)
    epochs_counted: int = 0


class TrainEvaluator:
    """Trains a genome with early stopping on validation macro-F1."""

    def __init__(self, data: Splits, n_classes: int, space: SearchSpace, epochs: int = 20,
                 batch_size: int = 32, patience: int | None = 5, class_weights=None, dtype: str = "float32"):
        self.data = data
        self.n_classes = n_classes
        self.space = space
        self.epochs = epochs
        self.batch_size = batch_size
        self.patience = patience
        self.class_weights = class_weights
        self.dtype = dtype

    def train_config(self, seed: int, epochs: int | None = None, patience: int | None = None) -> TrainConfig:
        return TrainConfig(epochs=epochs or self.epochs, batch_size=self.batch_size,
                           class_weights=self.class_weights, seed=seed,
                           early_stop_patience=patience, dtype=self.dtype)

    def model_config(self, genome: Genome, seed: int) -> ModelConfig:
        return build_model_config(genome, self.data.input_shape, self.n_classes, seed, self.space)

    def __call__(self, genome: Genome, seed: int) -> Outcome:
        counted = 0

        def tick(epoch, run):
            nonlocal counted
            counted += 1

        try:
            run = train(self.model_config(genome, seed), self.data,
                        self.train_config(seed, patience=self.patience), on_epoch=tick)
        except TrainingDiverged as exc:
            return Outcome(0.0, exc.epoch, "diverged", [], counted)
        return Outcome(run.best_val_f1, run.epochs_trained, "ok", list(run.val_macro_f1), counted)

    def retrain(self, genome: Genome, seed: int, epochs: int | None = None) -> TrainingRun:
        return train(self.model_config(genome, seed), self.data, self.train_config(seed, epochs))


class CachedEvaluator:
    """Memoizes outcomes by (genome, seed); trial seeds depend only on the genome."""

    def __init__(self, inner: Callable[[Genome, int], Outcome]):
        self.inner = inner
        self.cache: dict[tuple, Outcome] = {}
        self.misses = 0

    def __call__(self, genome: Genome, seed: int) -> Outcome:
        key = (genome.key(), seed)
        out = self.cache.get(key)
        if out is None:
            self.misses += 1
            out = self.cache[key] = self.inner(genome, seed)
        return out


@dataclass
class SearchResult:
    trials: list[Trial]
    incumbent_history: list[float]
    retrain_runs: list[TrainingRun] = field(default_factory=list)
    retrain_seeds: list[int] = field(default_factory=list)
    epochs_consumed: int = 0
    complete: bool = False

    @property
    def best(self) -> Trial:
        return incumbent(self.trials)

    def ranked(self) -> list[Trial]:
        return sorted(self.trials, key=lambda t: (-t.best_val_f1, t.trial))

    def search_log(self) -> str:
        return "".join(json.dumps(t.log_record(), sort_keys=True) + "\n" for t in self.trials)

    def incumbent_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "best_val_f1_so_far"])
        for i, v in enumerate(self.incumbent_history, 1):
            w.writerow([i, repr(v)])
        return buf.getvalue()


def _evaluate_batch(evaluator, items, jobs: int) -> list[Outcome]:
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
            return list(pool.map(evaluator, *zip(*items)))
    return [evaluator(g, s) for g, s in items]


def _sample_new(space: SearchSpace, rng: np.random.Generator, seen: set, tries: int = 1000) -> Genome:
    for _ in range(tries):
        g = space.sample(rng)
        if g.key() not in seen:
            return g
    remaining = [g for g in space.all_genomes() if g.key() not in seen] if space.size() <= 100_000 else []
    if not remaining:
        raise SearchComplete("search space exhausted")
    return remaining[int(rng.integers(len(remaining)))]


def run_search(space: SearchSpace, evaluator: Callable[[Genome, int], Outcome], budget: int,
               seed: int = 0, train_seed: int | None = None, k_init: int = 5,
               strategy: str = "bo", batch: int = 1, jobs: int = 1, n_random: int = 64,
               on_trial: Callable[[Trial], None] | None = None) -> SearchResult:
    """Run ``budget`` trials: ``k_init`` uniform draws, then EI proposals (or random for ``strategy="random"``).

    ``seed`` drives candidate sampling; trial training seeds derive from
    ``train_seed`` (default ``seed``) and the genome, so paired searches that
    share ``train_seed`` score a genome identically.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if strategy not in ("bo", "random"):
        raise ValueError(f"unknown strategy {strategy!r}")
    train_seed = seed if train_seed is None else train_seed
    rng = np.random.default_rng(seed)
    trials: list[Trial] = []
    history: list[float] = []
    seen: set = set()
    consumed = 0
    complete = False

    while len(trials) < budget:
        want = min(batch, budget - len(trials))
        warm = strategy == "bo" and len(trials) < k_init
        try:
            if strategy == "random" or warm or not any(t.status == "ok" for t in trials):
                n = min(want, k_init - len(trials)) if warm else want
                genomes = []
                for _ in range(n):
                    genomes.append(_sample_new(space, rng, seen | {x.key() for x in genomes}))
            else:
                surrogate = surrogate_fit(trials, space)
                genomes = propose(surrogate, trials, rng, space, n_random, want)
        except SearchComplete:
            complete = True
            break
        items = [(g, trial_seed(train_seed, g)) for g in genomes]
        # refits consume results in trial-index order regardless of scheduling
        for (g, s), out in zip(items, _evaluate_batch(evaluator, items, jobs)):
            t = Trial(len(trials) + 1, g, s, out.epochs, out.best_val_f1, out.status, out.val_curve)
            trials.append(t)
            seen.add(g.key())
            consumed += out.epochs_counted
            history.append(max(history[-1], t.best_val_f1) if history else t.best_val_f1)
            log.info("trial %d %s -> %.4f (%s, %d epochs)", t.trial, g.summary(), t.best_val_f1, t.status, t.epochs)
            if on_trial is not None:
                on_trial(t)

    if not any(t.status == "ok" for t in trials):
        raise SearchFailed(f"all {len(trials)} trials diverged")
    return SearchResult(trials, history, epochs_consumed=consumed, complete=complete)


def retrain_best(result: SearchResult, evaluator: TrainEvaluator, repeats: int, seed: int,
                 epochs: int | None = None, jobs: int = 1) -> SearchResult:
    """Retrain the incumbent ``repeats`` times from fresh initializations."""
    genome = result.best.genome
    seeds = [derived_seed(seed, "retrain", i) for i in range(repeats)]
    if jobs > 1 and repeats > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, repeats)) as pool:
            runs = list(pool.map(evaluator.retrain, [genome] * repeats, seeds, [epochs] * repeats))
    else:
        runs = [evaluator.retrain(genome, s, epochs) for s in seeds]
    result.retrain_runs = runs
    result.retrain_seeds = seeds
    return result


@dataclass(frozen=True)
class LifespanRow:
    trial: int
    genome: str
    epochs: int
    best_val_f1: float
    status: str


def lifespan_report(trials: Sequence[Trial]) -> list[LifespanRow]:
    return [LifespanRow(t.trial, t.genome.summary(), t.epochs, t.best_val_f1, t.status)
            for t in sorted(trials, key=lambda t: t.trial)]


def lifespan_csv(rows: Sequence[LifespanRow], note: str | None = None) -> str:
    buf = io.StringIO()
    if note:
        buf.write(f"# {note}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trial", "genome", "epochs_trained", "best_val_f1", "status"])
    for r in rows:
        w.writerow([r.trial, r.genome, r.epochs, f"{r.best_val_f1:.6f}", r.status])
    return buf.getvalue()
