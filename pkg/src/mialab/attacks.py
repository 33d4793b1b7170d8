"""Membership-inference attacks against a black-box target oracle.

Implements likelihood-ratio scoring from Gaussian fits of scaled shadow
confidences (online ratio and offline tail variants), the adversarial
canary query optimizer with L-infinity and domain projection, a
random-noise control query, multi-query ensembling, and the end-to-end
attack runner that produces a ScoreTable.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import DOMAIN_HIGH, DOMAIN_LOW, Dataset
from .errors import FingerprintMismatchError, FormatError, IsolationError
from .farm import ShadowFarm, TargetOracle, in_out_partition, model_confidence_batch
from .nn import (
    IN_MINIMIZE,
    OUT_MAXIMIZE,
    OBJECTIVE_KINDS,
    ObjectiveKind,
    adam_step,
    init_adam,
    input_gradient,
    scale_confidence,
)
from .rng import TAG_ALT_LABEL, substream

SIGMA_FLOOR = 1e-4
CONF_CLAMP = 1e-6

METHODS = ("lira", "canary", "random_noise")
MODES = ("online", "offline")

_SQRT2 = math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GaussianStats:
    mu: float
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


def scale_confidence_batch(f: np.ndarray, delta: float = CONF_CLAMP) -> np.ndarray:
    """Vectorized scaled log score log(f'/(1-f')) with clamped f."""
    if not 0.0 < delta < 0.5:
        raise ValueError("clamp delta must lie in (0, 0.5)")
    f = np.clip(np.asarray(f, dtype=np.float64), delta, 1.0 - delta)
    return np.log(f / (1.0 - f))


def fit_gaussian(scores, sigma_floor: float = SIGMA_FLOOR) -> GaussianStats:
    """Mean and population standard deviation, floored to keep scores finite."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("cannot fit a Gaussian to zero scores")
    return GaussianStats(float(np.mean(scores)), max(float(np.std(scores)), sigma_floor))


def _log_pdf(x: float, stats: GaussianStats) -> float:
    z = (x - stats.mu) / stats.sigma
    return -0.5 * z * z - math.log(stats.sigma) - _LOG_SQRT_2PI


def lira_online_log_ratio(conf_t: float, in_stats: GaussianStats, out_stats: GaussianStats) -> float:
    return _log_pdf(conf_t, in_stats) - _log_pdf(conf_t, out_stats)


def lira_online_score(conf_t: float, in_stats: GaussianStats, out_stats: GaussianStats) -> float:
    """Likelihood ratio pdf_in(conf) / pdf_out(conf), via log space.

    Ratios beyond float range saturate to inf/0; use the log ratio when
    thresholding, the ranking is identical.
    """
    log_ratio = lira_online_log_ratio(conf_t, in_stats, out_stats)
    if log_ratio > 709.0:
        return math.inf
    if log_ratio < -745.0:
        return 0.0
    return math.exp(log_ratio)


def lira_offline_score(conf_t: float, out_stats: GaussianStats, density: bool = False) -> float:
    """One-sided score against the OUT distribution.

    Default is the Gaussian tail form 1 - Pr[Z > conf], i.e. the normal
    CDF at (conf - mu)/sigma, nondecreasing in conf. The erfc form keeps
    the left tail resolvable down to z around -38 instead of rounding to
    zero at -8. density=True swaps in the two-sided alternative
    1 - pdf(conf).
    """
    if density:
        return 1.0 - math.exp(_log_pdf(conf_t, out_stats))
    z = (conf_t - out_stats.mu) / out_stats.sigma
    return 0.5 * math.erfc(-z / _SQRT2)


def ensemble_scores(scores) -> float:
    """Arithmetic mean of per-query scores; permutation invariant."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("need at least one query score")
    return float(np.mean(scores))


@dataclass(frozen=True)
class CanaryConfig:
    """Hyperparameters of the adversarial query optimizer.

    epsilon is the L-infinity perturbation bound in input-domain units
    (the domain is the unit hypercube). init_noise_scale defaults to
    epsilon/4 when the target_plus_noise init is selected.
    """

    epsilon: float
    steps: int = 40
    shadow_batch: int = 2
    lr: float = 0.05
    objective: str = "raw_logit"
    init: str = "target_plus_noise"
    init_noise_scale: float | None = None
    num_queries: int = 10
    mode: str = "online"
    offline_density: bool = False
    sigma_floor: float = SIGMA_FLOOR
    conf_clamp: float = CONF_CLAMP

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.steps < 0 or self.shadow_batch < 1 or self.num_queries < 1:
            raise ValueError("steps, shadow_batch and num_queries must be positive")
        if self.objective not in OBJECTIVE_KINDS:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.init not in ("target", "target_plus_noise"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def noise_scale(self) -> float:
        if self.init_noise_scale is not None:
            return self.init_noise_scale
        return self.epsilon / 4.0

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "steps": self.steps,
            "shadow_batch": self.shadow_batch,
            "lr": self.lr,
            "objective": self.objective,
            "init": self.init,
            "init_noise_scale": self.init_noise_scale,
            "num_queries": self.num_queries,
            "mode": self.mode,
            "offline_density": self.offline_density,
        }

    @staticmethod
    def from_dict(d: dict) -> "CanaryConfig":
        return CanaryConfig(
            epsilon=float(d["epsilon"]),
            steps=int(d.get("steps", 40)),
            shadow_batch=int(d.get("shadow_batch", 2)),
            lr=float(d.get("lr", 0.05)),
            objective=str(d.get("objective", "raw_logit")),
            init=str(d.get("init", "target_plus_noise")),
            init_noise_scale=d.get("init_noise_scale"),
            num_queries=int(d.get("num_queries", 10)),
            mode=str(d.get("mode", "online")),
            offline_density=bool(d.get("offline_density", False)),
        )


def _project(x_star: np.ndarray, delta: np.ndarray, epsilon: float, lo: float, hi: float):
    """Joint projection onto the epsilon ball and the input domain.

    Returns (delta, x) where x is the exactly domain-clamped query point;
    |x - x_star| can exceed epsilon only by float-addition rounding.
    """
    delta = np.clip(delta, -epsilon, epsilon)
    x = np.clip(x_star + delta, lo, hi)
    delta = x - x_star
    if np.max(np.abs(delta), initial=0.0) > epsilon + 1e-9 * max(1.0, epsilon):
        raise AssertionError("projection left the epsilon ball")
    if x.min(initial=lo) < lo or x.max(initial=hi) > hi:
        raise AssertionError("projection left the input domain")
    return delta, x


def optimize_canary(
    x_star: np.ndarray,
    y_star: int,
    s_in,
    s_out,
    config: CanaryConfig,
    rng: np.random.Generator,
    alt_label: int | None = None,
    bounds: tuple[float, float] = (DOMAIN_LOW, DOMAIN_HIGH),
) -> np.ndarray:
    """Adversarial query near x_star separating IN from OUT shadow models.

    Each iteration reshuffles the model order, averages the input
    gradient of the out-side objective over shadow_batch OUT models (plus
    the in-side objective over shadow_batch IN models when online), takes
    one Adam step on the perturbation, and projects back onto the
    epsilon ball intersected with the input domain. Offline mode never
    evaluates an IN model.
    """
    x_star = np.asarray(x_star, dtype=np.float64)
    lo, hi = bounds
    offline = config.mode == "offline"
    b = config.shadow_batch
    if len(s_out) < b:
        raise ValueError(f"shadow batch {b} exceeds {len(s_out)} available OUT models")
    if not offline and (s_in is None or len(s_in) < b):
        raise ValueError(
            f"shadow batch {b} exceeds {0 if s_in is None else len(s_in)} available IN models"
        )
    out_obj = ObjectiveKind(config.objective, OUT_MAXIMIZE, alt_label, config.conf_clamp)
    in_obj = ObjectiveKind(config.objective, IN_MINIMIZE, alt_label, config.conf_clamp)

    delta = np.zeros_like(x_star)
    if config.init == "target_plus_noise" and config.noise_scale > 0:
        delta = rng.normal(0.0, config.noise_scale, size=x_star.shape)
    delta, x = _project(x_star, delta, config.epsilon, lo, hi)
    adam = init_adam(x_star.shape)
    for _ in range(config.steps):
        out_pick = rng.permutation(len(s_out))[:b]
        grad = np.zeros_like(x_star)
        for i in out_pick:
            m = s_out[i]
            grad += input_gradient(m.arch, m.params, x, y_star, out_obj)
        grad /= b
        if not offline:
            in_pick = rng.permutation(len(s_in))[:b]
            g_in = np.zeros_like(x_star)
            for i in in_pick:
                m = s_in[i]
                g_in += input_gradient(m.arch, m.params, x, y_star, in_obj)
            grad += g_in / b
        delta, adam = adam_step(adam, delta, grad, config.lr)
        delta, x = _project(x_star, delta, config.epsilon, lo, hi)
    return x


def random_noise_query(
    x_star: np.ndarray,
    epsilon: float,
    rng: np.random.Generator,
    bounds: tuple[float, float] = (DOMAIN_LOW, DOMAIN_HIGH),
) -> np.ndarray:
    """Uniform perturbation in the epsilon ball, clamped to the domain."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    x_star = np.asarray(x_star, dtype=np.float64)
    noise = rng.uniform(-epsilon, epsilon, size=x_star.shape) if epsilon > 0 else 0.0
    return np.clip(x_star + noise, bounds[0], bounds[1])


@dataclass
class ScoreRow:
    target_index: int
    is_member: bool
    query_scores: list[float]
    aggregated: float


@dataclass
class ScoreTable:
    """Per-target attack scores with ground-truth membership labels."""

    rows: list[ScoreRow]
    method: str = field(default="", compare=False)
    mode: str = field(default="", compare=False)
    in_model_accesses: int | None = field(default=None, compare=False)

    def scores(self) -> np.ndarray:
        return np.array([r.aggregated for r in self.rows])

    def labels(self) -> np.ndarray:
        return np.array([r.is_member for r in self.rows], dtype=bool)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["target_index", "is_member", "query_id", "score", "aggregated_score"])
            for row in self.rows:
                for q, s in enumerate(row.query_scores):
                    writer.writerow(
                        [row.target_index, int(row.is_member), q, repr(s), repr(row.aggregated)]
                    )

    @staticmethod
    def read_csv(path) -> "ScoreTable":
        path = Path(path)
        rows: dict[int, ScoreRow] = {}
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["target_index", "is_member", "query_id", "score", "aggregated_score"]:
                raise FormatError(f"{path}: unexpected score table header {header}")
            for lineno, rec in enumerate(reader, start=2):
                if len(rec) != 5:
                    raise FormatError(f"{path}: line {lineno}: expected 5 fields, got {len(rec)}")
                try:
                    idx, member = int(rec[0]), bool(int(rec[1]))
                    score, agg = float(rec[3]), float(rec[4])
                except ValueError as exc:
                    raise FormatError(f"{path}: line {lineno}: {exc}") from exc
                if idx not in rows:
                    rows[idx] = ScoreRow(idx, member, [], agg)
                rows[idx].query_scores.append(score)
        return ScoreTable(list(rows.values()))


def _draw_alt_label(seed: int, target_index: int, y: int, num_classes: int) -> int:
    draw = int(substream(seed, TAG_ALT_LABEL, target_index).integers(num_classes - 1))
    return draw + (draw >= y)


def run_attack(
    dataset: Dataset,
    oracle: TargetOracle,
    farm: ShadowFarm,
    targets,
    method: str,
    mode: str,
    config: CanaryConfig,
    seed: int,
) -> ScoreTable:
    """Score every target against the oracle; per-query streams are
    derived from (seed, target index, query index).

    targets is a sequence of (dataset index, is_member) pairs whose
    membership bits come from the held-out target model's own split mask.
    Offline mode never touches IN shadow models; this is enforced with
    access counters on every target.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if dataset.fingerprint() != farm.fingerprint:
        raise FingerprintMismatchError(
            f"dataset fingerprint {dataset.fingerprint():#x} does not match "
            f"farm fingerprint {farm.fingerprint:#x}"
        )
    if oracle.fingerprint != farm.fingerprint:
        raise FingerprintMismatchError(
            f"oracle fingerprint {oracle.fingerprint:#x} does not match "
            f"farm fingerprint {farm.fingerprint:#x}"
        )
    cfg = replace(config, mode=mode)
    offline = mode == "offline"
    random_label = cfg.objective.endswith("random_label")
    in_access_total = 0

    rows = []
    for target_index, is_member in targets:
        x_star, y_star = dataset.point(target_index)
        s_in, s_out = in_out_partition(farm, target_index)
        if not s_out:
            raise ValueError(f"target {target_index} has no OUT shadow models")
        if not offline and not s_in:
            raise ValueError(f"target {target_index} has no IN shadow models")
        in_before = [rec.access_count for rec in s_in]
        alt = _draw_alt_label(seed, target_index, y_star, farm.arch.num_classes) if random_label else None

        queries = []
        for q in range(cfg.num_queries):
            rng = substream(seed, target_index, q)
            if method == "lira":
                queries.append(x_star)
            elif method == "random_noise":
                queries.append(random_noise_query(x_star, cfg.epsilon, rng))
            else:
                queries.append(
                    optimize_canary(
                        x_star, y_star, None if offline else s_in, s_out, cfg, rng, alt_label=alt
                    )
                )
        query_batch = np.stack(queries)
        # one batched forward per shadow model across all query points
        out_phi = scale_confidence_batch(
            np.stack([model_confidence_batch(m, query_batch, y_star) for m in s_out]),
            cfg.conf_clamp,
        )
        in_phi = None
        if not offline:
            in_phi = scale_confidence_batch(
                np.stack([model_confidence_batch(m, query_batch, y_star) for m in s_in]),
                cfg.conf_clamp,
            )
        query_scores = []
        for q in range(cfg.num_queries):
            conf_t = scale_confidence(oracle.confidence(queries[q], y_star), cfg.conf_clamp)
            out_stats = fit_gaussian(out_phi[:, q], cfg.sigma_floor)
            if offline:
                score = lira_offline_score(conf_t, out_stats, density=cfg.offline_density)
            else:
                score = lira_online_score(conf_t, fit_gaussian(in_phi[:, q], cfg.sigma_floor), out_stats)
            query_scores.append(score)

        if offline:
            touched = sum(rec.access_count - b for rec, b in zip(s_in, in_before))
            in_access_total += touched
            if touched:
                raise IsolationError(
                    f"offline attack touched IN models of target {target_index} "
                    f"({touched} accesses)"
                )
        rows.append(ScoreRow(int(target_index), bool(is_member), query_scores,
                             ensemble_scores(query_scores)))
    return ScoreTable(rows, method=method, mode=mode,
                      in_model_accesses=in_access_total if offline else None)
