"""Stochastic dual coordinate ascent over clique marginals.

One update: sample a block, call the marginalization oracle once to get the
conjugate marginals at the current weights, move the block's stored marginals
toward them by a step length found with an exact one-dimensional search, and
apply the matching sparse correction to the weight vector.  The oracle call
also yields the block's duality gap for free, which drives both the adaptive
sampler and the stopping rule.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import LineSearchError, TrainingError
from .inference import LOG_FLOOR, MarginalSet, chain_entropy_tables, chain_kl_tables
from .metrics import MetricsRecord, token_error_rate
from .objective import (
    CrfProblem,
    DualState,
    OracleCounter,
    WeightVector,
    batch_evaluate,
    conjugate_weights,
)
from .sampling import SamplerConfig, radius_table, sample_block

LINE_SEARCH_MODES = ("newton_safeguarded", "fixed_step", "grid_oracle")
INITIAL_GAP_ESTIMATE = 100.0


@dataclass(frozen=True)
class LineSearchConfig:
    """Safeguarded Newton settings for the step-length search on [0, 1]."""

    sub_precision: float = 1e-3
    max_newton_iters: int = 50
    min_newton_iters: int = 0
    mode: str = "newton_safeguarded"
    grid_points: int = 100_001  # grid_oracle mode only (testing)

    def __post_init__(self):
        if not 0.0 < self.sub_precision <= 0.5:
            raise ValueError("sub_precision must lie in (0, 0.5]")
        if self.max_newton_iters < 1:
            raise ValueError("max_newton_iters must be at least 1")
        if self.mode not in LINE_SEARCH_MODES:
            raise ValueError(f"unknown line-search mode {self.mode!r}")


@dataclass(frozen=True)
class StepRecord:
    """Telemetry for one parameter update."""

    index: int
    gamma: float
    dual_improvement: float
    block_gap: float
    oracle_calls: int
    newton_iters: int


@dataclass(frozen=True)
class PrimalDirection:
    """Sparse weight-space direction induced by a block's marginal move."""

    indices: np.ndarray
    values: np.ndarray
    dot_w: float
    squared_norm: float


@dataclass(frozen=True)
class TrainConfig:
    lam: float | None = None  # None means 1/n, resolved against the dataset
    epsilon: float = 1e-2
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    line_search: LineSearchConfig = field(default_factory=LineSearchConfig)
    stop_gap: float = 1e-6
    max_epochs: float = 200.0
    seed: int = 0
    metrics_every: float = 1.0  # epochs between lightweight metric rows
    true_gap_every: float = 5.0  # epochs between full-evaluation rows
    weight_refresh_epochs: float = 5.0
    drift_tolerance: float = 1e-6


def init_dual(problem: CrfProblem, epsilon: float) -> DualState:
    """Interior starting point: blend point masses on gold with uniform.

    Each block starts at ``epsilon * uniform + (1 - epsilon) * point_mass``,
    which is consistent (both endpoints are) and strictly positive, so the
    entropy derivatives the line search needs stay finite.  Gap estimates
    start large so every block is visited before adaptivity kicks in.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    k = problem.indexer.n_labels
    marginals = []
    for cs in problem.compiled:
        uniform = MarginalSet.uniform(cs.length, k)
        point = MarginalSet.point_mass(cs.gold_labels, k)
        marginals.append(uniform.convex_combination(point, 1.0 - epsilon))
    weights = conjugate_weights(problem, marginals)
    return DualState(
        marginals=marginals,
        weights=weights,
        lam=problem.lam,
        gap_estimates=np.full(problem.n, INITIAL_GAP_ESTIMATE),
    )


def ascent_direction(
    problem: CrfProblem, state: DualState, i: int, counter: OracleCounter | None = None
):
    """One oracle call: conjugate marginals, block direction, and block gap.

    Records the freshly computed gap into the state's estimate table, as the
    stored value for block i.
    """
    mu = state.marginals[i]
    nu, _ = problem.oracle_at(state.weights.array, i, counter)
    gap = max(
        chain_kl_tables(mu, mu.log_unary, mu.log_pairwise, nu.log_unary, nu.log_pairwise),
        0.0,
    )
    delta_unary = nu.unary - mu.unary
    delta_pairwise = nu.pairwise - mu.pairwise
    state.gap_estimates[i] = gap
    return delta_unary, delta_pairwise, nu, gap


def primal_direction(
    problem: CrfProblem,
    i: int,
    delta_unary: np.ndarray,
    delta_pairwise: np.ndarray,
    weights: WeightVector,
) -> PrimalDirection:
    """Weight-space image of a block move, with its line-search scalars.

    Supported only on coordinates the sequence touches; moving the block by
    ``gamma * delta`` moves the conjugate weights by ``gamma * direction``.
    """
    cs = problem.compiled[i]
    values = cs.expected_feature_values(delta_unary, delta_pairwise)
    values /= -(problem.lam * problem.n)
    return PrimalDirection(
        indices=cs.feature_indices,
        values=values,
        dot_w=weights.dot_sparse(cs.feature_indices, values),
        squared_norm=float(values @ values),
    )


def fixed_step(max_radius: float, lam: float, n: int) -> float:
    """Step size with a per-step ascent guarantee: 1 / (1 + R / (lam n))."""
    return 1.0 / (1.0 + max_radius / (lam * n))


def _derivatives(mu_u, mu_p, d_u, d_p, length, gamma, lam_n, dot_wv, v_sq):
    """First and second derivative of the block dual along the segment.

    Also returns the curvature magnitude used to scale the concavity check.
    Entries where both the marginal and the direction vanish contribute
    nothing (the floored log is multiplied by an exact zero).
    """
    quad_curv = lam_n * v_sq
    if length == 1:
        a = np.maximum(mu_u[0] + gamma * d_u[0], LOG_FLOOR)
        d1 = -float(d_u[0] @ np.log(a))
        neg_curv = float((d_u[0] * d_u[0] / a).sum())
        pos_curv = 0.0
    else:
        a = np.maximum(mu_p + gamma * d_p, LOG_FLOOR)
        d1 = -float((d_p * np.log(a)).sum())
        neg_curv = float((d_p * d_p / a).sum())
        pos_curv = 0.0
        if length > 2:
            a = np.maximum(mu_u[1:-1] + gamma * d_u[1:-1], LOG_FLOOR)
            d1 += float((d_u[1:-1] * np.log(a)).sum())
            pos_curv = float((d_u[1:-1] * d_u[1:-1] / a).sum())
    d1 -= lam_n * (dot_wv + gamma * v_sq)
    d2 = -neg_curv + pos_curv - quad_curv
    scale = neg_curv + quad_curv + 1.0
    return d1, d2, scale


def _entropy_on_grid(mu_flat, d_flat, gammas):
    a = mu_flat[None, :] + gammas[:, None] * d_flat[None, :]
    return -(a * np.log(np.maximum(a, LOG_FLOOR))).sum(axis=1)


def _grid_argmax(mu, d_u, d_p, lam_n, dot_wv, v_sq, points):
    """Dense scan of the line-search objective; test oracle for the search."""
    gammas = np.linspace(0.0, 1.0, points)
    best_gamma, best_value = 0.0, -np.inf
    chunk = 20_000
    for start in range(0, points, chunk):
        g = gammas[start : start + chunk]
        if mu.length == 1:
            h = _entropy_on_grid(mu.unary[0], d_u[0], g)
        else:
            h = _entropy_on_grid(mu.pairwise.ravel(), d_p.ravel(), g)
            if mu.length > 2:
                h -= _entropy_on_grid(mu.unary[1:-1].ravel(), d_u[1:-1].ravel(), g)
        value = h - lam_n * (g * dot_wv + 0.5 * g * g * v_sq)
        j = int(np.argmax(value))
        if value[j] > best_value:
            best_value, best_gamma = float(value[j]), float(g[j])
    return best_gamma


def line_search(
    mu: MarginalSet,
    delta_unary: np.ndarray,
    delta_pairwise: np.ndarray,
    direction: PrimalDirection,
    lam: float,
    n: int,
    cfg: LineSearchConfig,
) -> tuple[float, int]:
    """Maximize the block dual over step lengths in [0, 1].

    The objective is the block entropy at the moved marginals minus the
    quadratic weight term; it is concave in the step length, so its first
    derivative is decreasing and safeguarded Newton on that derivative keeps
    a sign-change bracket, falling back to bisection whenever a Newton step
    leaves it.  Stops once the last step is smaller than ``sub_precision``
    (after at least ``min_newton_iters`` iterations), or at a boundary when
    the endpoint derivative signs already decide it.

    Returns the step length and the number of Newton iterations used.
    """
    lam_n = lam * n
    args = (mu.unary, mu.pairwise, delta_unary, delta_pairwise, mu.length)
    scalars = (lam_n, direction.dot_w, direction.squared_norm)

    if cfg.mode == "grid_oracle":
        gamma = _grid_argmax(
            mu, delta_unary, delta_pairwise, lam_n, direction.dot_w,
            direction.squared_norm, cfg.grid_points,
        )
        return gamma, 0

    d1_zero, _, _ = _derivatives(*args, 0.0, *scalars)
    if d1_zero <= 0.0:
        return 0.0, 0
    d1_one, _, _ = _derivatives(*args, 1.0, *scalars)
    # The far endpoint is optimal whenever the derivative there is zero up to
    # accumulation noise (e.g. pure conjugation with no quadratic term).
    if d1_one >= -1e-11 * (abs(d1_zero) + 1.0):
        return 1.0, 0

    lo, hi = 0.0, 1.0
    x = 0.5
    iters = 0
    while iters < cfg.max_newton_iters:
        iters += 1
        d1, d2, scale = _derivatives(*args, x, *scalars)
        if d2 > 1e-8 * scale:
            raise LineSearchError(
                f"positive curvature {d2:.3e} at step {x:.6f}; "
                "the block dual should be concave"
            )
        if d1 > 0.0:
            lo = x
        elif d1 < 0.0:
            hi = x
        else:
            return x, iters
        if d2 < 0.0:
            candidate = x - d1 / d2
            if not lo < candidate < hi:
                candidate = 0.5 * (lo + hi)
        else:
            candidate = 0.5 * (lo + hi)
        step = abs(candidate - x)
        if step < cfg.sub_precision and iters >= cfg.min_newton_iters:
            # A small step alone can mislead when Newton crawls down an
            # entropy cliff after an overshoot; accept only once the root is
            # certified within 2 * sub_precision of the evaluated point,
            # either by the bracket or by a sign change at a probe.
            if hi - lo <= 2.0 * cfg.sub_precision:
                return candidate, iters
            probe = x + 2.0 * cfg.sub_precision if d1 > 0.0 else x - 2.0 * cfg.sub_precision
            if not lo < probe < hi:
                return candidate, iters
            d1_probe, _, _ = _derivatives(*args, probe, *scalars)
            if (d1 > 0.0) != (d1_probe > 0.0) or d1_probe == 0.0:
                return candidate, iters
            x = probe  # root is further out; resume from the probe
            continue
        x = candidate
    return x, iters


@dataclass
class TrainResult:
    state: DualState
    problem: CrfProblem
    metrics: list[MetricsRecord]
    converged: bool
    primal: float
    dual: float
    true_gap: float
    total_newton_iters: int = 0

    @property
    def mean_newton_iters(self) -> float:
        return self.total_newton_iters / max(self.state.updates, 1)


def _update_block_tables(mu: MarginalSet, gamma, delta_unary, delta_pairwise) -> None:
    mu.unary += gamma * delta_unary
    np.log(np.maximum(mu.unary, LOG_FLOOR), out=mu.log_unary)
    if mu.length > 1:
        mu.pairwise += gamma * delta_pairwise
        np.log(np.maximum(mu.pairwise, LOG_FLOOR), out=mu.log_pairwise)


def sdca_train(
    dataset,
    config: TrainConfig,
    test_dataset=None,
    metrics_sink=None,
    step_callback=None,
) -> TrainResult:
    """Run dual coordinate ascent until the duality gap falls below target.

    The stopping rule watches the mean of the stored per-block gap estimates;
    when it crosses the threshold, one full batch evaluation confirms against
    the true gap (and refreshes the estimates), and training continues if the
    true value is still above target.  Training oracle calls are exactly one
    per parameter update; evaluation passes are tallied separately.

    ``metrics_sink`` is called with each MetricsRecord as it is produced;
    ``step_callback`` with each StepRecord.
    """
    lam = config.lam if config.lam is not None else 1.0 / len(dataset.sequences)
    problem = CrfProblem(dataset, lam)
    n = problem.n
    state = init_dual(problem, config.epsilon)
    rng = np.random.default_rng(config.seed)
    train_counter = OracleCounter()
    eval_counter = OracleCounter()

    needs_radius = config.line_search.mode == "fixed_step" or config.sampler.scheme in (
        "importance",
        "gap_importance",
    )
    smoothness = None
    step_size = None
    if needs_radius:
        radii = radius_table(problem.indexer, dataset.sequences, lam)
        smoothness = radii.smoothness
        step_size = fixed_step(radii.max, lam, n)

    block_entropy = np.array(
        [
            chain_entropy_tables(m.unary, m.pairwise, m.log_unary, m.log_pairwise)
            for m in state.marginals
        ]
    )
    entropy_sum = float(block_entropy.sum())
    gap_sum = float(state.gap_estimates.sum())
    dual_value = -0.5 * lam * state.weights.squared_norm + entropy_sum / n

    max_updates = int(round(config.max_epochs * n))
    light_interval = max(1, int(round(config.metrics_every * n)))
    full_interval = max(1, int(round(config.true_gap_every * n)))
    refresh_interval = max(1, int(round(config.weight_refresh_epochs * n)))

    metrics: list[MetricsRecord] = []
    start_time = time.perf_counter()
    total_newton = 0
    lam_n = lam * n

    def emit(primal=None, dual=None, true_gap=None) -> None:
        test_error = None
        if primal is not None and test_dataset is not None:
            test_error = token_error_rate(
                problem.indexer, test_dataset.sequences, state.weights.array
            )
        row = MetricsRecord(
            update_count=state.updates,
            oracle_calls=train_counter.calls,
            epoch_equivalent=state.updates / n,
            primal=primal,
            dual=dual if dual is not None else dual_value,
            gap_estimate=gap_sum / n,
            true_gap=true_gap,
            test_error=test_error,
            elapsed_s=time.perf_counter() - start_time,
        )
        metrics.append(row)
        if metrics_sink is not None:
            metrics_sink(row)

    def full_evaluation(update_estimates: bool):
        nonlocal dual_value, gap_sum
        primal, dual, gaps = batch_evaluate(
            problem, state, eval_counter, update_gap_estimates=update_estimates
        )
        dual_value = dual
        if update_estimates:
            gap_sum = float(state.gap_estimates.sum())
        state.oracle_calls = train_counter.calls
        state.eval_oracle_calls = eval_counter.calls
        emit(primal=primal, dual=dual, true_gap=primal - dual)
        return primal, dual, gaps

    primal, dual, _ = full_evaluation(update_estimates=False)
    converged = False

    while True:
        if gap_sum / n <= config.stop_gap:
            primal, dual, gaps = full_evaluation(update_estimates=True)
            if float(gaps.mean()) <= config.stop_gap:
                converged = True
                break
            continue
        if state.updates >= max_updates:
            primal, dual, _ = full_evaluation(update_estimates=False)
            break

        i, _ = sample_block(state.gap_estimates, config.sampler, rng, smoothness)
        previous_estimate = state.gap_estimates[i]
        mu = state.marginals[i]

        delta_u, delta_p, _, gap_i = ascent_direction(problem, state, i, train_counter)
        direction = primal_direction(problem, i, delta_u, delta_p, state.weights)

        if config.line_search.mode == "fixed_step":
            gamma, iters = step_size, 0
        else:
            gamma, iters = line_search(
                mu, delta_u, delta_p, direction, lam, n, config.line_search
            )
        total_newton += iters

        h_before = block_entropy[i]
        if gamma != 0.0:
            _update_block_tables(mu, gamma, delta_u, delta_p)
            h_after = chain_entropy_tables(mu.unary, mu.pairwise, mu.log_unary, mu.log_pairwise)
            state.weights.add_scaled_sparse(
                gamma,
                direction.indices,
                direction.values,
                dot=direction.dot_w,
                squared=direction.squared_norm,
            )
        else:
            h_after = h_before
        dual_delta = (
            (h_after - h_before)
            - lam_n * (gamma * direction.dot_w + 0.5 * gamma * gamma * direction.squared_norm)
        ) / n

        if dual_delta < -1e-12 * max(1.0, abs(dual_value)):
            raise TrainingError(
                f"dual decreased by {dual_delta:.3e} at update {state.updates} "
                f"(block {i}, step {gamma:.6f}); the step should never descend"
            )

        block_entropy[i] = h_after
        entropy_sum += h_after - h_before
        gap_sum += gap_i - previous_estimate
        dual_value += dual_delta
        state.updates += 1
        state.oracle_calls = train_counter.calls

        if step_callback is not None:
            step_callback(
                StepRecord(
                    index=i,
                    gamma=gamma,
                    dual_improvement=dual_delta,
                    block_gap=gap_i,
                    oracle_calls=1,
                    newton_iters=iters,
                )
            )

        if state.updates % refresh_interval == 0:
            exact = conjugate_weights(problem, state.marginals)
            denom = max(1.0, float(np.linalg.norm(exact.array)))
            drift = float(np.linalg.norm(state.weights.array - exact.array)) / denom
            if drift > config.drift_tolerance:
                raise TrainingError(
                    f"incremental weights drifted {drift:.3e} from their "
                    f"conjugate recomputation at update {state.updates}"
                )
            state.weights = exact
            entropy_sum = float(block_entropy.sum())
            dual_value = -0.5 * lam * exact.squared_norm + entropy_sum / n

        if state.updates % full_interval == 0:
            primal, dual, _ = full_evaluation(update_estimates=False)
        elif state.updates % light_interval == 0:
            emit()

    state.oracle_calls = train_counter.calls
    state.eval_oracle_calls = eval_counter.calls
    return TrainResult(
        state=state,
        problem=problem,
        metrics=metrics,
        converged=converged,
        primal=primal,
        dual=dual,
        true_gap=primal - dual,
        total_newton_iters=total_newton,
    )
