# ============================================================
# pso.py
#
# Gradient-free particle swarm optimization with early exit and
# n-random-restarts.
#
# Features:
#   - per-dimension box bounds; positions are clamped after every move
#   - inertia decays linearly from `inertia` to `inertia_final`
#   - velocity clamp as a fraction of each dimension's bound width
#   - a stop predicate checked after every evaluation (early exit)
#   - up to `restarts` independent runs while the predicate never fires
#   - optional concurrent evaluation of one iteration's particles
#
# One iteration evaluates every particle once; the first iteration
# evaluates the random initial positions, so a restart that never exits
# early costs exactly max_iters * swarm_size evaluations.
# ============================================================

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from .errors import ConfigError, OptimizationAborted

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SwarmConfig:
    """
    Swarm hyperparameters.

    Attributes:
        swarm_size (int): Particles per swarm.
        inertia (float): Initial inertia weight w.
        inertia_final (float): Inertia weight reached at the last iteration.
        cognitive (float): Attraction to the particle's own best (c1).
        social (float): Attraction to the swarm's best (c2).
        max_iters (int): Iterations per restart.
        velocity_clamp (float): Max |velocity| as a fraction of bound width.
        restarts (int): Total runs allowed (n); n - 1 re-initializations.
        seed (int): Seed for all random draws.
        workers (int): Threads used to evaluate one iteration; 1 = sequential.
    """
    swarm_size: int = 40
    inertia: float = 0.7
    inertia_final: float = 0.3
    cognitive: float = 1.5
    social: float = 1.5
    max_iters: int = 100
    velocity_clamp: float = 0.25
    restarts: int = 5
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        for name in ("swarm_size", "max_iters", "restarts", "workers"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        for name in ("inertia", "inertia_final", "cognitive", "social", "velocity_clamp"):
            if not float(getattr(self, name)) > 0:
                raise ConfigError(f"{name} must be positive")

    @staticmethod
    def from_dict(data: dict) -> "SwarmConfig":
        known = {f.name: f.type for f in fields(SwarmConfig)}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigError(f"unknown swarm settings: {sorted(unknown)}")
        values = {}
        for key, value in data.items():
            values[key] = int(value) if key in ("swarm_size", "max_iters", "restarts", "seed", "workers") else float(value)
        return SwarmConfig(**values)


@dataclass
class Particle:
    """One candidate solution with its velocity and personal best."""
    position: np.ndarray
    velocity: np.ndarray
    best_position: np.ndarray
    best_cost: float = math.inf


@dataclass
class SwarmState:
    """
    Positions, velocities and bests of the whole swarm, stored row-wise.

    Attributes:
        positions (np.ndarray): (S, D) current positions.
        velocities (np.ndarray): (S, D) current velocities.
        best_positions (np.ndarray): (S, D) personal bests.
        best_costs (np.ndarray): (S,) personal best costs.
        global_best_position (np.ndarray): (D,) swarm best.
        global_best_cost (float): Swarm best cost.
    """
    positions: np.ndarray
    velocities: np.ndarray
    best_positions: np.ndarray
    best_costs: np.ndarray
    global_best_position: np.ndarray
    global_best_cost: float = math.inf

    @staticmethod
    def initialize(rng: np.random.Generator, lo: np.ndarray, hi: np.ndarray, size: int) -> "SwarmState":
        width = hi - lo
        positions = lo + rng.uniform(size=(size, lo.size)) * width
        velocities = rng.uniform(-0.1, 0.1, size=(size, lo.size)) * width
        return SwarmState(
            positions=positions,
            velocities=velocities,
            best_positions=positions.copy(),
            best_costs=np.full(size, math.inf),
            global_best_position=positions[0].copy(),
        )

    def particle(self, index: int) -> Particle:
        """A copy of one particle's row."""
        return Particle(self.positions[index].copy(), self.velocities[index].copy(),
                        self.best_positions[index].copy(), float(self.best_costs[index]))

    def record(self, index: int, cost: float) -> bool:
        """Update the bests with an evaluated cost. Returns True if the global best improved."""
        if cost < self.best_costs[index]:
            self.best_costs[index] = cost
            self.best_positions[index] = self.positions[index]
        if cost < self.global_best_cost:
            self.global_best_cost = cost
            self.global_best_position = self.positions[index].copy()
            return True
        return False


@dataclass(frozen=True)
class OptimizationResult:
    """
    Outcome of :func:`minimize`.

    On early exit ``best_position``/``best_cost`` describe the position that
    satisfied the stop predicate; otherwise the lowest-cost position seen
    over all restarts (first found on ties).
    """
    best_position: np.ndarray
    best_cost: float
    iterations_used: int
    evaluations_used: int
    early_exit: bool
    restart_index: int
    restarts_used: int = 1
    trace: tuple = field(default_factory=tuple, repr=False)


def _as_bounds(bounds) -> tuple:
    b = np.asarray(bounds, dtype=np.float64)
    if b.ndim != 2 or b.shape[1] != 2:
        raise ValueError(f"bounds must have shape (D, 2), got {b.shape}")
    lo, hi = b[:, 0].copy(), b[:, 1].copy()
    if not (np.all(np.isfinite(b)) and np.all(lo < hi)):
        raise ValueError("bounds must be finite with lo < hi in every dimension")
    return lo, hi


def _safe_cost(value) -> float:
    value = float(value)
    return math.inf if math.isnan(value) else value


class _Run:
    """Bookkeeping shared by all restarts of one minimize call."""

    def __init__(self, cost, stop, cfg: SwarmConfig):
        self.cost = cost
        self.stop = stop
        self.cfg = cfg
        self.evaluations = 0
        self.trace = []
        self.best_cost = math.inf
        self.best_position = None
        self.best_restart = 0
        self.parallel = cfg.workers > 1 and not getattr(cost, "serial", False)

    def partial(self, iterations: int, restart: int) -> OptimizationResult:
        position = self.best_position if self.best_position is not None else np.empty(0)
        return OptimizationResult(position, self.best_cost, iterations, self.evaluations,
                                  False, restart, restart + 1, tuple(self.trace))

    def evaluate(self, pool, state: SwarmState, iteration: int, restart: int):
        """Evaluate every particle; returns the index that satisfied stop, or None."""
        positions = [state.positions[i].copy() for i in range(state.positions.shape[0])]
        try:
            if self.parallel:
                costs = list(pool.map(self.cost, positions))
        except Exception as exc:
            raise OptimizationAborted(self.partial(iteration, restart)) from exc

        for i, position in enumerate(positions):
            try:
                value = _safe_cost(costs[i] if self.parallel else self.cost(position))
                self.evaluations += 1
                state.record(i, value)
                if value < self.best_cost or self.best_position is None:
                    self.best_cost = value
                    self.best_position = position.copy()
                    self.best_restart = restart
                self.trace.append((value, self.best_cost))
                if self.stop is not None and self.stop(position):
                    return i, value
            except OptimizationAborted:
                raise
            except Exception as exc:
                raise OptimizationAborted(self.partial(iteration, restart)) from exc
        return None


def minimize(cost: Callable, stop: Callable | None, bounds, cfg: SwarmConfig | None = None,
             on_restart: Callable | None = None, on_iteration: Callable | None = None) -> OptimizationResult:
    """
    Minimize ``cost`` over a box with particle swarm optimization.

    Args:
        cost (Callable): position (np.ndarray) -> float. A callable with a truthy
            ``serial`` attribute is never evaluated concurrently.
        stop (Callable | None): position -> bool; True ends the search at once.
        bounds: (D, 2) array-like of per-dimension [lo, hi].
        cfg (SwarmConfig): Hyperparameters; defaults when None.
        on_restart (Callable | None): Called with the restart index before each run.
        on_iteration (Callable | None): Called as ``on_iteration(restart, iteration, state)``
            with the :class:`SwarmState` after every iteration that did not stop.

    Returns:
        OptimizationResult: See the class docstring.

    Raises:
        OptimizationAborted: If ``cost`` or ``stop`` raised; carries the partial result.
    """
    cfg = cfg or SwarmConfig()
    lo, hi = _as_bounds(bounds)
    width = hi - lo
    vmax = cfg.velocity_clamp * width
    rng = np.random.default_rng(int(cfg.seed) & 0xFFFFFFFFFFFFFFFF)
    run = _Run(cost, stop, cfg)

    pool = ThreadPoolExecutor(max_workers=cfg.workers) if run.parallel else None
    try:
        for restart in range(cfg.restarts):
            if on_restart is not None:
                on_restart(restart)
            state = SwarmState.initialize(rng, lo, hi, cfg.swarm_size)
            for iteration in range(1, cfg.max_iters + 1):
                if iteration > 1:
                    frac = (iteration - 2) / max(1, cfg.max_iters - 2)
                    w = cfg.inertia - (cfg.inertia - cfg.inertia_final) * frac
                    r1 = rng.uniform(size=state.positions.shape)
                    r2 = rng.uniform(size=state.positions.shape)
                    state.velocities = (
                        w * state.velocities
                        + cfg.cognitive * r1 * (state.best_positions - state.positions)
                        + cfg.social * r2 * (state.global_best_position - state.positions)
                    )
                    np.clip(state.velocities, -vmax, vmax, out=state.velocities)
                    state.positions = np.clip(state.positions + state.velocities, lo, hi)

                hit = run.evaluate(pool, state, iteration, restart)
                if hit is not None:
                    index, value = hit
                    logger.info("stop condition met: restart %d, iteration %d, %d evaluations",
                                restart, iteration, run.evaluations)
                    return OptimizationResult(state.positions[index].copy(), value, iteration,
                                              run.evaluations, True, restart, restart + 1,
                                              tuple(run.trace))
                logger.debug("restart %d iteration %d: swarm best %.6g", restart, iteration,
                             state.global_best_cost)
                if on_iteration is not None:
                    on_iteration(restart, iteration, state)
            logger.info("restart %d finished without meeting the stop condition (best %.6g)",
                        restart, state.global_best_cost)
    finally:
        if pool is not None:
            pool.shutdown(wait=True)

    return OptimizationResult(run.best_position, run.best_cost, cfg.max_iters,
                              run.evaluations, False, run.best_restart, cfg.restarts,
                              tuple(run.trace))


def random_search(cost: Callable, bounds, evaluations: int, seed: int = 0) -> tuple:
    """
    Uniform random search baseline.

    Returns:
        tuple: (best_position, best_cost) over ``evaluations`` uniform draws.
    """
    lo, hi = _as_bounds(bounds)
    rng = np.random.default_rng(seed)
    best_position, best_cost = None, math.inf
    for _ in range(evaluations):
        position = lo + rng.uniform(size=lo.size) * (hi - lo)
        value = _safe_cost(cost(position))
        if value < best_cost:
            best_position, best_cost = position, value
    return best_position, best_cost
