# ============================================================
# attack.py
#
# Black-box shadow attacks driven by particle swarm optimization.
#
# Features:
#   - digital attack: minimize the true-class confidence of the shadowed
#     image, stop at the first misclassification
#   - robust attack: the same over the plan-mean confidence of a frozen
#     transform plan, one fresh plan per restart
#   - stabilization: maximize the plan-mean confidence of the induced wrong
#     label while the plan-mean argmax stays on it
#   - per-attack query counting and optional query budgets
#   - a mapping hook so occluder coordinates can be optimized instead of
#     image vertices (scheduled attacks)
#
# A position is the flat vertex vector [m1, n1, ..., ms, ns] unless a
# mapping says otherwise. Vertices may leave the frame by 20% per side.
# ============================================================

import json
import logging
import math
import threading
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .classifier import Classifier, CountingView
from .errors import ConfigError, OptimizationAborted, QueryBudgetExhausted
from .geometry import Polygon, RegionMask
from .pso import SwarmConfig, minimize
from .shadow import K_MEAN, ShadowSpec, apply_shadow
from .transforms import PLAN_SAMPLES, TransformPlan, TransformRanges, expected_confidences, sample_plan

logger = logging.getLogger(__name__)

MEASURE = "measure"
BOUNDS_MARGIN = 0.2


@dataclass(frozen=True)
class AttackConfig:
    """
    Attack settings.

    Attributes:
        k (float | str): Shadow coefficient, or ``"measure"`` until it has been measured.
        edges (int): Vertices of the shadow polygon (s >= 3).
        swarm (SwarmConfig): Optimizer settings.
        use_eot (bool): Optimize the plan-mean confidence instead of the plain one.
        stabilize (bool): Run stabilization after a successful attack.
        query_budget (int | None): Cap on classifier queries per attack call. An
            evaluation that would cross it is not issued, so under EOT the attack
            stops at the largest multiple of the plan length that fits.
        transform (TransformRanges): Ranges of the sampled transform plans.
        plan_samples (int): Random chains per plan besides the identity.
    """
    k: float | str = K_MEAN
    edges: int = 3
    swarm: SwarmConfig = field(default_factory=SwarmConfig)
    use_eot: bool = False
    stabilize: bool = False
    query_budget: int | None = None
    transform: TransformRanges = field(default_factory=TransformRanges)
    plan_samples: int = PLAN_SAMPLES

    def __post_init__(self):
        if self.k != MEASURE:
            k = float(self.k)
            if not 0.0 < k <= 1.0:
                raise ConfigError(f"k must lie in (0, 1] or be '{MEASURE}', got {self.k}")
            object.__setattr__(self, "k", k)
        if int(self.edges) < 3:
            raise ConfigError(f"a shadow polygon needs at least 3 edges, got {self.edges}")
        if self.query_budget is not None and int(self.query_budget) <= 0:
            raise ConfigError("query_budget must be positive when set")
        if int(self.plan_samples) < 0:
            raise ConfigError("plan_samples must be non-negative")

    @property
    def needs_k(self) -> bool:
        return self.k == MEASURE

    def with_k(self, k: float) -> "AttackConfig":
        return replace(self, k=k)

    @staticmethod
    def from_dict(data: dict) -> "AttackConfig":
        """
        Build from a flat or nested dict; ``swarm`` and ``transform`` entries
        may be dicts of their own settings.
        """
        values = dict(data)
        if isinstance(values.get("swarm"), dict):
            values["swarm"] = SwarmConfig.from_dict(values["swarm"])
        if isinstance(values.get("transform"), dict):
            values["transform"] = TransformRanges.from_dict(values["transform"])
        unknown = set(values) - {"k", "edges", "swarm", "use_eot", "stabilize", "query_budget",
                                 "transform", "plan_samples"}
        if unknown:
            raise ConfigError(f"unknown attack settings: {sorted(unknown)}")
        if "k" in values and values["k"] != MEASURE:
            values["k"] = float(values["k"])
        for key in ("edges", "plan_samples"):
            if key in values:
                values[key] = int(values[key])
        if values.get("query_budget") is not None:
            values["query_budget"] = int(values["query_budget"])
        return AttackConfig(**values)


@dataclass
class AttackReport:
    """
    Outcome of one attack call.

    Attributes:
        success (bool): The shadow changes the (plan-mean) prediction; for
            stabilization, a feasible spec was found.
        original_label (int | None): Label the attack moved away from.
        adversarial_label (int | None): Label at the reported spec.
        spec (ShadowSpec | None): Winning spec on success, best spec seen otherwise.
        queries_used (int): Classifier queries issued by this call; never above
            ``query_budget``, and below it when the next evaluation would not fit.
        restarts_used (int): Optimizer runs started.
        mode (str): ``digital``, ``robust``, ``stabilize`` or ``scheduled``.
        stabilized_confidence (float | None): Plan-mean confidence of the wrong label.
        stabilization (AttackReport | None): The follow-up stabilization, if run.
        trace (tuple): Per evaluation (cost, best cost so far).
        shortcut (bool): The clean input was already misclassified.
        note (str): Why the attack ended when it did not succeed normally.
    """
    success: bool
    original_label: int | None
    adversarial_label: int | None
    spec: ShadowSpec | None
    queries_used: int
    restarts_used: int = 0
    mode: str = "digital"
    edges: int = 3
    plan_seed: int | None = None
    evaluations: int = 0
    iterations: int = 0
    stabilized_confidence: float | None = None
    stabilization: "AttackReport | None" = None
    trace: tuple = field(default_factory=tuple, repr=False)
    shortcut: bool = False
    note: str = ""

    def __post_init__(self):
        if (self.success and self.mode != "stabilize" and self.original_label is not None
                and self.adversarial_label == self.original_label):
            raise ValueError("a successful attack must change the label")

    @property
    def k(self) -> float | None:
        return None if self.spec is None else self.spec.k

    @property
    def final_spec(self) -> ShadowSpec | None:
        """The stabilized spec when stabilization succeeded, the attack spec otherwise."""
        if self.stabilization is not None and self.stabilization.success:
            return self.stabilization.spec
        return self.spec

    @property
    def total_queries(self) -> int:
        extra = self.stabilization.queries_used if self.stabilization is not None else 0
        return self.queries_used + extra

    def adversarial_image(self, x: np.ndarray) -> np.ndarray:
        spec = self.final_spec
        return x.copy() if spec is None else apply_shadow(x, spec)

    def to_dict(self) -> dict:
        def finite(v):
            return float(v) if math.isfinite(v) else None

        return {
            "success": self.success,
            "mode": self.mode,
            "original_label": self.original_label,
            "adversarial_label": self.adversarial_label,
            "spec": None if self.spec is None else self.spec.to_dict(),
            "k": self.k,
            "edges": self.edges,
            "plan_seed": self.plan_seed,
            "queries_used": self.queries_used,
            "restarts_used": self.restarts_used,
            "evaluations": self.evaluations,
            "iterations": self.iterations,
            "shortcut": self.shortcut,
            "note": self.note,
            "stabilized_confidence": self.stabilized_confidence,
            "stabilization": None if self.stabilization is None else self.stabilization.to_dict(),
            "trace": [[finite(c), finite(b)] for c, b in self.trace],
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)


def vertex_bounds(shape: tuple, edges: int, margin: float = BOUNDS_MARGIN) -> np.ndarray:
    """(2s, 2) box for flat vertex vectors: the frame grown by ``margin`` per side."""
    height, width = shape[:2]
    per_vertex = [[-margin * width, (1 + margin) * width], [-margin * height, (1 + margin) * height]]
    return np.array(per_vertex * edges, dtype=np.float64)


class _Evaluator:
    """
    Turns positions into confidence vectors through one counting view.

    Results are memoized per restart so the cost and the stop predicate of the
    same position share one set of queries.
    """

    def __init__(self, x, mask, k, view: CountingView, to_polygon, budget):
        self.x = x
        self.mask = mask
        self.k = k
        self.view = view
        self.to_polygon = to_polygon
        self.budget = budget
        self.plan = None
        self._reserved = 0
        self._cache = {}
        self._labels = {}
        self._lock = threading.Lock()

    def reset(self, plan: TransformPlan | None):
        with self._lock:
            self.plan = plan
            self._cache.clear()

    def _reserve(self, n: int):
        with self._lock:
            if self.budget is not None and self._reserved + n > self.budget:
                raise QueryBudgetExhausted(self._reserved, self.budget)
            self._reserved += n

    def spec(self, position) -> ShadowSpec:
        return ShadowSpec(self.to_polygon(position), self.k, self.mask)

    def query(self, image_for) -> np.ndarray:
        """Query ``image_for(k_multiplier)`` once, or over the whole plan."""
        if self.plan is None:
            self._reserve(1)
            return np.asarray(self.view.predict(image_for(1.0)), dtype=np.float64)
        self._reserve(len(self.plan))
        return expected_confidences(image_for, self.plan, self.view)

    def confidences(self, position: np.ndarray) -> np.ndarray:
        key = np.asarray(position, dtype=np.float64).tobytes()
        with self._lock:
            cached = self._cache.get(key)
        if cached is not None:
            return cached
        spec = self.spec(position)

        def image_for(multiplier: float) -> np.ndarray:
            if multiplier == 1.0:
                return apply_shadow(self.x, spec)
            return apply_shadow(self.x, replace(spec, k=min(1.0, spec.k * multiplier)))

        conf = self.query(image_for)
        with self._lock:
            self._cache[key] = conf
            self._labels[key] = int(np.argmax(conf))
        return conf

    def label(self, position) -> int | None:
        """Label recorded for an evaluated position, under the plan in force at the time."""
        with self._lock:
            return self._labels.get(np.asarray(position, dtype=np.float64).tobytes())


def _plan_for(cfg: AttackConfig, plan_seed: int, restart: int, fixed: TransformPlan | None):
    if fixed is not None:
        return fixed
    return sample_plan(plan_seed + restart, cfg.transform, cfg.plan_samples)


def _numeric_k(cfg: AttackConfig) -> float:
    if cfg.needs_k:
        raise ConfigError("k is still 'measure'; measure it first and pass cfg.with_k(k)")
    return float(cfg.k)


def _aborted(exc: OptimizationAborted):
    """Return the partial result for budget exhaustion, re-raise anything else."""
    if isinstance(exc.__cause__, QueryBudgetExhausted):
        return exc.result
    raise exc.__cause__ from None


def attack_mapped(x: np.ndarray, y_true: int, mask: RegionMask, classifier: Classifier,
                  cfg: AttackConfig, to_polygon: Callable, bounds, plan_seed: int = 0,
                  plan: TransformPlan | None = None, mode: str | None = None) -> AttackReport:
    """
    The attack core over an arbitrary position space.

    Args:
        x (np.ndarray): Clean H x W x 3 uint8 image.
        y_true (int): True label.
        mask (RegionMask): Target mask.
        classifier (Classifier): The black box.
        cfg (AttackConfig): Settings; ``cfg.k`` must be numeric.
        to_polygon (Callable): position -> Polygon in image pixels.
        bounds: (D, 2) box of the position space.
        plan_seed (int): Plan of restart r is sampled from ``plan_seed + r``.
        plan (TransformPlan | None): Fixed plan for every restart (EOT only).
        mode (str | None): Label stored in the report.

    Returns:
        AttackReport: See the class docstring.
    """
    k = _numeric_k(cfg)
    view = CountingView(classifier)
    evaluator = _Evaluator(x, mask, k, view, to_polygon, cfg.query_budget)
    mode = mode or ("robust" if cfg.use_eot else "digital")
    common = dict(mode=mode, edges=cfg.edges, plan_seed=plan_seed if cfg.use_eot else None)

    if cfg.use_eot:
        evaluator.reset(_plan_for(cfg, plan_seed, 0, plan))
    try:
        clean = evaluator.query(lambda _: x)
    except QueryBudgetExhausted as exc:
        return AttackReport(False, y_true, None, None, view.queries, note=str(exc), **common)
    clean_label = int(np.argmax(clean))
    if clean_label != y_true:
        logger.info("input already classified as %d (true %d); nothing to attack", clean_label, y_true)
        return AttackReport(True, y_true, clean_label, None, view.queries, shortcut=True,
                            note="already misclassified", **common)

    def on_restart(restart: int):
        evaluator.reset(_plan_for(cfg, plan_seed, restart, plan) if cfg.use_eot else None)

    def cost(position):
        return float(evaluator.confidences(position)[y_true])

    def stop(position):
        return int(np.argmax(evaluator.confidences(position))) != y_true

    cost.serial = not view.concurrent_safe
    note = ""
    logger.info("%s attack: k=%.3f, %d edges, swarm %d x %d, %d restarts", mode, k, cfg.edges,
                cfg.swarm.swarm_size, cfg.swarm.max_iters, cfg.swarm.restarts)
    try:
        result = minimize(cost, stop, bounds, cfg.swarm, on_restart=on_restart)
    except OptimizationAborted as exc:
        result = _aborted(exc)
        note = str(exc.__cause__)
        logger.warning("%s attack stopped: %s", mode, note)

    spec = None
    label = None
    if result.best_position is not None and result.best_position.size:
        spec = evaluator.spec(result.best_position)
        label = evaluator.label(result.best_position)
    success = bool(result.early_exit)
    logger.info("%s attack %s after %d queries", mode, "succeeded" if success else "failed", view.queries)
    return AttackReport(success, y_true, label, spec, view.queries, result.restarts_used,
                        evaluations=result.evaluations_used, iterations=result.iterations_used,
                        trace=result.trace, note=note, **common)


def attack_digital(x: np.ndarray, y_true: int, mask: RegionMask, classifier: Classifier,
                   cfg: AttackConfig) -> AttackReport:
    """
    Search for a polygon shadow that changes the prediction of ``x``.

    Minimizes f_true(apply_shadow(x, ShadowSpec(V, k, mask))) over the
    vertex vector V and stops as soon as the argmax differs from ``y_true``.
    An input that is already misclassified is reported as an immediate
    success after a single query.
    """
    cfg = replace(cfg, use_eot=False)
    return attack_mapped(x, y_true, mask, classifier, cfg, Polygon.from_flat,
                         vertex_bounds(x.shape, cfg.edges))


def attack_robust(x: np.ndarray, y_true: int, mask: RegionMask, classifier: Classifier,
                  cfg: AttackConfig, plan_seed: int = 0, plan: TransformPlan | None = None) -> AttackReport:
    """
    The digital attack over the plan-mean confidence of a transform plan.

    Every cost evaluation queries the classifier once per plan item (11 by
    default). Restart r samples its plan from ``plan_seed + r`` unless a
    fixed ``plan`` is given.
    """
    cfg = replace(cfg, use_eot=True)
    return attack_mapped(x, y_true, mask, classifier, cfg, Polygon.from_flat,
                         vertex_bounds(x.shape, cfg.edges), plan_seed=plan_seed, plan=plan)


def stabilize(x: np.ndarray, mask: RegionMask, classifier: Classifier, wrong_label: int,
              cfg: AttackConfig, plan_seed: int = 0, plan: TransformPlan | None = None,
              original_label: int | None = None, to_polygon: Callable | None = None,
              bounds=None) -> AttackReport:
    """
    Maximize the plan-mean confidence of ``wrong_label`` while it stays the plan-mean argmax.

    Candidates whose plan-mean argmax is not ``wrong_label`` cost +inf. The
    optimizer runs one restart at a time and stops after the first restart
    that found a feasible candidate; restart r uses the plan of
    ``plan_seed + r`` (or ``plan``) and the swarm seed ``cfg.swarm.seed + r``.

    Returns:
        AttackReport: ``success`` is True when a feasible spec was found;
        ``stabilized_confidence`` holds its plan-mean confidence.
    """
    k = _numeric_k(cfg)
    to_polygon = to_polygon or Polygon.from_flat
    bounds = vertex_bounds(x.shape, cfg.edges) if bounds is None else bounds
    view = CountingView(classifier)
    evaluator = _Evaluator(x, mask, k, view, to_polygon, cfg.query_budget)

    def cost(position):
        conf = evaluator.confidences(position)
        if int(np.argmax(conf)) != wrong_label:
            return math.inf
        return -float(conf[wrong_label])

    cost.serial = not view.concurrent_safe
    best_position, best_cost = None, math.inf
    trace, evaluations, iterations, restarts, note = [], 0, 0, 0, ""
    logger.info("stabilizing label %d", wrong_label)
    for restart in range(cfg.swarm.restarts):
        evaluator.reset(_plan_for(cfg, plan_seed, restart, plan))
        run_cfg = replace(cfg.swarm, restarts=1, seed=cfg.swarm.seed + restart)
        restarts += 1
        try:
            result = minimize(cost, None, bounds, run_cfg)
        except OptimizationAborted as exc:
            result = _aborted(exc)
            note = str(exc.__cause__)
        trace.extend(result.trace)
        evaluations += result.evaluations_used
        iterations = result.iterations_used
        if result.best_cost < best_cost:
            best_position, best_cost = result.best_position, result.best_cost
        if note or math.isfinite(best_cost):
            break

    feasible = math.isfinite(best_cost)
    spec = evaluator.spec(best_position) if feasible else None
    confidence = -best_cost if feasible else None
    if not feasible:
        note = note or f"label {wrong_label} was never the plan-mean argmax"
        logger.warning("stabilization failed: %s", note)
    else:
        logger.info("stabilized label %d at confidence %.4f", wrong_label, confidence)
    return AttackReport(feasible, original_label, wrong_label if feasible else None, spec,
                        view.queries, restarts, mode="stabilize", edges=cfg.edges,
                        plan_seed=plan_seed, evaluations=evaluations, iterations=iterations,
                        stabilized_confidence=confidence, trace=tuple(trace), note=note)


def run_attack(x: np.ndarray, y_true: int, mask: RegionMask, classifier: Classifier,
               cfg: AttackConfig, plan_seed: int = 0) -> AttackReport:
    """
    Digital or robust attack according to ``cfg.use_eot``, followed by
    stabilization when ``cfg.stabilize`` is set and the attack found a shadow.
    """
    if cfg.use_eot:
        report = attack_robust(x, y_true, mask, classifier, cfg, plan_seed)
    else:
        report = attack_digital(x, y_true, mask, classifier, cfg)
    if cfg.stabilize and report.success and report.spec is not None:
        stab = stabilize(x, mask, classifier, report.adversarial_label, cfg, plan_seed,
                         original_label=y_true)
        report.stabilization = stab
        report.stabilized_confidence = stab.stabilized_confidence
    return report
