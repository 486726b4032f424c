"""Logit best-response repair dynamics.

One-dimensional map q_{t+1} = sigmoid(beta * (alpha * q_t - kappa)) together
with its fixed-point structure: a unique globally attracting fixed point when
beta * alpha <= 4, and a bistable interval (kappa_minus, kappa_plus) with
saddle-node tangencies and hysteresis when beta * alpha > 4.  Also provides
the critical-slowing-down quantities (relaxation time, stationary variance
under additive noise), alternative load couplings, and the asymmetric
two-agent system with its loop-gain stability condition.

Everything is a pure function of its arguments; sweeps are deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

#: Number of grid points used by the fixed-point sign-change scan.  The map is
#: analytic with at most three roots, so a scan plus bisection suffices; this
#: density resolves roots separated by >= 1e-3.
FIXED_POINT_GRID = 4096

#: |f'(q*)| must be within this band of 1 to classify a point as marginal.
MARGINAL_BAND = 1e-6

#: |q_new - q_old| above this between adjacent load values counts as a jump.
#: Attractor separation exceeds 0.5 in every bistable regime of interest, so
#: 0.2 is unambiguous.
JUMP_THRESHOLD = 0.2


def _sigmoid(z: float) -> float:
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def _sigmoid_vec(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _logit(q: float) -> float:
    return math.log(q / (1.0 - q))


@dataclass(frozen=True)
class DyadParams:
    """Repair-map parameters: coupling benefit, precision, and load."""

    alpha: float
    beta: float
    kappa: float

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")

    @property
    def gain(self) -> float:
        return self.beta * self.alpha


@dataclass(frozen=True)
class LoadModel:
    """Additive load kappa = base_cost + weight * divergence."""

    base_cost: float
    weight: float
    divergence: float

    def __post_init__(self) -> None:
        if self.base_cost < 0:
            raise ValueError("base repair cost must be non-negative")
        if self.weight < 0:
            raise ValueError("divergence weight must be non-negative")
        if self.divergence < 0:
            raise ValueError("aggregate divergence must be non-negative")


def load(model: LoadModel) -> float:
    """Effective repair load for the additive coupling."""
    return model.base_cost + model.weight * model.divergence


@dataclass(frozen=True)
class FixedPoint:
    q: float
    derivative: float
    stability: str  # "stable" | "unstable" | "marginal"


def logit_map_step(q: float, params: DyadParams) -> float:
    """One application of the repair map; maps [0, 1] into (0, 1)."""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    return _sigmoid(params.beta * (params.alpha * q - params.kappa))


def map_derivative(q: float, params: DyadParams) -> float:
    """f'(q) = beta * alpha * f(q) * (1 - f(q)); bounded by beta * alpha / 4."""
    fq = logit_map_step(q, params)
    return params.gain * fq * (1.0 - fq)


def _classify(derivative: float) -> str:
    if abs(derivative - 1.0) <= MARGINAL_BAND:
        return "marginal"
    return "stable" if derivative < 1.0 else "unstable"


def _bisect_root(lo: float, hi: float, params: DyadParams) -> float:
    g_lo = logit_map_step(lo, params) - lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        g_mid = logit_map_step(mid, params) - mid
        if g_mid == 0.0:
            return mid
        if (g_mid > 0.0) == (g_lo > 0.0):
            lo, g_lo = mid, g_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def find_fixed_points(params: DyadParams) -> list[FixedPoint]:
    """All fixed points in (0, 1), sorted ascending.

    Sign-change scan on a fixed grid followed by bisection to
    |f(q) - q| <= 1e-12.  Generic parameter values yield 1 or 3 points; an
    exact tangency would merge two of them into one marginal point, which the
    grid scan cannot distinguish from a near-tangency.
    """
    grid = np.linspace(0.0, 1.0, FIXED_POINT_GRID)
    g = _sigmoid_vec(params.beta * (params.alpha * grid - params.kappa)) - grid
    roots: list[float] = []
    for i in range(len(grid) - 1):
        if g[i] == 0.0:
            roots.append(float(grid[i]))
        elif (g[i] > 0.0) != (g[i + 1] > 0.0) and g[i + 1] != 0.0:
            roots.append(_bisect_root(float(grid[i]), float(grid[i + 1]), params))
    if g[-1] == 0.0:
        roots.append(float(grid[-1]))
    deduped: list[float] = []
    for root in sorted(roots):
        if not deduped or root - deduped[-1] > 1e-9:
            deduped.append(root)
    points = []
    for root in deduped:
        deriv = map_derivative(root, params)
        points.append(FixedPoint(q=root, derivative=deriv, stability=_classify(deriv)))
    return points


@dataclass(frozen=True)
class BifurcationThresholds:
    kappa_minus: float
    kappa_plus: float
    q_minus: float
    q_plus: float

    @property
    def width(self) -> float:
        return self.kappa_plus - self.kappa_minus


def bifurcation_thresholds(alpha: float, beta: float) -> BifurcationThresholds | None:
    """Closed-form saddle-node tangency loads; None when beta * alpha <= 4.

    The tangency states solve f(q) = q and f'(q) = 1 simultaneously:
    q_pm = (1 pm sqrt(1 - 4 / (beta * alpha))) / 2, and the corresponding
    loads are kappa(q) = alpha * q - logit(q) / beta.  The returned interval
    satisfies kappa_minus < kappa_plus.
    """
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    gain = beta * alpha
    if gain <= 4.0:
        return None
    root = math.sqrt(1.0 - 4.0 / gain)
    q_minus = 0.5 * (1.0 - root)
    q_plus = 0.5 * (1.0 + root)
    kappa_at = lambda q: alpha * q - _logit(q) / beta
    return BifurcationThresholds(
        kappa_minus=kappa_at(q_minus),
        kappa_plus=kappa_at(q_plus),
        q_minus=q_minus,
        q_plus=q_plus,
    )


def iterate(q0: float, params: DyadParams, steps: int) -> np.ndarray:
    """Trajectory [q0, f(q0), ..., f^steps(q0)] of length steps + 1.

    Once the iterate reaches an exact floating-point fixed point the
    remaining entries are constant, so they are filled without re-evaluating
    the map (bit-identical to continued iteration).
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    traj = np.empty(steps + 1)
    q = float(q0)
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q0 must lie in [0, 1], got {q}")
    traj[0] = q
    beta, alpha, kappa = params.beta, params.alpha, params.kappa
    for t in range(1, steps + 1):
        nxt = _sigmoid(beta * (alpha * q - kappa))
        traj[t] = nxt
        if nxt == q:
            traj[t:] = q
            break
        q = nxt
    return traj


def _settle(q: float, alpha: float, beta: float, kappa: float, steps: int) -> float:
    # Tight scalar loop; exact float fixed points short-circuit (identical to
    # running out the full budget, since the map is deterministic).
    exp = math.exp
    for _ in range(steps):
        z = beta * (alpha * q - kappa)
        if z >= 0.0:
            nxt = 1.0 / (1.0 + exp(-z))
        else:
            ez = exp(z)
            nxt = ez / (1.0 + ez)
        if nxt == q:
            return q
        q = nxt
    return q


@dataclass(frozen=True)
class SweepPoint:
    kappa: float
    q_final: float
    jump: bool


@dataclass(frozen=True)
class HysteresisResult:
    alpha: float
    beta: float
    branches: dict[str, list[SweepPoint]]
    jumps: dict[str, list[float]]


def hysteresis_sweep(
    alpha: float,
    beta: float,
    kappa_lo: float = 0.0,
    kappa_hi: float = 2.0,
    step: float = 1e-3,
    steps: int = 5000,
    directions: tuple[str, ...] = ("ascending", "descending"),
    jump_threshold: float = JUMP_THRESHOLD,
) -> HysteresisResult:
    """Quasistatic load sweep in both directions with jump detection.

    Ascending starts from q0 = 1 at kappa_lo and raises the load; descending
    starts from q0 = 0 at kappa_hi and lowers it.  Each load value iterates
    the map for ``steps`` applications warm-started from the previous load's
    endpoint, so the trajectory tracks an attractor branch until it
    disappears.  A change of more than ``jump_threshold`` between adjacent
    loads is recorded as a jump at the later load.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if kappa_hi < kappa_lo:
        raise ValueError("kappa_hi must be >= kappa_lo")
    n_cells = int(round((kappa_hi - kappa_lo) / step))
    grid = [kappa_lo + i * step for i in range(n_cells + 1)]
    branches: dict[str, list[SweepPoint]] = {}
    jumps: dict[str, list[float]] = {}
    for direction in directions:
        if direction == "ascending":
            order, q = grid, 1.0
        elif direction == "descending":
            order, q = grid[::-1], 0.0
        else:
            raise ValueError(f"unknown direction {direction!r}")
        points: list[SweepPoint] = []
        detected: list[float] = []
        prev: float | None = None
        for kappa in order:
            q = _settle(q, alpha, beta, kappa, steps)
            jumped = prev is not None and abs(q - prev) > jump_threshold
            if jumped:
                detected.append(kappa)
            points.append(SweepPoint(kappa=kappa, q_final=q, jump=jumped))
            prev = q
        branches[direction] = points
        jumps[direction] = detected
    return HysteresisResult(alpha=alpha, beta=beta, branches=branches, jumps=jumps)


# ---------------------------------------------------------------------------
# Critical slowing down
# ---------------------------------------------------------------------------


def relaxation_time(params: DyadParams, point: FixedPoint) -> float:
    """Relaxation time tau = -1 / ln f'(q*) of a stable fixed point.

    Marginal points (|f'| within the classification band of 1) report
    ``inf``; unstable points have no relaxation time.
    """
    if point.stability == "unstable":
        raise ValueError("relaxation time is defined only for stable fixed points")
    if point.stability == "marginal" or point.derivative >= 1.0:
        return math.inf
    if point.derivative <= 0.0:
        raise ValueError("map derivative must be positive")
    return -1.0 / math.log(point.derivative)


def stationary_variance(params: DyadParams, point: FixedPoint, noise_sd: float) -> float:
    """Linearized stationary variance sigma^2 / (1 - f'(q*)^2) under additive noise."""
    if noise_sd < 0:
        raise ValueError("noise_sd must be non-negative")
    if point.stability != "stable":
        raise ValueError("stationary variance requires a stable fixed point")
    return noise_sd * noise_sd / (1.0 - point.derivative * point.derivative)


def simulate_noisy(
    q0: float, params: DyadParams, steps: int, noise_sd: float, seed: int
) -> np.ndarray:
    """Map iteration with additive Gaussian noise after each step.

    The state is clipped to [1e-9, 1 - 1e-9] so the map argument stays
    finite.  Deterministic given the seed; noise_sd = 0 reduces to
    ``iterate``.
    """
    if noise_sd < 0:
        raise ValueError("noise_sd must be non-negative")
    if not 0.0 <= q0 <= 1.0:
        raise ValueError(f"q0 must lie in [0, 1], got {q0}")
    if noise_sd == 0.0:
        return iterate(q0, params, steps)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, noise_sd, size=steps)
    traj = np.empty(steps + 1)
    traj[0] = q = float(q0)
    beta, alpha, kappa = params.beta, params.alpha, params.kappa
    lo, hi = 1e-9, 1.0 - 1e-9
    for t in range(steps):
        q = _sigmoid(beta * (alpha * q - kappa)) + noise[t]
        if q < lo:
            q = lo
        elif q > hi:
            q = hi
        traj[t + 1] = q
    return traj


# ---------------------------------------------------------------------------
# Alternative divergence couplings
# ---------------------------------------------------------------------------


def coupling_erosion_threshold(alpha0: float, beta: float, rho: float) -> float | None:
    """Divergence level where alpha(D) = alpha0 - rho * D crosses the 4/beta gain.

    Returns None when alpha0 <= 4 / beta (no bistability to lose).
    """
    if alpha0 <= 0 or beta <= 0 or rho <= 0:
        raise ValueError("alpha0, beta, and rho must be positive")
    if alpha0 <= 4.0 / beta:
        return None
    return (alpha0 - 4.0 / beta) / rho


def noise_increase_threshold(beta0: float, alpha: float, xi: float) -> float | None:
    """Divergence level where beta(D) = beta0 / (1 + xi * D) drops the gain to 4.

    Returns None when beta0 * alpha <= 4.
    """
    if beta0 <= 0 or alpha <= 0 or xi <= 0:
        raise ValueError("beta0, alpha, and xi must be positive")
    if beta0 * alpha <= 4.0:
        return None
    return (beta0 * alpha / 4.0 - 1.0) / xi


# ---------------------------------------------------------------------------
# Asymmetric two-agent system
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TwoAgentParams:
    agent1: DyadParams
    agent2: DyadParams


def two_agent_step(state: tuple[float, float], params: TwoAgentParams) -> tuple[float, float]:
    """Simultaneous update: each agent best-responds to the other's last state."""
    q1, q2 = state
    a1, a2 = params.agent1, params.agent2
    return (
        _sigmoid(a1.beta * (a1.alpha * q2 - a1.kappa)),
        _sigmoid(a2.beta * (a2.alpha * q1 - a2.kappa)),
    )


def iterate_two_agent(
    state: tuple[float, float], params: TwoAgentParams, steps: int
) -> np.ndarray:
    """Trajectory of the two-agent map, shape (steps + 1, 2)."""
    traj = np.empty((steps + 1, 2))
    traj[0] = state
    current = (float(state[0]), float(state[1]))
    for t in range(1, steps + 1):
        current = two_agent_step(current, params)
        traj[t] = current
    return traj


@dataclass(frozen=True)
class LoopGain:
    gain: float
    necessary_product: float
    unstable: bool
    instability_admissible: bool


def loop_gain(state: tuple[float, float], params: TwoAgentParams) -> LoopGain:
    """Linearized cross-response product at a state of the two-agent map.

    gain = beta1*alpha1 * beta2*alpha2 * q1(1-q1) * q2(1-q2); a fixed point
    is locally unstable iff gain > 1.  Since q(1-q) <= 1/4, instability is
    only admissible when the bare product beta1*alpha1 * beta2*alpha2
    exceeds 16; that condition is necessary, not sufficient.
    """
    q1, q2 = state
    g1 = params.agent1.gain
    g2 = params.agent2.gain
    product = g1 * g2
    gain = product * q1 * (1.0 - q1) * q2 * (1.0 - q2)
    return LoopGain(
        gain=gain,
        necessary_product=product,
        unstable=gain > 1.0,
        instability_admissible=product > 16.0,
    )
