"""Discrete affect distributions and divergence measures.

Core objects for comparing how two speakers distribute probability over a
shared set of affective states: total-variation and KL divergences, mixtures,
context-conditioned meaning tables with the marginal/conditional/context
divergence decomposition, stochastic-channel robustness, and an L1
concentration sample-size calculator.

All functions are pure and operate on immutable values; they are safe to call
concurrently without synchronization.
"""

from __future__ import annotations

import math
from collections.abc import Hashable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

#: Absolute tolerance for accepting a probability vector at construction.
#: Vectors whose mass deviates from 1 by at most this amount are renormalized
#: exactly (divided by their sum); anything further off is rejected.
NORMALIZATION_TOL = 1e-9


class DimensionMismatchError(ValueError):
    """Two distributions (or a channel and a distribution) disagree on k."""


class SupportError(ValueError):
    """A divergence or expectation requires support that is not present."""


def _as_simplex(values, *, name: str = "distribution", tol: float = NORMALIZATION_TOL) -> np.ndarray:
    vec = np.asarray(values, dtype=float)
    if vec.ndim != 1 or vec.size < 1:
        raise ValueError(f"{name} must be a non-empty 1-D vector, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise ValueError(f"{name} contains non-finite entries")
    if float(vec.min()) < -tol:
        raise ValueError(f"{name} has negative entries (min {vec.min()})")
    vec = np.clip(vec, 0.0, None)
    total = float(vec.sum())
    if abs(total - 1.0) > tol:
        raise ValueError(f"{name} sums to {total}, outside tolerance {tol} of 1")
    # a sum within a few ulps of 1 counts as normalized; dividing there only
    # shuffles last-bit noise and would break construction idempotence (and
    # with it lossless serialization round-trips)
    for _ in range(4):
        if abs(total - 1.0) <= 1e-13:
            break
        vec = vec / total
        total = float(vec.sum())
    return vec


@dataclass(frozen=True, eq=False)
class AffectDistribution:
    """Probability vector over k affective states.

    Entries are validated non-negative and renormalized exactly when the raw
    sum is within ``NORMALIZATION_TOL`` of 1 (classifier outputs arrive as
    floats); anything further off is rejected.
    """

    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = _as_simplex(self.probs, name="affect distribution")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def k(self) -> int:
        return int(self.probs.size)

    def __repr__(self) -> str:  # keep ndarray noise out of test failures
        return f"AffectDistribution({np.array2string(self.probs, precision=6)})"


def _require_same_k(p: AffectDistribution, q: AffectDistribution) -> None:
    if p.k != q.k:
        raise DimensionMismatchError(f"state counts differ: {p.k} vs {q.k}")


def tv_distance(p: AffectDistribution, q: AffectDistribution) -> float:
    """Total variation distance (1/2) * sum_s |p_s - q_s|, in [0, 1]."""
    _require_same_k(p, q)
    return 0.5 * float(np.abs(p.probs - q.probs).sum())


def kl_divergence(p: AffectDistribution, q: AffectDistribution) -> float:
    """KL(p || q) = sum_s p_s * ln(p_s / q_s), with 0 * ln(0/.) = 0.

    Raises ``SupportError`` when p puts mass where q has none; downstream
    bounds compare finite numbers, so support violations are hard errors
    rather than infinities.
    """
    _require_same_k(p, q)
    mask = p.probs > 0.0
    if np.any(q.probs[mask] == 0.0):
        raise SupportError("support(p) is not contained in support(q)")
    ps = p.probs[mask]
    qs = q.probs[mask]
    return float(np.sum(ps * np.log(ps / qs)))


def mix(weights: Sequence[float], components: Sequence[AffectDistribution]) -> AffectDistribution:
    """Mixture sum_c w_c * component_c of affect distributions."""
    w = _as_simplex(weights, name="mixture weights")
    if len(components) != w.size:
        raise DimensionMismatchError(
            f"{w.size} weights but {len(components)} components"
        )
    k = components[0].k
    for comp in components:
        if comp.k != k:
            raise DimensionMismatchError("mixture components disagree on state count")
    stacked = np.stack([comp.probs for comp in components])
    return AffectDistribution(w @ stacked)


# ---------------------------------------------------------------------------
# Meaning tables
# ---------------------------------------------------------------------------

Context = Hashable

AGENTS = (1, 2)


@dataclass(frozen=True)
class MeaningTable:
    """Per-agent conditional meanings and context-usage rows.

    ``conditionals[agent][anchor][context]`` is the agent's affect
    distribution for the anchor in that context; ``usage[agent][anchor]`` is
    the agent's distribution over exactly the contexts that have a defined
    conditional for that (agent, anchor). Both agents must share one state
    count; their anchor sets may differ.
    """

    conditionals: Mapping[int, Mapping[str, Mapping[Context, AffectDistribution]]]
    usage: Mapping[int, Mapping[str, Mapping[Context, float]]]

    def __post_init__(self) -> None:
        if set(self.conditionals) != set(AGENTS) or set(self.usage) != set(AGENTS):
            raise ValueError("meaning table must be keyed by agents 1 and 2")
        k = None
        cond_out: dict[int, dict[str, dict[Context, AffectDistribution]]] = {}
        usage_out: dict[int, dict[str, dict[Context, float]]] = {}
        for agent in AGENTS:
            cond_out[agent] = {}
            usage_out[agent] = {}
            if set(self.conditionals[agent]) != set(self.usage[agent]):
                raise ValueError(f"agent {agent}: usage and conditional anchors differ")
            for anchor, cells in self.conditionals[agent].items():
                if not cells:
                    raise ValueError(f"agent {agent}, anchor {anchor!r}: no contexts")
                row = self.usage[agent][anchor]
                if set(row) != set(cells):
                    raise ValueError(
                        f"agent {agent}, anchor {anchor!r}: usage row must cover "
                        "exactly the contexts with defined conditionals"
                    )
                for dist in cells.values():
                    if k is None:
                        k = dist.k
                    elif dist.k != k:
                        raise DimensionMismatchError("agents disagree on state count")
                contexts = list(cells)
                weights = _as_simplex(
                    [row[c] for c in contexts],
                    name=f"usage row for agent {agent}, anchor {anchor!r}",
                )
                cond_out[agent][anchor] = dict(cells)
                usage_out[agent][anchor] = dict(zip(contexts, weights.tolist()))
        object.__setattr__(self, "conditionals", cond_out)
        object.__setattr__(self, "usage", usage_out)
        object.__setattr__(self, "_n_states", k)

    @property
    def n_states(self) -> int:
        return self._n_states  # type: ignore[attr-defined]

    def anchors(self, agent: int) -> tuple[str, ...]:
        return tuple(self.conditionals[agent])

    def has_anchor(self, anchor: str) -> bool:
        return anchor in self.conditionals[1] and anchor in self.conditionals[2]

    def meaning(self, agent: int, anchor: str, context: Context) -> AffectDistribution:
        try:
            return self.conditionals[agent][anchor][context]
        except KeyError:
            raise SupportError(
                f"agent {agent} has no meaning for anchor {anchor!r} in context {context!r}"
            ) from None

    def meaning_or_none(self, agent: int, anchor: str, context: Context):
        return self.conditionals[agent].get(anchor, {}).get(context)

    def usage_row(self, agent: int, anchor: str) -> Mapping[Context, float]:
        try:
            return self.usage[agent][anchor]
        except KeyError:
            raise SupportError(f"agent {agent} never uses anchor {anchor!r}") from None

    def shared_contexts(self, anchor: str) -> tuple[Context, ...]:
        """Contexts in which both agents have a conditional meaning for anchor."""
        if not self.has_anchor(anchor):
            return ()
        second = self.conditionals[2][anchor]
        return tuple(c for c in self.conditionals[1][anchor] if c in second)


@dataclass(frozen=True)
class ReferenceDistribution:
    """Per-anchor reference weighting over contexts (normalized per anchor)."""

    weights: Mapping[str, Mapping[Context, float]]

    def __post_init__(self) -> None:
        out: dict[str, dict[Context, float]] = {}
        for anchor, row in self.weights.items():
            if not row:
                raise ValueError(f"anchor {anchor!r}: empty reference row")
            contexts = list(row)
            probs = _as_simplex([row[c] for c in contexts], name=f"reference row for {anchor!r}")
            out[anchor] = dict(zip(contexts, probs.tolist()))
        object.__setattr__(self, "weights", out)

    def row(self, anchor: str) -> Mapping[Context, float]:
        try:
            return self.weights[anchor]
        except KeyError:
            raise SupportError(f"reference distribution has no row for anchor {anchor!r}") from None


def _usage_tv(u1: Mapping[Context, float], u2: Mapping[Context, float]) -> float:
    contexts = set(u1) | set(u2)
    return 0.5 * sum(abs(u1.get(c, 0.0) - u2.get(c, 0.0)) for c in contexts)


def _usage_kl(u1: Mapping[Context, float], u2: Mapping[Context, float]) -> float:
    total = 0.0
    for c, w in u1.items():
        if w <= 0.0:
            continue
        v = u2.get(c, 0.0)
        if v == 0.0:
            raise SupportError(f"usage support violation at context {c!r}")
        total += w * math.log(w / v)
    return total


def _marginal(table: MeaningTable, agent: int, anchor: str) -> AffectDistribution:
    row = table.usage_row(agent, anchor)
    contexts = list(row)
    return mix([row[c] for c in contexts], [table.meaning(agent, anchor, c) for c in contexts])


def marginal_amd(table: MeaningTable, anchor: str) -> float:
    """TV distance between the agents' context-marginal meanings of anchor."""
    return tv_distance(_marginal(table, 1, anchor), _marginal(table, 2, anchor))


def conditional_amd(table: MeaningTable, anchor: str, reference: ReferenceDistribution) -> float:
    """Reference-weighted expected TV between the agents' conditional meanings.

    The reference row for the anchor must put mass only on contexts defined
    for both agents; mass on a missing context raises ``SupportError``.
    """
    total = 0.0
    for context, weight in reference.row(anchor).items():
        if weight <= 0.0:
            continue
        total += weight * tv_distance(
            table.meaning(1, anchor, context), table.meaning(2, anchor, context)
        )
    return total


def context_divergence(table: MeaningTable, anchor: str) -> float:
    """TV distance between the two agents' context-usage rows for anchor."""
    return _usage_tv(table.usage_row(1, anchor), table.usage_row(2, anchor))


@dataclass(frozen=True)
class TvDecomposition:
    lhs: float
    ctx_term: float
    cond_term: float
    slack: float


def decomposition_check(table: MeaningTable, anchor: str) -> TvDecomposition:
    """Bound the marginal divergence by context divergence plus a conditional term.

    The conditional term takes the expectation under agent 1's usage row, so
    agent 2 must define a conditional in every context agent 1 uses.  The
    returned slack (bound minus lhs) is non-negative up to float rounding.
    """
    lhs = marginal_amd(table, anchor)
    ctx_term = context_divergence(table, anchor)
    cond_term = 0.0
    for context, weight in table.usage_row(1, anchor).items():
        if weight <= 0.0:
            continue
        cond_term += weight * tv_distance(
            table.meaning(1, anchor, context), table.meaning(2, anchor, context)
        )
    return TvDecomposition(lhs, ctx_term, cond_term, ctx_term + cond_term - lhs)


@dataclass(frozen=True)
class KlDecomposition:
    lhs: float
    bound: float
    slack: float


def kl_decomposition_check(table: MeaningTable, anchor: str) -> KlDecomposition:
    """KL analogue of ``decomposition_check``; support violations propagate."""
    lhs = kl_divergence(_marginal(table, 1, anchor), _marginal(table, 2, anchor))
    bound = _usage_kl(table.usage_row(1, anchor), table.usage_row(2, anchor))
    for context, weight in table.usage_row(1, anchor).items():
        if weight <= 0.0:
            continue
        bound += weight * kl_divergence(
            table.meaning(1, anchor, context), table.meaning(2, anchor, context)
        )
    return KlDecomposition(lhs, bound, bound - lhs)


def value_disagreement_bound(payoff_gap_bound: float, tv: float) -> float:
    """Worst-case disagreement 2 * G * TV in expected repair advantage.

    For any payoff-gap function g with sup|g| <= G and any two beliefs M, M',
    |E_M[g] - E_M'[g]| <= 2 * G * TV(M, M').
    """
    if payoff_gap_bound < 0:
        raise ValueError(f"payoff gap bound must be non-negative, got {payoff_gap_bound}")
    if not 0.0 <= tv <= 1.0:
        raise ValueError(f"tv must lie in [0, 1], got {tv}")
    return 2.0 * payoff_gap_bound * tv


# ---------------------------------------------------------------------------
# Stochastic channels (measurement robustness)
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StochasticChannel:
    """Column-stochastic k x k matrix; entry (out, in) is P(out state | in state)."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        mat = np.asarray(self.matrix, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.shape[0] < 1:
            raise ValueError(f"channel must be a square matrix, got shape {mat.shape}")
        if not np.all(np.isfinite(mat)):
            raise ValueError("channel contains non-finite entries")
        if float(mat.min()) < -NORMALIZATION_TOL:
            raise ValueError("channel has negative entries")
        mat = np.clip(mat, 0.0, None)
        sums = mat.sum(axis=0)
        if np.any(np.abs(sums - 1.0) > NORMALIZATION_TOL):
            raise ValueError(f"channel columns must sum to 1, got sums {sums}")
        mat = mat / sums
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @property
    def k(self) -> int:
        return int(self.matrix.shape[0])

    def identity_deviation(self) -> float:
        """Max-column-absolute-sum norm of (T - I), the induced-L1 deviation."""
        return float(np.abs(self.matrix - np.eye(self.k)).sum(axis=0).max())


def apply_channel(channel: StochasticChannel, p: AffectDistribution) -> AffectDistribution:
    """Push a distribution through a channel: T @ p."""
    if channel.k != p.k:
        raise DimensionMismatchError(f"channel is {channel.k}x{channel.k} but p has k={p.k}")
    return AffectDistribution(channel.matrix @ p.probs)


# ---------------------------------------------------------------------------
# Finite-sample requirements
# ---------------------------------------------------------------------------


def required_samples(k: int, epsilon: float, delta: float) -> int:
    """Smallest n with (2^k - 2) * exp(-n * eps^2 / 2) <= delta.

    This is the L1 concentration requirement for estimating a k-state
    distribution to accuracy eps with failure probability delta; the closed
    form is n = ceil((2 / eps^2) * ln((2^k - 2) / delta)).
    """
    if k < 2:
        raise ValueError(f"need at least 2 states, got k={k}")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    log_excess = math.log(2**k - 2)
    log_delta = math.log(delta)
    half_eps_sq = epsilon * epsilon / 2.0

    def satisfied(n: int) -> bool:
        return log_excess - n * half_eps_sq <= log_delta

    n = max(1, math.ceil((log_excess - log_delta) / half_eps_sq))
    while n > 1 and satisfied(n - 1):
        n -= 1
    while not satisfied(n):
        n += 1
    return n
