"""Group-relative policy optimization kernels.

Pure-Python reference arithmetic: plain floats, left-to-right summation,
no vectorized shortcuts. Every public function is deterministic in its
inputs so results can be reproduced bit for bit across hosts.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional, Sequence

from .errors import DomainError, ValidationError

DEFAULT_EPSILON = 0.2
DEFAULT_KL_COEF = 0.001
DEFAULT_STD_GUARD = 1e-8


def _require_finite(value: float, what: str) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise DomainError(f"{what} must be finite, got {value!r}")
    return value


def _exp_or_error(exponent: float, what: str) -> float:
    try:
        return math.exp(exponent)
    except OverflowError:
        raise DomainError(f"{what} overflow: exp({exponent!r}) exceeds float range") from None


@dataclasses.dataclass(frozen=True)
class GrpoConfig:
    """Hyperparameters for the surrogate objective.

    epsilon is the clip half-width, kl_coef the penalty weight on the
    reference-policy KL estimator, std_guard the cutoff below which a
    group's reward spread is treated as degenerate.
    """

    epsilon: float = DEFAULT_EPSILON
    kl_coef: float = DEFAULT_KL_COEF
    std_guard: float = DEFAULT_STD_GUARD

    def __post_init__(self) -> None:
        eps = _require_finite(self.epsilon, "epsilon")
        if eps <= 0:
            raise DomainError(f"epsilon must be positive, got {eps!r}")
        kl = _require_finite(self.kl_coef, "kl_coef")
        if kl < 0:
            raise DomainError(f"kl_coef must be non-negative, got {kl!r}")
        guard = _require_finite(self.std_guard, "std_guard")
        if guard <= 0:
            raise DomainError(f"std_guard must be positive, got {guard!r}")
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "kl_coef", kl)
        object.__setattr__(self, "std_guard", guard)


@dataclasses.dataclass(frozen=True)
class TokenLogProbs:
    """Per-token log-probabilities of one response under three policies.

    The three vectors are aligned token by token: current is the policy
    being optimized, old the behavior policy that sampled the response,
    reference the frozen anchor for the KL penalty. Log-probabilities are
    non-positive by definition.
    """

    current: Sequence[float]
    old: Sequence[float]
    reference: Sequence[float]

    def __post_init__(self) -> None:
        coerced = {}
        for name in ("current", "old", "reference"):
            values = tuple(float(v) for v in getattr(self, name))
            for v in values:
                if not math.isfinite(v):
                    raise ValidationError(f"{name} log-prob must be finite, got {v!r}")
                if v > 0:
                    raise ValidationError(f"{name} log-prob must be <= 0, got {v!r}")
            coerced[name] = values
        lengths = {name: len(v) for name, v in coerced.items()}
        if len(set(lengths.values())) != 1:
            raise ValidationError(f"log-prob vectors must share one length, got {lengths}")
        if lengths["current"] == 0:
            raise ValidationError("log-prob vectors must contain at least one token")
        for name, values in coerced.items():
            object.__setattr__(self, name, values)

    def __len__(self) -> int:
        return len(self.current)


@dataclasses.dataclass(frozen=True)
class RolloutGroup:
    """One prompt's group of sampled responses.

    rewards holds the scalar reward per response. token_logprobs is
    optional because advantage computation needs only the rewards; the
    objective additionally needs the aligned log-prob rows.
    """

    rewards: Sequence[float]
    token_logprobs: Optional[Sequence[TokenLogProbs]] = None

    def __post_init__(self) -> None:
        rewards = tuple(_require_finite(r, "reward") for r in self.rewards)
        if len(rewards) < 2:
            raise DomainError(f"a rollout group needs at least 2 responses, got {len(rewards)}")
        object.__setattr__(self, "rewards", rewards)
        if self.token_logprobs is not None:
            rows = tuple(self.token_logprobs)
            for row in rows:
                if not isinstance(row, TokenLogProbs):
                    raise ValidationError("token_logprobs entries must be TokenLogProbs")
            if len(rows) != len(rewards):
                raise ValidationError(
                    f"token_logprobs has {len(rows)} rows for {len(rewards)} rewards"
                )
            object.__setattr__(self, "token_logprobs", rows)

    def __len__(self) -> int:
        return len(self.rewards)


def group_advantages(rewards: Sequence[float], std_guard: float = DEFAULT_STD_GUARD) -> list[float]:
    """Normalize rewards within a group to zero mean and unit spread.

    Uses the population standard deviation. If the spread falls below
    std_guard the group carries no learning signal and every advantage
    is exactly 0.0.
    """
    values = [_require_finite(r, "reward") for r in rewards]
    if len(values) < 2:
        raise DomainError(f"advantages need at least 2 rewards, got {len(values)}")
    guard = _require_finite(std_guard, "std_guard")
    if guard <= 0:
        raise DomainError(f"std_guard must be positive, got {guard!r}")
    n = len(values)
    total = 0.0
    for v in values:
        total += v
    mean = total / n
    sq = 0.0
    for v in values:
        d = v - mean
        sq += d * d
    std = math.sqrt(sq / n)
    if std < guard:
        return [0.0] * n
    return [(v - mean) / std for v in values]


def ratio(current_logprob: float, old_logprob: float) -> float:
    """Probability ratio exp(current - old) for one token."""
    cur = _require_finite(current_logprob, "current log-prob")
    old = _require_finite(old_logprob, "old log-prob")
    return _exp_or_error(cur - old, "probability ratio")


def clipped_surrogate(
    advantage: float,
    current_logprob: float,
    old_logprob: float,
    epsilon: float = DEFAULT_EPSILON,
) -> float:
    """Pessimistic clipped policy-gradient surrogate for one token.

    Returns min(rho * A, clip(rho, 1-eps, 1+eps) * A) where rho is the
    probability ratio.
    """
    adv = _require_finite(advantage, "advantage")
    eps = _require_finite(epsilon, "epsilon")
    if eps <= 0:
        raise DomainError(f"epsilon must be positive, got {eps!r}")
    rho = ratio(current_logprob, old_logprob)
    clipped = min(max(rho, 1.0 - eps), 1.0 + eps)
    return min(rho * adv, clipped * adv)


def kl_penalty(current_logprob: float, reference_logprob: float) -> float:
    """Non-negative KL estimator exp(ref - cur) - (ref - cur) - 1."""
    cur = _require_finite(current_logprob, "current log-prob")
    ref = _require_finite(reference_logprob, "reference log-prob")
    diff = ref - cur
    return _exp_or_error(diff, "KL estimator") - diff - 1.0


def group_objective(
    group: RolloutGroup, config: GrpoConfig = GrpoConfig()
) -> tuple[float, list[list[float]]]:
    """Surrogate objective and its gradient in the current log-probs.

    The objective averages over responses, and within each response over
    its tokens: (1/G) * sum_i (1/|o_i|) * sum_t (surrogate - kl_coef * kl).
    Returns (objective, gradients) where gradients[i][t] is the exact
    partial derivative of the objective with respect to the current
    log-prob of token t in response i.

    At a clip boundary the unclipped branch's derivative is used, which
    matches the one-sided convention of evaluating min() tie-breaks in
    declaration order.
    """
    if group.token_logprobs is None:
        raise ValidationError("group_objective needs token_logprobs on the group")
    advantages = group_advantages(group.rewards, config.std_guard)
    g = len(group.rewards)
    objective = 0.0
    gradients: list[list[float]] = []
    for adv, row in zip(advantages, group.token_logprobs):
        n = len(row)
        token_sum = 0.0
        grad_row: list[float] = []
        for cur, old, ref in zip(row.current, row.old, row.reference):
            rho = _exp_or_error(cur - old, "probability ratio")
            unclipped = rho * adv
            clipped = min(max(rho, 1.0 - config.epsilon), 1.0 + config.epsilon) * adv
            surrogate = min(unclipped, clipped)
            diff = ref - cur
            expd = _exp_or_error(diff, "KL estimator")
            kl = expd - diff - 1.0
            token_sum += surrogate - config.kl_coef * kl
            # d(surrogate)/d(cur): the clipped branch is constant in cur.
            dsurr = unclipped if unclipped <= clipped else 0.0
            grad_row.append((dsurr + config.kl_coef * (expd - 1.0)) / (g * n))
        objective += token_sum / n
        gradients.append(grad_row)
    return objective / g, gradients
