"""Group-relative advantages and the clipped surrogate objective with a KL penalty."""

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, InputError, NumericError

DEFAULT_DELTA = 1e-8


@dataclass(frozen=True)
class AdvantageSet:
    rewards: np.ndarray
    mean: float
    std: float
    delta: float
    advantages: np.ndarray


@dataclass(frozen=True)
class PolicyUpdateConfig:
    clip_epsilon: float = 0.2
    kl_coef: float = 0.001
    learning_rate: float = 3e-5
    group_size: int = 5
    delta: float = DEFAULT_DELTA
    ddof: int = 0  # 0: population std over the group, 1: sample std

    def __post_init__(self):
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ConfigurationError(f"clip epsilon must be in (0, 1), got {self.clip_epsilon}")
        if self.kl_coef < 0:
            raise ConfigurationError(f"KL coefficient must be >= 0, got {self.kl_coef}")
        if self.group_size < 2:
            raise ConfigurationError(f"group size must be >= 2, got {self.group_size}")
        if self.ddof not in (0, 1):
            raise ConfigurationError("ddof must be 0 or 1")

    def to_dict(self):
        return {
            "clip_epsilon": self.clip_epsilon,
            "kl_coef": self.kl_coef,
            "learning_rate": self.learning_rate,
            "group_size": self.group_size,
            "delta": self.delta,
            "ddof": self.ddof,
        }


def group_advantages(rewards, delta=DEFAULT_DELTA, ddof=0):
    """Normalize rewards within their group: ``(r - mean) / (std + delta)``."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise InputError(f"group advantages need at least two rewards, got shape {r.shape}")
    if not np.all(np.isfinite(r)):
        raise NumericError("non-finite reward", index=int(np.flatnonzero(~np.isfinite(r))[0]))
    # second pass removes the rounding error of the first mean, so equal rewards centre to exactly 0
    mu = float(r.mean())
    mu += float((r - mu).mean())
    sigma = float(np.sqrt(np.sum((r - mu) ** 2) / (r.size - ddof)))
    return AdvantageSet(rewards=r, mean=mu, std=sigma, delta=delta, advantages=(r - mu) / (sigma + delta))


def clipped_surrogate(logp_new, logp_old, advantages, clip_epsilon=0.2, kl_coef=0.0, kl=0.0):
    """Clipped importance-ratio surrogate minus ``kl_coef * kl``.

    Returns ``(objective, coef)`` where ``coef[i]`` is the derivative of the
    objective with respect to ``logp_new[i]``. It vanishes wherever the clipped
    branch is the minimum, since that branch is constant in the parameters.
    """
    logp_new = np.asarray(logp_new, dtype=np.float64)
    logp_old = np.asarray(logp_old, dtype=np.float64)
    adv = np.asarray(getattr(advantages, "advantages", advantages), dtype=np.float64)
    if not (logp_new.shape == logp_old.shape == adv.shape) or adv.ndim != 1:
        raise InputError("log-probabilities and advantages must be 1-D with equal length")
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = np.exp(logp_new - logp_old)
    bad = np.flatnonzero(~np.isfinite(ratio))
    if bad.size:
        raise NumericError(f"non-finite importance ratio at rollout {bad[0]}", index=int(bad[0]))
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * adv
    g = adv.shape[0]
    objective = float(np.minimum(unclipped, clipped).mean() - kl_coef * kl)
    coef = np.where(unclipped <= clipped, unclipped, 0.0) / g
    return objective, coef


def kl_penalty(p_new, p_ref):
    """Exact KL divergence ``KL(p_new || p_ref)`` between categorical distributions."""
    p = np.asarray(p_new, dtype=np.float64)
    r = np.asarray(p_ref, dtype=np.float64)
    if p.shape != r.shape or p.ndim != 1:
        raise InputError(f"distributions must share one support, got {p.shape} and {r.shape}")
    for name, d in (("p_new", p), ("p_ref", r)):
        if np.any(d < 0) or not np.isclose(d.sum(), 1.0, atol=1e-9):
            raise InputError(f"{name} is not a normalized distribution")
    mask = p > 0
    if np.any(r[mask] == 0):
        return float("inf")
    return max(float(np.sum(p[mask] * (np.log(p[mask]) - np.log(r[mask])))), 0.0)


def log_softmax(z):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max()
    return shifted - np.log(np.exp(shifted).sum())


def categorical_kl_grad(logits, ref_logp, temperature=1.0):
    """Value and logit-gradient of ``KL(softmax(logits/T) || ref)``."""
    logp = log_softmax(np.asarray(logits) / temperature)
    p = np.exp(logp)
    diff = logp - ref_logp
    kl = float(p @ diff)
    return max(kl, 0.0), p * (diff - kl) / temperature


def surrogate_gradient(logits, counts, logp_old, advantages, ref_logp, config, temperature=1.0):
    """Objective value and its gradient with respect to ``logits`` for the toy policy.

    ``counts[i]`` holds how often rollout ``i`` drew each candidate, so the
    log-probability of the rollout is ``counts[i] @ log_softmax(logits / T)``.
    """
    # overflow in extreme regimes is caught by the finiteness check below
    with np.errstate(over="ignore", invalid="ignore"):
        counts = np.asarray(counts, dtype=np.float64)
        logp = log_softmax(np.asarray(logits) / temperature)
        p = np.exp(logp)
        # zero counts must not meet -inf log-probabilities
        logp_new = np.where(counts > 0, counts * logp, 0.0).sum(axis=1)
        kl, kl_grad = categorical_kl_grad(logits, ref_logp, temperature)
        objective, coef = clipped_surrogate(
            logp_new, logp_old, advantages, config.clip_epsilon, config.kl_coef, kl
        )
        # d logp_new[i] / d logits = (counts[i] - m_i * p) / T
        m = counts.sum(axis=1)
        grad = (coef @ counts - (coef @ m) * p) / temperature - config.kl_coef * kl_grad
    if not (np.isfinite(objective) and np.all(np.isfinite(grad))):
        raise NumericError("non-finite surrogate objective or gradient")
    return objective, grad
