"""Planted multi-mode embedding world and a trainable categorical toy policy.

The world stands in for a context with several plausible futures: ``P``
well-separated anchor directions serve as ground truth, and a finite
vocabulary of candidate hypotheses holds noisy copies of each anchor plus
off-manifold distractors orthogonal to every anchor. The toy policy is a
softmax over that vocabulary; a rollout is ``M`` draws with replacement.
"""

import zlib
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigurationError, InputError, NumericError
from .grpo import PolicyUpdateConfig, group_advantages, log_softmax, surrogate_gradient
from .metrics import EvaluationConfig, ScoreGrid, evaluate_sample, metric_report
from .rewards import ResponseGroup, RewardConfig, Rollout, compute_rewards
from .vectors import GroundTruthSet


def rng_stream(seed, name):
    """Independent generator for the named sub-stream of ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


@dataclass(frozen=True)
class ModeUniverse:
    anchors: np.ndarray  # (P, d) unit vectors
    vocabulary: np.ndarray  # (V, d) unit vectors
    labels: np.ndarray  # (V,) mode id, -1 for distractors
    seed: int
    noise: float
    separation: float

    @property
    def dim(self):
        return self.anchors.shape[1]

    @property
    def n_modes(self):
        return self.anchors.shape[0]

    @property
    def ground_truth(self):
        return GroundTruthSet(self.anchors)


def generate_universe(seed, dim=16, n_modes=6, vocab_size=60, noise=0.1, n_distractors=0, separation=0.3, max_tries=2000):
    """Sample anchors by rejection until every pairwise cosine is at most ``separation``."""
    if n_modes < 2:
        raise ConfigurationError("need at least two modes")
    if vocab_size < n_modes + n_distractors:
        raise ConfigurationError(f"vocabulary of {vocab_size} cannot hold {n_modes} modes and {n_distractors} distractors")
    if n_distractors and dim <= n_modes:
        raise ConfigurationError("distractors need dimensions outside the anchor span (dim > n_modes)")
    rng = rng_stream(seed, "universe")
    anchors = []
    for m in range(n_modes):
        for _ in range(max_tries):
            v = rng.standard_normal(dim)
            v /= np.linalg.norm(v)
            if all(v @ a <= separation for a in anchors):
                anchors.append(v)
                break
        else:
            raise ConfigurationError(
                f"could not place anchor {m + 1} of {n_modes} with cosine <= {separation} in {dim} dimensions"
            )
    anchors = np.array(anchors)

    n_on = vocab_size - n_distractors
    labels = np.arange(n_on) % n_modes
    vocab = anchors[labels] + noise * rng.standard_normal((n_on, dim))
    if n_distractors:
        basis, _ = np.linalg.qr(anchors.T)  # orthonormal basis of the anchor span
        raw = rng.standard_normal((n_distractors, dim))
        raw -= (raw @ basis) @ basis.T
        vocab = np.vstack([vocab, raw])
        labels = np.concatenate([labels, -np.ones(n_distractors, dtype=int)])
    vocab /= np.linalg.norm(vocab, axis=1, keepdims=True)
    return ModeUniverse(anchors, vocab, labels.astype(int), int(seed), float(noise), float(separation))


@dataclass
class ToyPolicy:
    logits: np.ndarray
    temperature: float = 1.0

    @classmethod
    def uniform(cls, size, temperature=1.0):
        return cls(np.zeros(size), temperature)

    def log_probs(self, temperature=None):
        t = self.temperature if temperature is None else temperature
        if t <= 0:
            p = self.probs(0.0)
            with np.errstate(divide="ignore"):
                return np.log(p)
        return log_softmax(self.logits / t)

    def probs(self, temperature=None):
        t = self.temperature if temperature is None else temperature
        if t <= 0:
            p = (self.logits == self.logits.max()).astype(float)
            return p / p.sum()
        return np.exp(self.log_probs(t))

    def entropy(self):
        logp = self.log_probs()
        p = np.exp(logp)
        return float(-(p[p > 0] @ logp[p > 0]))

    def sample(self, shape, rng, temperature=None):
        t = self.temperature if temperature is None else temperature
        if t <= 0:
            return np.full(shape, int(np.argmax(self.logits)))
        return rng.choice(self.logits.shape[0], size=shape, p=self.probs(t))

    def copy(self):
        return ToyPolicy(self.logits.copy(), self.temperature)


@dataclass
class SampledGroup:
    group: ResponseGroup
    draws: np.ndarray  # (G, M) vocabulary indices
    counts: np.ndarray  # (G, V)
    logp: np.ndarray  # (G,) rollout log-probabilities under the sampling policy


def sample_rollouts(policy, universe, n_rollouts, n_hypotheses, rng, temperature=None):
    """Draw ``n_rollouts`` rollouts of ``n_hypotheses`` candidates each, with replacement."""
    if universe.vocabulary.shape[0] == 0:
        raise InputError("empty vocabulary")
    draws = policy.sample((n_rollouts, n_hypotheses), rng, temperature)
    vocab_size = universe.vocabulary.shape[0]
    counts = np.zeros((n_rollouts, vocab_size))
    for g in range(n_rollouts):
        counts[g] = np.bincount(draws[g], minlength=vocab_size)
    logp = policy.log_probs(temperature)[draws].sum(axis=1)
    rollouts = tuple(Rollout(universe.vocabulary[draws[g]], index=g) for g in range(n_rollouts))
    return SampledGroup(ResponseGroup(rollouts, universe.ground_truth), draws, counts, logp)


@dataclass(frozen=True)
class ToyTrainConfig:
    dim: int = 16
    n_modes: int = 6
    vocab_size: int = 60
    n_distractors: int = 12
    noise: float = 0.1
    separation: float = 0.3
    group_size: int = 5
    n_hypotheses: int = 10
    n_rounds: int = 16
    steps: int = 300
    learning_rate: float = 1.0
    updates_per_step: int = 4
    clip_epsilon: float = 0.2
    kl_coef: float = 0.001
    train_temperature: float = 1.0
    eval_temperature: float = 0.7
    reward: str = "scatter"
    gate: str = "full"
    epsilon: float = 1e-8
    seed: int = 0

    def reward_config(self):
        return RewardConfig.preset(self.reward, gate=self.gate, epsilon=self.epsilon)

    def grpo_config(self):
        return PolicyUpdateConfig(
            clip_epsilon=self.clip_epsilon,
            kl_coef=self.kl_coef,
            learning_rate=self.learning_rate,
            group_size=self.group_size,
        )

    def universe(self):
        return generate_universe(
            self.seed, self.dim, self.n_modes, self.vocab_size, self.noise, self.n_distractors, self.separation
        )

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainingRun:
    config: ToyTrainConfig
    logs: list = field(default_factory=list)
    policy: ToyPolicy = None

    def log(self, record):
        if self.logs and record["step"] != self.logs[-1]["step"] + 1:
            raise InputError("training logs are append-only, one record per step")
        self.logs.append(record)


def train(universe, policy, config, steps=None):
    """Group-relative policy optimization of ``policy`` on ``universe``.

    Each step samples one group, scores it, normalizes rewards into
    advantages and takes ``updates_per_step`` gradient-ascent steps on the
    clipped surrogate. The reference policy for the KL term is the initial one.
    """
    steps = config.steps if steps is None else steps
    reward_config = config.reward_config()
    grpo = config.grpo_config()
    policy = policy.copy()
    policy.temperature = config.train_temperature
    ref_logp = policy.log_probs()
    rng = rng_stream(config.seed, "sampling")
    run = TrainingRun(config)
    for step in range(steps):
        sampled = sample_rollouts(policy, universe, config.group_size, config.n_hypotheses, rng)
        breakdowns = compute_rewards(sampled.group, reward_config)
        rewards = np.array([b.composite for b in breakdowns])
        adv = group_advantages(rewards, grpo.delta, grpo.ddof)
        objective = 0.0
        for _ in range(config.updates_per_step):
            try:
                objective, grad = surrogate_gradient(
                    policy.logits, sampled.counts, sampled.logp, adv, ref_logp, grpo, policy.temperature
                )
            except NumericError as err:
                raise NumericError(f"training diverged at step {step}: {err}", index=step) from err
            with np.errstate(over="ignore", invalid="ignore"):
                policy.logits = policy.logits + grpo.learning_rate * grad
            if not np.all(np.isfinite(policy.logits)):
                raise NumericError(f"policy logits diverged at step {step}", index=step)
        modes = universe.labels[sampled.draws.ravel()]
        run.log({
            "step": step,
            "objective": objective,
            "reward": float(rewards.mean()),
            "validity": float(np.mean([b.r_validity for b in breakdowns])),
            "intra": float(np.mean([b.r_intra for b in breakdowns])),
            "inter": float(np.mean([b.r_inter for b in breakdowns])),
            "coverage": int(np.unique(modes[modes >= 0]).size),
            "entropy": policy.entropy(),
        })
    run.policy = policy
    return run


@dataclass
class PolicyEvaluation:
    report: object
    modes_hit: int
    n_modes: int
    draws: np.ndarray = field(repr=False)

    @property
    def coverage(self):
        return self.modes_hit / self.n_modes

    def to_dict(self):
        return {"modes_hit": self.modes_hit, "n_modes": self.n_modes, "coverage": self.coverage, "report": self.report.to_dict()}


def evaluate_policy(policy, universe, n_rounds=16, n_hypotheses=10, config=None, seed=0, temperature=0.7, ks=(1, 4, 8, 16)):
    """Sample ``n_rounds`` rounds from ``policy`` and score them against the planted anchors."""
    config = replace(config or EvaluationConfig(), k=n_rounds, m=n_hypotheses)
    rng = rng_stream(seed, "evaluation")
    draws = policy.sample((n_rounds, n_hypotheses), rng, temperature)
    grid = ScoreGrid.build("synthetic", [universe.vocabulary[d] for d in draws], universe.ground_truth)
    ks = sorted(k for k in set(ks) | {n_rounds} if k <= n_rounds)
    report = metric_report([evaluate_sample(grid, config, ks)], ks, label="synthetic")
    modes = universe.labels[draws.ravel()]
    return PolicyEvaluation(report, int(np.unique(modes[modes >= 0]).size), universe.n_modes, draws)


def run_experiment(config):
    """Train from a uniform policy on the config's universe and evaluate the result."""
    universe = config.universe()
    run = train(universe, ToyPolicy.uniform(config.vocab_size, config.train_temperature), config)
    evaluation = evaluate_policy(
        run.policy, universe, config.n_rounds, config.n_hypotheses, seed=config.seed, temperature=config.eval_temperature
    )
    return run, evaluation


class ToyGRPOTrainer(BaseEstimator):
    """Estimator wrapper around ``train`` on the synthetic world.

    ``fit`` takes an optional ``ModeUniverse``; without one the universe is
    generated from the parameters and ``random_state``.
    """

    def __init__(self, reward="scatter", gate="full", steps=300, learning_rate=1.0, updates_per_step=4,
                 group_size=5, n_hypotheses=10, n_rounds=16, kl_coef=0.001, clip_epsilon=0.2, random_state=0):
        self.reward = reward
        self.gate = gate
        self.steps = steps
        self.learning_rate = learning_rate
        self.updates_per_step = updates_per_step
        self.group_size = group_size
        self.n_hypotheses = n_hypotheses
        self.n_rounds = n_rounds
        self.kl_coef = kl_coef
        self.clip_epsilon = clip_epsilon
        self.random_state = random_state

    def _train_config(self):
        return ToyTrainConfig(
            reward=self.reward, gate=self.gate, steps=self.steps, learning_rate=self.learning_rate,
            updates_per_step=self.updates_per_step,
            group_size=self.group_size, n_hypotheses=self.n_hypotheses, n_rounds=self.n_rounds,
            kl_coef=self.kl_coef, clip_epsilon=self.clip_epsilon, seed=int(self.random_state or 0),
        )

    def fit(self, X=None, y=None):
        config = self._train_config()
        universe = X if X is not None else config.universe()
        config = replace(config, dim=universe.dim, n_modes=universe.n_modes, vocab_size=universe.vocabulary.shape[0])
        self.universe_ = universe
        self.run_ = train(universe, ToyPolicy.uniform(config.vocab_size, config.train_temperature), config)
        self.policy_ = self.run_.policy
        return self

    def evaluate(self, seed=None):
        check_is_fitted(self, "policy_")
        config = self.run_.config
        return evaluate_policy(
            self.policy_, self.universe_, self.n_rounds, self.n_hypotheses,
            seed=config.seed if seed is None else seed, temperature=config.eval_temperature,
        )

    def score(self, X=None, y=None):
        """ValidRatio at K = ``n_rounds`` of the trained policy."""
        return self.evaluate().report.values[f"VR@{self.n_rounds}"]
