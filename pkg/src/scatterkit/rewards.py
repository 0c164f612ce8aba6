"""Hybrid diversity-aware reward for one group of sampled rollouts.

A rollout is a set of hypothesis embeddings. For every rollout in a group the
engine computes

* the validity reward (mean clamped validity of its hypotheses),
* the intra-rollout diversity reward (validity-weighted pairwise dissimilarity),
* the inter-rollout diversity reward (validity-weighted asymmetric Chamfer
  distance to every other rollout, leave-one-out averaged and gated by the
  rollout's own validity),

and sums the enabled components into one composite scalar.
"""

import enum
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigurationError, DimensionMismatchError, InputError
from .validation import check_embeddings, check_unit_interval
from .vectors import GroundTruthSet, as_ground_truth, unit_rows

DEFAULT_EPSILON = 1e-8


class GateMode(str, enum.Enum):
    FULL = "full"  # square root of mean validity
    MEAN = "mean"
    MIN = "min"
    NONE = "none"

    def apply(self, q):
        q = np.asarray(q, dtype=np.float64)
        if q.size == 0:
            return 0.0
        if self is GateMode.FULL:
            return float(np.sqrt(q.mean()))
        if self is GateMode.MEAN:
            return float(q.mean())
        if self is GateMode.MIN:
            return float(q.min())
        return 1.0


REWARD_PRESETS = {
    "scatter": dict(use_validity=True, use_intra=True, use_inter=True),
    "validity-only": dict(use_validity=True, use_intra=False, use_inter=False),
    "no-intra": dict(use_validity=True, use_intra=False, use_inter=True),
    "no-inter": dict(use_validity=True, use_intra=True, use_inter=False),
}


@dataclass(frozen=True)
class RewardConfig:
    epsilon: float = DEFAULT_EPSILON
    gate: GateMode = GateMode.FULL
    use_validity: bool = True
    use_intra: bool = True
    use_inter: bool = True

    def __post_init__(self):
        object.__setattr__(self, "gate", GateMode(self.gate))
        if not self.epsilon > 0:
            raise ConfigurationError(f"epsilon must be positive, got {self.epsilon}")

    @classmethod
    def preset(cls, name, **overrides):
        try:
            toggles = REWARD_PRESETS[name]
        except KeyError:
            raise ConfigurationError(
                f"unknown reward preset {name!r}; choose from {sorted(REWARD_PRESETS)}"
            ) from None
        return cls(**{**toggles, **overrides})

    def to_dict(self):
        return {
            "epsilon": self.epsilon,
            "gate": self.gate.value,
            "use_validity": self.use_validity,
            "use_intra": self.use_intra,
            "use_inter": self.use_inter,
        }


@dataclass(frozen=True)
class Rollout:
    embeddings: np.ndarray
    texts: tuple = ()
    index: int = 0

    def __post_init__(self):
        emb = check_embeddings(self.embeddings, f"rollout {self.index}")
        object.__setattr__(self, "embeddings", emb)
        texts = tuple(self.texts) if self.texts else ("",) * emb.shape[0]
        if len(texts) != emb.shape[0]:
            raise InputError(f"rollout {self.index}: {len(texts)} texts for {emb.shape[0]} embeddings")
        object.__setattr__(self, "texts", texts)

    def __len__(self):
        return self.embeddings.shape[0]


@dataclass(frozen=True)
class ResponseGroup:
    """The ``G`` rollouts sampled for one context, plus its ground truth."""

    rollouts: tuple
    ground_truth: GroundTruthSet
    context_id: str = ""

    def __post_init__(self):
        rollouts = tuple(
            r if isinstance(r, Rollout) else Rollout(r, index=k) for k, r in enumerate(self.rollouts)
        )
        if not rollouts:
            raise InputError("a response group needs at least one rollout")
        gt = as_ground_truth(self.ground_truth)
        for r in rollouts:
            if r.embeddings.shape[1] != gt.dim:
                raise DimensionMismatchError(
                    f"rollout {r.index} has dimension {r.embeddings.shape[1]}, ground truth {gt.dim}"
                )
        object.__setattr__(self, "rollouts", rollouts)
        object.__setattr__(self, "ground_truth", gt)

    def __len__(self):
        return len(self.rollouts)


@dataclass
class RewardBreakdown:
    rollout_index: int
    r_validity: float
    r_intra: float
    s_raw: float
    gate: float
    r_inter: float
    composite: float
    validity: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    distances: np.ndarray = field(repr=False)

    COLUMNS = ("r_validity", "r_intra", "s_raw", "gate", "r_inter", "composite")

    def as_row(self):
        return [getattr(self, c) for c in self.COLUMNS]

    def to_dict(self):
        out = {"rollout": self.rollout_index}
        out.update({c: getattr(self, c) for c in self.COLUMNS})
        out["validity"] = self.validity.tolist()
        out["weights"] = self.weights.tolist()
        out["distances"] = self.distances.tolist()
        return out


def validity_reward(q):
    """Mean validity of a rollout's hypotheses."""
    q = check_unit_interval(q, "validity scores")
    if q.size == 0:
        raise InputError("rollout is empty")
    return float(q.mean())


def intra_diversity_reward(embeddings, q):
    """Validity-weighted mean pairwise cosine dissimilarity; 0 for a single hypothesis."""
    H = check_embeddings(embeddings, "rollout")
    q = check_unit_interval(q, "validity scores")
    if q.shape[0] != H.shape[0]:
        raise InputError(f"{q.shape[0]} validity scores for {H.shape[0]} hypotheses")
    U = unit_rows(H, "rollout")
    return _intra_from_cos(np.clip(U @ U.T, -1.0, 1.0), q)


def importance_weights(q, epsilon=DEFAULT_EPSILON):
    """Validity scores normalized into sub-stochastic weights."""
    q = check_unit_interval(q, "validity scores")
    return q / (q.sum() + epsilon)


def chamfer_directed(src, dst, weights):
    """Weighted asymmetric Chamfer distance from ``src`` hypotheses to their nearest ``dst`` match."""
    S = check_embeddings(src, "src")
    T = check_embeddings(dst, "dst")
    if S.shape[1] != T.shape[1]:
        raise DimensionMismatchError(f"dimension mismatch: {S.shape[1]} vs {T.shape[1]}")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (S.shape[0],):
        raise InputError(f"{w.shape} weights for {S.shape[0]} source hypotheses")
    cos = np.clip(unit_rows(S, "src") @ unit_rows(T, "dst").T, -1.0, 1.0)
    return float(w @ (1.0 - cos.max(axis=1)))


def inter_diversity_reward(group, k, gate_mode=GateMode.FULL, epsilon=DEFAULT_EPSILON):
    """``(s_raw, gate, r_inter)`` for rollout ``k`` of ``group``."""
    b = compute_rewards(group, RewardConfig(epsilon=epsilon, gate=gate_mode))[k]
    return b.s_raw, b.gate, b.r_inter


def compute_rewards(group, config=None):
    """Reward breakdown for every rollout of ``group``, in rollout order."""
    config = config or RewardConfig()
    if not isinstance(group, ResponseGroup):
        raise InputError("compute_rewards expects a ResponseGroup")
    sizes = [len(r) for r in group.rollouts]
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    H = np.vstack([r.embeddings for r in group.rollouts])
    U = unit_rows(H, "hypotheses")
    C = np.clip(U @ U.T, -1.0, 1.0)
    G_unit = unit_rows(group.ground_truth.embeddings, "ground truth")
    q_all = np.clip((U @ G_unit.T).max(axis=1), 0.0, 1.0)

    n = len(group)
    spans = [slice(bounds[k], bounds[k + 1]) for k in range(n)]
    qs = [q_all[s] for s in spans]
    weights = [q / (q.sum() + config.epsilon) for q in qs]

    # D[k, l]: directed Chamfer distance from rollout k to rollout l.
    D = np.zeros((n, n))
    if config.use_inter:
        for k in range(n):
            for l in range(n):
                if l != k:
                    nearest = C[spans[k], spans[l]].max(axis=1)
                    D[k, l] = float(weights[k] @ (1.0 - nearest))

    out = []
    for k in range(n):
        r_val = float(qs[k].mean())
        r_intra = _intra_from_cos(C[spans[k], spans[k]], qs[k]) if config.use_intra else 0.0
        gate = config.gate.apply(qs[k])
        s_raw = float(D[k].sum() / (n - 1)) if (config.use_inter and n > 1) else 0.0
        r_inter = s_raw * gate
        composite = (r_val if config.use_validity else 0.0) + r_intra + r_inter
        out.append(
            RewardBreakdown(
                rollout_index=k,
                r_validity=r_val if config.use_validity else 0.0,
                r_intra=r_intra,
                s_raw=s_raw,
                gate=gate,
                r_inter=r_inter,
                composite=composite,
                validity=qs[k].copy(),
                weights=weights[k],
                distances=D[k].copy(),
            )
        )
    return out


def _intra_from_cos(cos, q):
    m = q.shape[0]
    if m < 2:
        return 0.0
    iu = np.triu_indices(m, k=1)
    pair = (1.0 - cos[iu]) * np.sqrt(q[iu[0]] * q[iu[1]])
    return float(2.0 * pair.sum() / (m * (m - 1)))


class ScatterReward(TransformerMixin, BaseEstimator):
    """Scores groups of hypothesis sets against a fitted ground truth.

    ``fit`` takes the ground-truth event embeddings of one context;
    ``transform`` takes the group's rollouts (a ``(G, M, d)`` array or a list
    of ``(m_k, d)`` arrays) and returns a ``(G, 6)`` array whose columns are
    given by ``get_feature_names_out``.

    Parameters
    ----------
    epsilon : float, default=1e-8
        Stabilizer in the importance-weight denominator.
    gate : {"full", "mean", "min", "none"}, default="full"
        How rollout validity gates the inter-rollout reward.
    use_validity, use_intra, use_inter : bool, default=True
        Component toggles for ablations.
    """

    def __init__(self, epsilon=DEFAULT_EPSILON, gate="full", use_validity=True, use_intra=True, use_inter=True):
        self.epsilon = epsilon
        self.gate = gate
        self.use_validity = use_validity
        self.use_intra = use_intra
        self.use_inter = use_inter

    def fit(self, X, y=None):
        self.ground_truth_ = GroundTruthSet(X)
        self.n_features_in_ = self.ground_truth_.dim
        self.config_ = RewardConfig(
            epsilon=self.epsilon,
            gate=self.gate,
            use_validity=self.use_validity,
            use_intra=self.use_intra,
            use_inter=self.use_inter,
        )
        return self

    def breakdown(self, X):
        check_is_fitted(self, "ground_truth_")
        group = ResponseGroup(tuple(Rollout(r, index=k) for k, r in enumerate(X)), self.ground_truth_)
        return compute_rewards(group, self.config_)

    def transform(self, X):
        return np.array([b.as_row() for b in self.breakdown(X)])

    def get_feature_names_out(self, input_features=None):
        return np.array(RewardBreakdown.COLUMNS, dtype=object)

