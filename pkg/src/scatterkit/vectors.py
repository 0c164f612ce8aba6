"""Cosine geometry and clamped validity scoring.

Vectors are kept exactly as supplied; normalization happens inside the
similarity computations. All arithmetic is float64.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateInputError, DimensionMismatchError, InputError
from .validation import check_embeddings, check_nonzero_rows, check_vector

_NORM_RTOL = 1e-9


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    norm: float = None

    def __post_init__(self):
        values = check_vector(self.values, "embedding")
        object.__setattr__(self, "values", values)
        actual = float(np.linalg.norm(values))
        if self.norm is not None and not np.isclose(self.norm, actual, rtol=_NORM_RTOL, atol=0.0):
            raise InputError(f"stored norm {self.norm} disagrees with recomputed {actual}")
        object.__setattr__(self, "norm", actual)

    @property
    def dim(self):
        return self.values.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


@dataclass
class EmbeddedHypothesis:
    embedding: EmbeddingVector
    text: str = ""
    validity: float = None

    def __post_init__(self):
        if not isinstance(self.embedding, EmbeddingVector):
            self.embedding = EmbeddingVector(self.embedding)
        if self.validity is not None and not 0.0 <= self.validity <= 1.0:
            raise InputError(f"validity {self.validity} outside [0, 1]")


@dataclass(frozen=True)
class GroundTruthSet:
    """Embedded ground-truth events for one context."""

    embeddings: np.ndarray
    texts: tuple = field(default=())

    def __post_init__(self):
        emb = check_embeddings(self.embeddings, "ground truth")
        check_nonzero_rows(emb, "ground truth")
        object.__setattr__(self, "embeddings", emb)
        texts = tuple(self.texts) if self.texts else ("",) * emb.shape[0]
        if len(texts) != emb.shape[0]:
            raise InputError(f"{len(texts)} ground-truth texts for {emb.shape[0]} embeddings")
        object.__setattr__(self, "texts", texts)

    @property
    def dim(self):
        return self.embeddings.shape[1]

    def __len__(self):
        return self.embeddings.shape[0]


def as_ground_truth(gt):
    return gt if isinstance(gt, GroundTruthSet) else GroundTruthSet(gt)


def cosine_similarity(a, b):
    """Cosine of the angle between two vectors, in ``[-1, 1]``."""
    a = check_vector(a, "a")
    b = check_vector(b, "b")
    if a.shape != b.shape:
        raise DimensionMismatchError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def unit_rows(X, name="embeddings"):
    norms = check_nonzero_rows(X, name)
    return X / norms[:, None]


def cosine_matrix(A, B):
    """Pairwise cosine similarities between the rows of ``A`` and ``B``."""
    A = check_embeddings(A, "A")
    B = check_embeddings(B, "B")
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatchError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    return np.clip(unit_rows(A, "A") @ unit_rows(B, "B").T, -1.0, 1.0)


def best_match_scores(H, gt):
    """Raw (unclamped) max cosine of each hypothesis row against the ground truth."""
    gt = as_ground_truth(gt)
    H = check_embeddings(H, "hypotheses", dim=gt.dim)
    return cosine_matrix(H, gt.embeddings).max(axis=1)


def validity_scores(H, gt):
    """Clamped validity score of every row of ``H``; negative cosines map to 0."""
    return np.clip(best_match_scores(H, gt), 0.0, 1.0)


def validity_score(h, gt):
    """Clamped validity of a single hypothesis embedding."""
    gt = as_ground_truth(gt)
    h = check_vector(h, "hypothesis")
    if h.shape[0] != gt.dim:
        raise DimensionMismatchError(f"hypothesis dimension {h.shape[0]}, ground truth {gt.dim}")
    return float(validity_scores(h[None, :], gt)[0])
