"""Dense linear algebra and differentiable primitives used by every other module.

Everything here is a pure function over numpy arrays. Entropy is measured in
nats throughout. Gradients returned by the ``*_backward`` / loss functions are
exact analytic derivatives; ``finite_difference_gradient`` is the independent
check they are tested against.
"""

from __future__ import annotations

import hashlib
from typing import Callable

import numpy as np

BCE_EPS = 1e-7


def as_vector(x) -> np.ndarray:
    """Coerce to a finite 1-D float array."""
    a = np.asarray(x, dtype=float)
    if a.ndim != 1:
        raise ValueError(f"expected a vector, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError("vector contains non-finite entries")
    return a


def as_matrix(x) -> np.ndarray:
    """Coerce to a finite 2-D float array."""
    a = np.asarray(x, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError("matrix contains non-finite entries")
    return a


def validate_distribution(p: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Check that ``p`` is a probability vector: entries in [0, 1], unit sum."""
    p = as_vector(p)
    if p.size == 0:
        raise ValueError("empty distribution")
    if (p < -tol).any() or (p > 1 + tol).any():
        raise ValueError("distribution entries outside [0, 1]")
    if abs(float(p.sum()) - 1.0) > tol:
        raise ValueError(f"distribution sums to {p.sum()!r}, not 1")
    return p


def softmax(logits) -> np.ndarray:
    """Convert logits to a probability vector, max-subtracted for stability."""
    a = np.asarray(logits, dtype=float)
    if a.size == 0:
        raise ValueError("empty logits")
    if not np.isfinite(a).all():
        raise ValueError("non-finite logits")
    z = a - a.max()
    e = np.exp(z)
    return e / e.sum()


def entropy(dist) -> float:
    """Shannon entropy in nats, with the 0*ln(0) := 0 convention."""
    p = np.asarray(dist, dtype=float)
    terms = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return float(-terms.sum())


def entropy_rows(p: np.ndarray) -> np.ndarray:
    """Row-wise entropy of a stack of distributions, shape (..., V) -> (...)."""
    p = np.asarray(p, dtype=float)
    terms = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return -terms.sum(axis=-1)


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors, in [-1, 1]."""
    va, vb = as_vector(a), as_vector(b)
    if va.shape != vb.shape:
        raise ValueError(f"length mismatch: {va.shape} vs {vb.shape}")
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise ValueError("degenerate embedding")
    return float(np.clip(np.dot(va, vb) / (na * nb), -1.0, 1.0))


def pearson(xs, ys) -> float:
    """Pearson correlation coefficient of two equal-length series."""
    x, y = as_vector(xs), as_vector(ys)
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ValueError("need at least 2 points")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float(np.sqrt((dx * dx).sum()))
    sy = float(np.sqrt((dy * dy).sum()))
    if sx == 0.0 or sy == 0.0:
        raise ValueError("zero variance")
    return float(np.clip(float((dx * dy).sum()) / (sx * sy), -1.0, 1.0))


def sigmoid(x):
    """Numerically stable logistic function; preserves scalar vs array input."""
    a = np.asarray(x, dtype=float)
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return float(out) if np.isscalar(x) or a.ndim == 0 else out


def affine_forward(W: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """y = W @ x + b."""
    W, b, x = as_matrix(W), as_vector(b), as_vector(x)
    if W.shape[1] != x.size or W.shape[0] != b.size:
        raise ValueError(f"shape mismatch: W {W.shape}, b ({b.size},), x ({x.size},)")
    return W @ x + b


def affine_backward(W: np.ndarray, b: np.ndarray, x: np.ndarray, g_y: np.ndarray):
    """Gradients of an affine layer given the upstream gradient g_y = dL/dy.

    Returns (dL/dW, dL/db, dL/dx).
    """
    W, x, g_y = as_matrix(W), as_vector(x), as_vector(g_y)
    if g_y.size != W.shape[0] or x.size != W.shape[1]:
        raise ValueError("shape mismatch in affine_backward")
    return np.outer(g_y, x), g_y.copy(), W.T @ g_y


def bce_loss(pred, target):
    """Mean binary cross-entropy and its gradient w.r.t. the predictions.

    Predictions are clamped to [BCE_EPS, 1 - BCE_EPS] so saturated values give
    a finite loss; where the clamp is active the loss is locally constant in
    the raw prediction, so the gradient there is 0.
    """
    p, t = as_vector(pred), as_vector(target)
    if p.size != t.size:
        raise ValueError(f"length mismatch: {p.size} vs {t.size}")
    if p.size == 0:
        raise ValueError("empty predictions")
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    n = p.size
    loss = float(-(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc)).mean())
    interior = (p > BCE_EPS) & (p < 1.0 - BCE_EPS)
    grad = np.where(interior, (pc - t) / (pc * (1.0 - pc) * n), 0.0)
    return loss, grad


def finite_difference_gradient(
    f: Callable[[np.ndarray], float], theta, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function of a parameter vector."""
    th = as_vector(theta)
    if h <= 0:
        raise ValueError("step must be positive")
    grad = np.empty_like(th)
    for i in range(th.size):
        up = th.copy()
        dn = th.copy()
        up[i] += h
        dn[i] -= h
        fu, fd = float(f(up)), float(f(dn))
        if not (np.isfinite(fu) and np.isfinite(fd)):
            raise ValueError("non-finite function value in finite differences")
        grad[i] = (fu - fd) / (2.0 * h)
    return grad


def stable_hash(text: str) -> int:
    """Deterministic 64-bit hash of a string (process-independent, unlike hash())."""
    digest = hashlib.sha1(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def hashed_unit_vector(text: str, dim: int) -> np.ndarray:
    """Deterministic pseudo-random unit vector keyed on a string."""
    if dim <= 0:
        raise ValueError("dimension must be positive")
    rng = np.random.default_rng(stable_hash(text) % (2**63))
    v = rng.standard_normal(dim)
    norm = np.linalg.norm(v)
    if norm == 0.0:  # astronomically unlikely; regenerate deterministically
        v = np.ones(dim)
        norm = np.linalg.norm(v)
    return v / norm
