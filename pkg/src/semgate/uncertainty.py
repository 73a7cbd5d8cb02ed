"""Ensemble-based decomposition of caption-token uncertainty.

An ensemble of M caption models yields, for each token position, M predictive
distributions over a shared vocabulary. The predictive (mixture) distribution
is their arithmetic mean. Total entropy of the mixture splits into:

  aleatoric  u_al = (1/M) * sum_m H(member_m)      (mean member entropy)
  epistemic  u_ep = H(mixture) - u_al              (member disagreement)

Jensen's inequality guarantees u_ep >= 0 analytically; tiny negative values
from floating point are clamped to 0 while the raw value is kept for
debugging. Hallucination analytics classify vocabulary/caption tokens against
a set of grounded objects after synonym canonicalization, and bucket captions
by the fraction of hallucinated object words.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import entropy, entropy_rows, softmax, validate_distribution

EP_CLAMP = 1e-9
LOG_PROB_FLOOR = 1e-12

BUCKET_NAMES = ("G1", "G2", "G3", "G4", "G5")
# lower bounds of the five ratio buckets; the last bucket is closed at 1.0
_BUCKET_EDGES = (0.0, 0.2, 0.4, 0.6, 0.8)


class Vocabulary:
    """Ordered set of unique token strings with dense index lookup."""

    def __init__(self, tokens):
        tokens = tuple(tokens)
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        if not tokens:
            raise ValueError("empty vocabulary")
        self.tokens = tokens
        self._index = {tok: i for i, tok in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def index(self, token: str) -> int:
        return self._index[token]

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens


class EnsembleTokenDistributions:
    """Per-member, per-position predictive distributions over one vocabulary.

    ``probs`` has shape (M, T, V): M ensemble members, T token positions,
    V vocabulary entries. Every (m, t) row is a valid probability vector.
    """

    def __init__(self, vocab: Vocabulary, probs):
        probs = np.asarray(probs, dtype=float)
        if probs.ndim != 3:
            raise ValueError(f"expected (M, T, V) probabilities, got shape {probs.shape}")
        m, t, v = probs.shape
        if m < 1 or t < 1:
            raise ValueError("need at least one member and one token position")
        if v != len(vocab):
            raise ValueError(f"vocab size {len(vocab)} != distribution width {v}")
        if not np.isfinite(probs).all():
            raise ValueError("non-finite probabilities")
        tol = 1e-9
        bad = (probs < -tol) | (probs > 1 + tol)
        if bad.any():
            mi, ti = np.argwhere(bad.any(axis=-1))[0]
            raise ValueError(f"member {mi}, token {ti}: entries outside [0, 1]")
        sums = probs.sum(axis=-1)
        off = np.abs(sums - 1.0) > tol
        if off.any():
            mi, ti = np.argwhere(off)[0]
            raise ValueError(
                f"member {mi}, token {ti}: distribution sums to {sums[mi, ti]!r}, not 1"
            )
        self.vocab = vocab
        self.probs = probs
        self.member_count = m
        self.token_count = t

    @classmethod
    def from_logits(cls, vocab: Vocabulary, logits) -> "EnsembleTokenDistributions":
        logits = np.asarray(logits, dtype=float)
        if logits.ndim != 3:
            raise ValueError(f"expected (M, T, V) logits, got shape {logits.shape}")
        probs = np.empty_like(logits)
        for mi in range(logits.shape[0]):
            for ti in range(logits.shape[1]):
                probs[mi, ti] = softmax(logits[mi, ti])
        return cls(vocab, probs)


@dataclass(frozen=True)
class TokenUncertainty:
    """Entropy decomposition at one token position (all values in nats)."""

    h_total: float
    u_al: float
    u_ep: float
    u_ep_raw: float  # pre-clamp value, kept for debugging


@dataclass(frozen=True)
class SentenceUncertainty:
    """Per-token decompositions plus their arithmetic means over the sentence."""

    per_token: tuple[TokenUncertainty, ...]
    mean_al: float
    mean_ep: float
    mean_total: float


@dataclass(frozen=True)
class HallucinationSpec:
    """Grounded-object set, synonym canonicalization map, object-word filter.

    ``synonyms`` maps surface forms to canonical forms and must be idempotent
    (every value canonicalizes to itself). ``object_words`` confines the
    hallucination decision to content words; when empty, every token counts
    as an object word.
    """

    objects: frozenset[str]
    synonyms: dict[str, str] = field(default_factory=dict)
    object_words: frozenset[str] = frozenset()

    def __post_init__(self):
        for value in self.synonyms.values():
            if self.synonyms.get(value, value) != value:
                raise ValueError(f"synonym target {value!r} is not canonical")

    def canonical(self, token: str) -> str:
        tok = token.lower()
        return self.synonyms.get(tok, tok)

    def is_object_word(self, token: str) -> bool:
        if not self.object_words:
            return True
        return self.canonical(token) in self.object_words

    def is_hallucinated(self, token: str) -> bool:
        """True for object words whose canonical form is not grounded."""
        return self.is_object_word(token) and self.canonical(token) not in self.objects


def load_hallucination_spec(path) -> HallucinationSpec:
    """Read a hallucination spec from JSON: objects, synonyms, object_words."""
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    return HallucinationSpec(
        objects=frozenset(obj.get("objects", [])),
        synonyms=dict(obj.get("synonyms", {})),
        object_words=frozenset(obj.get("object_words", [])),
    )


def parse_ensemble(obj: dict) -> EnsembleTokenDistributions:
    """Build an ensemble from its JSON form (kind 'probs' or 'logits')."""
    for key in ("vocab", "members", "tokens", "kind", "data"):
        if key not in obj:
            raise ValueError(f"ensemble object missing field {key!r}")
    vocab = Vocabulary(obj["vocab"])
    data = np.asarray(obj["data"], dtype=float)
    if data.ndim != 3 or data.shape[0] != obj["members"] or data.shape[1] != obj["tokens"]:
        raise ValueError(
            f"ensemble data shape {data.shape} inconsistent with "
            f"members={obj['members']}, tokens={obj['tokens']}"
        )
    kind = obj["kind"]
    if kind == "probs":
        return EnsembleTokenDistributions(vocab, data)
    if kind == "logits":
        return EnsembleTokenDistributions.from_logits(vocab, data)
    raise ValueError(f"unknown ensemble kind {kind!r}")


def load_ensemble(path) -> EnsembleTokenDistributions:
    with open(path, encoding="utf-8") as fh:
        return parse_ensemble(json.load(fh))


def ensemble_to_json(ens: EnsembleTokenDistributions) -> dict:
    return {
        "vocab": list(ens.vocab.tokens),
        "members": ens.member_count,
        "tokens": ens.token_count,
        "kind": "probs",
        "data": ens.probs.tolist(),
    }


def _check_index(ens: EnsembleTokenDistributions, token_index: int):
    if not 0 <= token_index < ens.token_count:
        raise IndexError(f"token index {token_index} out of range [0, {ens.token_count})")


def mixture_distribution(ens: EnsembleTokenDistributions, token_index: int) -> np.ndarray:
    """Predictive distribution at a position: arithmetic mean over members."""
    _check_index(ens, token_index)
    return ens.probs[:, token_index, :].mean(axis=0)


def token_uncertainty(ens: EnsembleTokenDistributions, token_index: int) -> TokenUncertainty:
    """Decompose the mixture entropy at one position into aleatoric + epistemic."""
    _check_index(ens, token_index)
    members = ens.probs[:, token_index, :]
    u_al = float(entropy_rows(members).mean())
    h_total = entropy(members.mean(axis=0))
    u_ep_raw = h_total - u_al
    if u_ep_raw < -EP_CLAMP and ens.member_count > 1:
        # Jensen violation beyond float noise would mean broken inputs
        raise ValueError(f"epistemic uncertainty {u_ep_raw} below clamp tolerance")
    u_ep = 0.0 if ens.member_count == 1 else max(u_ep_raw, 0.0)
    return TokenUncertainty(h_total=h_total, u_al=u_al, u_ep=u_ep, u_ep_raw=u_ep_raw)


def sentence_uncertainty(ens: EnsembleTokenDistributions) -> SentenceUncertainty:
    """Token-level decomposition plus sentence means."""
    per_token = tuple(token_uncertainty(ens, t) for t in range(ens.token_count))
    return SentenceUncertainty(
        per_token=per_token,
        mean_al=float(np.mean([u.u_al for u in per_token])),
        mean_ep=float(np.mean([u.u_ep for u in per_token])),
        mean_total=float(np.mean([u.h_total for u in per_token])),
    )


def sequence_log_prob(ens: EnsembleTokenDistributions, token_sequence) -> float:
    """Log probability of a token-index sequence under the per-position mixtures.

    Zero (or sub-floor) mixture probabilities contribute ln(1e-12) instead of
    -inf so a single impossible token cannot sink the whole sequence score.
    """
    seq = list(token_sequence)
    if len(seq) != ens.token_count:
        raise ValueError(f"sequence length {len(seq)} != token count {ens.token_count}")
    total = 0.0
    for t, idx in enumerate(seq):
        if not 0 <= idx < len(ens.vocab):
            raise IndexError(f"vocab index {idx} out of range at position {t}")
        p = float(mixture_distribution(ens, t)[idx])
        total += float(np.log(max(p, LOG_PROB_FLOOR)))
    return total


def _hallucinated_vocab_mask(ens: EnsembleTokenDistributions, spec: HallucinationSpec) -> np.ndarray:
    return np.array([spec.is_hallucinated(tok) for tok in ens.vocab.tokens], dtype=bool)


def hallucinated_mass(
    ens: EnsembleTokenDistributions, token_index: int, spec: HallucinationSpec
) -> float:
    """Mixture probability mass on hallucinated vocabulary tokens."""
    _check_index(ens, token_index)
    mix = mixture_distribution(ens, token_index)
    return float(mix[_hallucinated_vocab_mask(ens, spec)].sum())


def entropy_split(
    ens: EnsembleTokenDistributions, token_index: int, spec: HallucinationSpec
) -> tuple[float, float]:
    """Partial entropies over the relevant / hallucinated vocabulary partition.

    The two parts sum to the mixture entropy for any partition.
    """
    _check_index(ens, token_index)
    mix = mixture_distribution(ens, token_index)
    mask = _hallucinated_vocab_mask(ens, spec)
    hallucinated = entropy(mix[mask]) if mask.any() else 0.0
    relevant = entropy(mix[~mask]) if (~mask).any() else 0.0
    return relevant, hallucinated


def hallucination_ratio(caption_tokens, spec: HallucinationSpec) -> float:
    """Fraction of the caption's object words that are hallucinated.

    Captions with no object words at all score 0 (nothing to hallucinate).
    """
    tokens = list(caption_tokens)
    if not tokens:
        raise ValueError("empty caption")
    object_tokens = [t for t in tokens if spec.is_object_word(t)]
    if not object_tokens:
        return 0.0
    bad = sum(1 for t in object_tokens if spec.is_hallucinated(t))
    return bad / len(object_tokens)


def hallucination_bucket(ratio: float) -> str:
    """Map a ratio in [0, 1] to one of the five buckets G1..G5."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio {ratio} outside [0, 1]")
    for name, lo in zip(reversed(BUCKET_NAMES), reversed(_BUCKET_EDGES)):
        if ratio >= lo:
            return name
    return "G1"  # unreachable; ratio >= 0.0 always matches


@dataclass(frozen=True)
class QuartileStats:
    count: int
    minimum: float | None = None
    q1: float | None = None
    median: float | None = None
    q3: float | None = None
    maximum: float | None = None


def _quartiles(values: list[float]) -> QuartileStats:
    if not values:
        return QuartileStats(count=0)
    lo, q1, med, q3, hi = np.percentile(values, [0, 25, 50, 75, 100])
    return QuartileStats(
        count=len(values),
        minimum=float(lo),
        q1=float(q1),
        median=float(med),
        q3=float(q3),
        maximum=float(hi),
    )


def group_uncertainty_report(items) -> dict[str, dict[str, QuartileStats]]:
    """Boxplot statistics of sentence-mean uncertainties per ratio bucket.

    ``items`` is an iterable of (SentenceUncertainty, bucket name) pairs.
    Every bucket G1..G5 appears in the result; empty buckets carry count 0.
    """
    grouped: dict[str, dict[str, list[float]]] = {
        name: {"al": [], "ep": []} for name in BUCKET_NAMES
    }
    for sent, bucket in items:
        if bucket not in grouped:
            raise ValueError(f"unknown bucket {bucket!r}")
        grouped[bucket]["al"].append(sent.mean_al)
        grouped[bucket]["ep"].append(sent.mean_ep)
    return {
        name: {"al": _quartiles(vals["al"]), "ep": _quartiles(vals["ep"])}
        for name, vals in grouped.items()
    }


def relative_sentence_uncertainty(
    sent: SentenceUncertainty, hallucinated_flags
) -> tuple[float | None, float | None]:
    """Sentence-mean uncertainty divided by the mean over hallucinated tokens.

    Alternative caption-level statistic to the plain mean; ``None`` when the
    caption has no hallucinated tokens or the hallucinated mean is 0.
    """
    flags = list(hallucinated_flags)
    if len(flags) != len(sent.per_token):
        raise ValueError("flag count does not match token count")
    marked = [u for u, f in zip(sent.per_token, flags) if f]
    if not marked:
        return None, None
    hal_al = float(np.mean([u.u_al for u in marked]))
    hal_ep = float(np.mean([u.u_ep for u in marked]))
    rel_al = sent.mean_al / hal_al if hal_al > 0 else None
    rel_ep = sent.mean_ep / hal_ep if hal_ep > 0 else None
    return rel_al, rel_ep
