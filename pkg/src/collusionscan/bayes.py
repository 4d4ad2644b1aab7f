"""Probabilistic collusion-possibility scoring.

A multivariate Bernoulli model over the permission vocabulary: each
permission j is an independent Bernoulli variable with parameter
lambda_j, estimated by maximum posterior under an informative beta
prior (alpha = 1, beta chosen per permission criticality as 1, N or
2N). An app set's threat likelihood l_tau is the negative log
likelihood of its union permission vector, normalised by the model's
maximum attainable value so it always lands in [0, 1]; the collusion
possibility is l_tau gated by a binary communication indicator.

Training data is unlabelled for the estimator itself (labels ride along
for calibration tooling). Because the original training corpus is not
available, a synthetic two-population generator is included.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .app_model import AppDescriptor
from .errors import (
    ConfigError,
    DegenerateMatrix,
    EmptyAppSet,
    EmptyTrainingSet,
    VocabularyMismatch,
)
from . import rule_engine

DEFAULT_THRESHOLD = 0.55
ALPHA = 1  # fixed prior pseudo-count for the "present" side


class CriticalityClass(enum.Enum):
    MostCritical = "most_critical"
    Critical = "critical"
    NonCritical = "non_critical"

    def beta(self, n_train: int) -> int:
        if self is CriticalityClass.MostCritical:
            return 2 * n_train
        if self is CriticalityClass.Critical:
            return n_train
        return 1


DEFAULT_CRITICALITY: dict[str, CriticalityClass] = {
    "SEND_SMS": CriticalityClass.MostCritical,
    "CALL_PHONE": CriticalityClass.MostCritical,
    "READ_CONTACTS": CriticalityClass.MostCritical,
    "INTERNET": CriticalityClass.Critical,
    "ACCESS_FINE_LOCATION": CriticalityClass.Critical,
    "READ_SMS": CriticalityClass.Critical,
}


def load_criticality(text: str) -> dict[str, CriticalityClass]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid criticality JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("criticality config must be a JSON object")
    out = {}
    for perm, name in doc.items():
        try:
            out[perm] = CriticalityClass(name)
        except ValueError:
            raise ConfigError(f"{perm}: unknown criticality {name!r}") from None
    return out


@dataclass(frozen=True)
class PermissionVector:
    """A 0/1 vector over an ordered permission vocabulary."""

    bits: tuple[int, ...]
    vocabulary: tuple[str, ...]

    def __post_init__(self):
        if len(self.bits) != len(self.vocabulary):
            raise ValueError("bits and vocabulary must have equal length")
        if len(set(self.vocabulary)) != len(self.vocabulary):
            raise ValueError("vocabulary must not contain duplicates")
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("bits must be 0 or 1")


@dataclass(frozen=True)
class BernoulliModel:
    vocabulary: tuple[str, ...]
    lambda_hat: tuple[float, ...]
    criticality: Mapping[str, CriticalityClass] = field(default_factory=dict)
    n_train: int = 1

    def __post_init__(self):
        if len(self.lambda_hat) != len(self.vocabulary):
            raise ValueError("lambda_hat and vocabulary must have equal length")
        if any(not (0.0 < lam < 1.0) for lam in self.lambda_hat):
            raise ValueError("lambda_hat entries must lie strictly inside (0, 1)")


class Verdict(enum.Enum):
    Colluding = "colluding"
    NonColluding = "non_colluding"


@dataclass(frozen=True)
class ScoreReport:
    l_tau: float
    l_com: int
    possibility: float
    verdict: Verdict
    threshold: float
    unknown_permissions: int = 0


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion matrix counts must be non-negative")


# ---------------------------------------------------------------------------
# Training


def estimate_lambdas(
    training: Sequence[PermissionVector],
    criticality: Optional[Mapping[str, CriticalityClass]] = None,
) -> BernoulliModel:
    """Maximum-posterior Bernoulli parameters under the beta prior.

    lambda_j = (sum_i y_ij + alpha) / (N + alpha + beta_j) with alpha = 1
    and beta_j resolved from the permission's criticality class
    (NonCritical when unlisted). The prior keeps every estimate strictly
    inside (0, 1).
    """
    if not training:
        raise EmptyTrainingSet("training set must contain at least one vector")
    if criticality is None:
        criticality = DEFAULT_CRITICALITY
    vocabulary = training[0].vocabulary
    for vec in training:
        if vec.vocabulary != vocabulary:
            raise VocabularyMismatch("all training vectors must share one vocabulary")
    n = len(training)
    lambdas = []
    for j, perm in enumerate(vocabulary):
        count = sum(vec.bits[j] for vec in training)
        beta = criticality.get(perm, CriticalityClass.NonCritical).beta(n)
        lambdas.append((count + ALPHA) / (n + ALPHA + beta))
    return BernoulliModel(
        vocabulary=vocabulary,
        lambda_hat=tuple(lambdas),
        criticality=dict(criticality),
        n_train=n,
    )


def probability(model: BernoulliModel, y: PermissionVector) -> float:
    """Product of Bernoulli factors, computed in log space."""
    if y.vocabulary != model.vocabulary:
        raise VocabularyMismatch("vector vocabulary differs from model vocabulary")
    log_p = 0.0
    for bit, lam in zip(y.bits, model.lambda_hat):
        log_p += math.log(lam) if bit else math.log(1.0 - lam)
    return math.exp(log_p)


# ---------------------------------------------------------------------------
# Scoring


def union_vector(
    model: BernoulliModel, appset: Sequence[AppDescriptor]
) -> tuple[PermissionVector, int]:
    """Union permission vector of the set, plus the count of permissions
    that fall outside the model vocabulary (ignored by the model)."""
    if not appset:
        raise EmptyAppSet("scoring requires at least one app")
    union: set[str] = set()
    for app in appset:
        union |= app.permissions
    unknown = len(union - set(model.vocabulary))
    bits = tuple(1 if perm in union else 0 for perm in model.vocabulary)
    return PermissionVector(bits, model.vocabulary), unknown


def l_tau_of_vector(model: BernoulliModel, y: PermissionVector) -> float:
    """Normalised surprise of a permission vector, in [0, 1].

    Raw value is ln(1 / P(Y)) = sum of per-permission surprise terms;
    dividing by the sum of per-term maxima makes the score model-intrinsic
    and keeps it inside [0, 1] regardless of vocabulary size.
    """
    if y.vocabulary != model.vocabulary:
        raise VocabularyMismatch("vector vocabulary differs from model vocabulary")
    raw = 0.0
    raw_max = 0.0
    for bit, lam in zip(y.bits, model.lambda_hat):
        hi = math.log(1.0 / lam)
        lo = math.log(1.0 / (1.0 - lam))
        raw += hi if bit else lo
        raw_max += max(hi, lo)
    return raw / raw_max if raw_max > 0.0 else 0.0


def l_tau(model: BernoulliModel, appset: Sequence[AppDescriptor]) -> float:
    vector, _ = union_vector(model, appset)
    return l_tau_of_vector(model, vector)


def l_com(appset: Sequence[AppDescriptor]) -> int:
    """1 iff any communication channel connects apps of the set."""
    if not appset:
        raise EmptyAppSet("l_com requires at least one app")
    facts: set = set()
    for app in appset:
        facts |= rule_engine.derive_channels(app)
    return 1 if rule_engine.derive_communications(facts) else 0


def score(
    model: BernoulliModel,
    appset: Sequence[AppDescriptor],
    threshold: float = DEFAULT_THRESHOLD,
) -> ScoreReport:
    """The full pipeline for one app set: L_tau, gated L_com, product.

    The communication check only runs when l_tau clears the threshold;
    below it, l_com is reported as 0 and the verdict is NonColluding.
    """
    if not (0.0 < threshold < 1.0):
        raise ConfigError("threshold must lie strictly between 0 and 1")
    vector, unknown = union_vector(model, appset)
    tau = l_tau_of_vector(model, vector)
    com = l_com(appset) if tau >= threshold else 0
    verdict = Verdict.Colluding if (tau >= threshold and com == 1) else Verdict.NonColluding
    return ScoreReport(
        l_tau=tau,
        l_com=com,
        possibility=tau * com,
        verdict=verdict,
        threshold=threshold,
        unknown_permissions=unknown,
    )


def metrics(cm: ConfusionMatrix) -> tuple[float, float, float]:
    """(precision, recall, F-measure)."""
    if cm.tp + cm.fp == 0 or cm.tp + cm.fn == 0:
        raise DegenerateMatrix("precision/recall undefined for this matrix")
    precision = cm.tp / (cm.tp + cm.fp)
    recall = cm.tp / (cm.tp + cm.fn)
    if precision + recall == 0.0:
        raise DegenerateMatrix("F-measure undefined when precision + recall = 0")
    f_measure = 2 * precision * recall / (precision + recall)
    return precision, recall, f_measure


# ---------------------------------------------------------------------------
# Model and training-set serialisation


def model_to_json(model: BernoulliModel) -> dict:
    return {
        "vocabulary": list(model.vocabulary),
        "lambda_hat": [f"{lam:.16e}" for lam in model.lambda_hat],
        "criticality": {p: c.value for p, c in sorted(model.criticality.items())},
        "n_train": model.n_train,
    }


def save_model(model: BernoulliModel) -> str:
    return json.dumps(model_to_json(model), indent=2) + "\n"


def load_model(text: str) -> BernoulliModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid model JSON: {exc}") from None
    try:
        return BernoulliModel(
            vocabulary=tuple(doc["vocabulary"]),
            lambda_hat=tuple(float(x) for x in doc["lambda_hat"]),
            criticality={
                p: CriticalityClass(c) for p, c in doc.get("criticality", {}).items()
            },
            n_train=int(doc.get("n_train", 1)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad model file: {exc}") from None


def training_to_csv(rows: Sequence[tuple[PermissionVector, str]]) -> str:
    if not rows:
        raise EmptyTrainingSet("nothing to serialise")
    vocabulary = rows[0][0].vocabulary
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(list(vocabulary) + ["label"])
    for vec, label in rows:
        writer.writerow(list(vec.bits) + [label])
    return buf.getvalue()


def training_from_csv(text: str) -> list[tuple[PermissionVector, str]]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyTrainingSet("training CSV is empty") from None
    if not header or header[-1] != "label":
        raise ConfigError("training CSV must end with a 'label' column")
    vocabulary = tuple(header[:-1])
    rows = []
    for i, row in enumerate(reader):
        if not row:
            continue
        if len(row) != len(header):
            raise ConfigError(f"row {i + 2}: expected {len(header)} columns")
        label = row[-1]
        if label not in ("malicious", "clean"):
            raise ConfigError(f"row {i + 2}: label must be 'malicious' or 'clean'")
        try:
            bits = tuple(int(c) for c in row[:-1])
        except ValueError:
            raise ConfigError(f"row {i + 2}: cells must be 0 or 1") from None
        rows.append((PermissionVector(bits, vocabulary), label))
    if not rows:
        raise EmptyTrainingSet("training CSV has no data rows")
    return rows


# ---------------------------------------------------------------------------
# Synthetic corpus (stand-in for the unavailable industrial training set)


def synthetic_training_set(
    vocabulary: Sequence[str],
    n_malicious: int,
    n_clean: int,
    seed: int = 0,
    p_malicious: Optional[Sequence[float]] = None,
    p_clean: Optional[Sequence[float]] = None,
) -> list[tuple[PermissionVector, str]]:
    """Labelled vectors from two Bernoulli populations.

    Defaults make malicious apps permission-hungry (per-permission rate
    0.65) and clean apps frugal (rate 0.12), which is enough separation
    for calibration sanity checks.
    """
    vocab = tuple(vocabulary)
    k = len(vocab)
    rng = np.random.default_rng(seed)
    pm = np.asarray(p_malicious if p_malicious is not None else [0.65] * k)
    pc = np.asarray(p_clean if p_clean is not None else [0.12] * k)
    rows: list[tuple[PermissionVector, str]] = []
    for _ in range(n_malicious):
        bits = tuple(int(b) for b in (rng.random(k) < pm))
        rows.append((PermissionVector(bits, vocab), "malicious"))
    for _ in range(n_clean):
        bits = tuple(int(b) for b in (rng.random(k) < pc))
        rows.append((PermissionVector(bits, vocab), "clean"))
    return rows


def sweep_threshold(
    scored: Iterable[tuple[float, bool]], steps: int = 99
) -> tuple[float, float]:
    """Pick the threshold in (0, 1) maximising F-measure on (l_tau, truth) pairs."""
    pairs = list(scored)
    best = (DEFAULT_THRESHOLD, -1.0)
    for i in range(1, steps + 1):
        theta = i / (steps + 1)
        tp = sum(1 for tau, truth in pairs if tau >= theta and truth)
        fp = sum(1 for tau, truth in pairs if tau >= theta and not truth)
        fn = sum(1 for tau, truth in pairs if tau < theta and truth)
        if tp == 0:
            continue
        precision = tp / (tp + fp)
        recall = tp / (tp + fn)
        f = 2 * precision * recall / (precision + recall)
        if f > best[1]:
            best = (theta, f)
    return best
