"""Detection and caption-quality metrics.

Detection: AUC (Mann-Whitney, exact rational arithmetic) and thresholded
accuracy. Captions: corpus BLEU-4, ROUGE-L, METEOR (exact matching only) and
CIDEr, plus their arithmetic average. Tokenization everywhere is lowercase
words with punctuation removed.
"""

# Import built-in modules
from collections import Counter
from collections.abc import Iterable
from collections.abc import Sequence
from dataclasses import dataclass
from dataclasses import field
from fractions import Fraction
from itertools import groupby
import math
from pathlib import Path

# Import third-party modules
from loguru import logger
import numpy as np
from pydantic import BaseModel
from pydantic import Field

# Import local modules
from authguard.config import MetricsConfig
from authguard.errors import AuthGuardError
from authguard.errors import ErrorCode
from authguard.utils import read_jsonl
from authguard.utils import word_tokens
from authguard.utils import write_jsonl

MAX_NGRAM = 4
CIDER_SCALE = 10.0

Tokens = list[str]


@dataclass
class ScoredSet:
    """Detector scores with binary ground truth (1 = fake)."""

    scores: Sequence[float]
    labels: Sequence[int]

    def __post_init__(self) -> None:
        if len(self.scores) != len(self.labels):
            raise AuthGuardError(
                f"{len(self.scores)} scores but {len(self.labels)} labels", ErrorCode.VALIDATION_ERROR
            )
        if any(label not in (0, 1) for label in self.labels):
            raise AuthGuardError("Labels must be 0 or 1", ErrorCode.VALIDATION_ERROR)


@dataclass
class CaptionItem:
    hypothesis: Tokens
    references: list[Tokens]

    def __post_init__(self) -> None:
        if not self.references:
            raise AuthGuardError("Every caption item needs at least one reference", ErrorCode.VALIDATION_ERROR)


@dataclass
class CaptionEvalSet:
    """Tokenized hypotheses with their references."""

    items: list[CaptionItem] = field(default_factory=list)

    @classmethod
    def from_texts(cls, pairs: Iterable[tuple[str, Sequence[str]]]) -> "CaptionEvalSet":
        """Tokenize ``(hypothesis, references)`` text pairs."""
        return cls(
            [
                CaptionItem(word_tokens(hypothesis), [word_tokens(ref) for ref in references])
                for hypothesis, references in pairs
            ]
        )

    def __len__(self) -> int:
        return len(self.items)


def _require_items(eval_set: CaptionEvalSet, minimum: int = 1) -> None:
    if len(eval_set) < minimum:
        raise AuthGuardError(
            f"Need at least {minimum} caption item(s), got {len(eval_set)}", ErrorCode.EMPTY_INPUT
        )


def auc(scored: ScoredSet) -> float:
    """Probability that a random positive outscores a random negative, ties counting half.

    Raises:
        AuthGuardError: If only one class is present.

    """
    positives = sum(scored.labels)
    negatives = len(scored.labels) - positives
    if positives == 0 or negatives == 0:
        raise AuthGuardError("AUC needs both positive and negative samples", ErrorCode.VALIDATION_ERROR)

    wins = Fraction(0)
    negatives_below = 0
    ranked = sorted(zip(scored.scores, scored.labels), key=lambda pair: pair[0])
    for _, group in groupby(ranked, key=lambda pair: pair[0]):
        group_labels = [label for _, label in group]
        group_pos = sum(group_labels)
        group_neg = len(group_labels) - group_pos
        wins += group_pos * negatives_below + Fraction(group_pos * group_neg, 2)
        negatives_below += group_neg
    return float(wins / (positives * negatives))


def accuracy(scored: ScoredSet, threshold: float = 0.5) -> float:
    """Fraction of samples where ``score >= threshold`` agrees with the label."""
    if not scored.scores:
        raise AuthGuardError("Accuracy needs at least one sample", ErrorCode.EMPTY_INPUT)
    predicted = np.asarray(scored.scores, dtype=np.float64) >= threshold
    return float(np.mean(predicted == np.asarray(scored.labels, dtype=bool)))


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(eval_set: CaptionEvalSet, epsilon: float = 1e-9) -> float:
    """Corpus BLEU with uniform 1..4-gram weights and a brevity penalty.

    Zero n-gram precisions are replaced by ``epsilon``.
    """
    _require_items(eval_set)
    matched = [0] * MAX_NGRAM
    proposed = [0] * MAX_NGRAM
    hyp_length = 0
    ref_length = 0
    for item in eval_set.items:
        hyp_length += len(item.hypothesis)
        # closest reference length, shorter one on ties
        ref_length += min((abs(len(ref) - len(item.hypothesis)), len(ref)) for ref in item.references)[1]
        for n in range(1, MAX_NGRAM + 1):
            hyp_counts = ngrams(item.hypothesis, n)
            max_ref_counts: Counter = Counter()
            for ref in item.references:
                max_ref_counts |= ngrams(ref, n)
            matched[n - 1] += sum(min(count, max_ref_counts[gram]) for gram, count in hyp_counts.items())
            proposed[n - 1] += sum(hyp_counts.values())

    if hyp_length == 0:
        return 0.0
    log_precision = 0.0
    for n in range(MAX_NGRAM):
        precision = matched[n] / proposed[n] if matched[n] > 0 else epsilon
        log_precision += math.log(precision) / MAX_NGRAM
    brevity = 1.0 if hyp_length > ref_length else math.exp(1 - ref_length / hyp_length)
    return brevity * math.exp(log_precision)


def lcs_length(a: Tokens, b: Tokens) -> int:
    """Length of the longest common subsequence."""
    previous = [0] * (len(b) + 1)
    for token in a:
        current = [0]
        for j, other in enumerate(b, 1):
            current.append(previous[j - 1] + 1 if token == other else max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def rouge_l(eval_set: CaptionEvalSet, beta: float = 1.2) -> float:
    """Mean over items of the best-reference LCS F-measure."""
    _require_items(eval_set)
    scores = []
    for item in eval_set.items:
        best = 0.0
        for ref in item.references:
            lcs = lcs_length(item.hypothesis, ref)
            if lcs == 0:
                continue
            precision = lcs / len(item.hypothesis)
            recall = lcs / len(ref)
            best = max(best, (1 + beta**2) * precision * recall / (recall + beta**2 * precision))
        scores.append(best)
    return float(np.mean(scores))


def _align(hypothesis: Tokens, reference: Tokens) -> list[tuple[int, int]]:
    """Greedy exact-match alignment that prefers continuing the previous chunk.

    Each hypothesis token takes the reference position right after the previous
    match when it can, otherwise its first unused occurrence. This maximises the
    match count but not always the chunk count: for ``a b`` against ``a c a b``
    it aligns ``a`` to position 0 and yields two chunks where one is possible.
    """
    used: set[int] = set()
    alignment: list[tuple[int, int]] = []
    previous: int | None = None
    for i, token in enumerate(hypothesis):
        candidates = [j for j, other in enumerate(reference) if other == token and j not in used]
        if not candidates:
            previous = None
            continue
        j = previous + 1 if previous is not None and previous + 1 in candidates else candidates[0]
        used.add(j)
        alignment.append((i, j))
        previous = j
    return alignment


def _meteor_item(hypothesis: Tokens, reference: Tokens) -> float:
    alignment = _align(hypothesis, reference)
    matches = len(alignment)
    if matches == 0:
        return 0.0
    chunks = 1
    for (i_prev, j_prev), (i, j) in zip(alignment, alignment[1:]):
        if i != i_prev + 1 or j != j_prev + 1:
            chunks += 1
    precision = matches / len(hypothesis)
    recall = matches / len(reference)
    f_mean = 10 * precision * recall / (recall + 9 * precision)
    penalty = 0.5 * (chunks / matches) ** 3
    return f_mean * (1 - penalty)


def meteor(eval_set: CaptionEvalSet) -> float:
    """METEOR with exact unigram matching, best reference per item.

    Alignments come from ``_align``, a left-to-right greedy matcher, so the
    fragmentation penalty can exceed that of the fewest-chunk alignment when a
    token repeats in the reference.
    """
    _require_items(eval_set)
    return float(
        np.mean([max(_meteor_item(item.hypothesis, ref) for ref in item.references) for item in eval_set.items])
    )


def _tfidf(counts: Counter, document_frequency: Counter, corpus_size: int) -> dict[tuple, float]:
    return {gram: count * math.log(corpus_size / max(1, document_frequency[gram])) for gram, count in counts.items()}


def _cosine(a: dict[tuple, float], b: dict[tuple, float]) -> float:
    norm_a = math.sqrt(sum(value * value for value in a.values()))
    norm_b = math.sqrt(sum(value * value for value in b.values()))
    if norm_a == 0 or norm_b == 0:
        return 0.0
    return sum(value * b.get(gram, 0.0) for gram, value in a.items()) / (norm_a * norm_b)


def cider(eval_set: CaptionEvalSet, sigma: float = 6.0) -> float:
    """TF-IDF n-gram consensus score with a Gaussian length penalty.

    Document frequencies are counted over the reference set of each item.

    Raises:
        AuthGuardError: With fewer than two items.

    """
    if len(eval_set) < 2:
        raise AuthGuardError(
            "CIDEr needs at least 2 items to estimate document frequencies", ErrorCode.VALIDATION_ERROR
        )
    corpus_size = len(eval_set)
    document_frequency: list[Counter] = []
    for n in range(1, MAX_NGRAM + 1):
        frequency: Counter = Counter()
        for item in eval_set.items:
            frequency.update(set().union(*(ngrams(ref, n).keys() for ref in item.references)))
        document_frequency.append(frequency)

    scores = []
    for item in eval_set.items:
        per_n = []
        for n in range(1, MAX_NGRAM + 1):
            df = document_frequency[n - 1]
            hyp_vector = _tfidf(ngrams(item.hypothesis, n), df, corpus_size)
            similarities = []
            for ref in item.references:
                ref_vector = _tfidf(ngrams(ref, n), df, corpus_size)
                delta = len(item.hypothesis) - len(ref)
                similarities.append(_cosine(hyp_vector, ref_vector) * math.exp(-(delta**2) / (2 * sigma**2)))
            per_n.append(float(np.mean(similarities)))
        scores.append(CIDER_SCALE * float(np.mean(per_n)))
    return float(np.mean(scores))


def vqa_average(b4: float, cid: float, rl: float, met: float) -> float:
    """Arithmetic mean of the four caption metrics."""
    values = (b4, cid, rl, met)
    if not all(math.isfinite(value) for value in values):
        raise AuthGuardError(f"Caption metrics must be finite, got {values}", ErrorCode.NUMERICAL_ERROR)
    return sum(values) / len(values)


class Prediction(BaseModel):
    """One line of a predictions file."""

    image_id: str
    score: float
    label: int = Field(ge=0, le=1)
    artifact_kind: str | None = None
    uncertainty: float | None = None
    hypothesis: str | None = None
    references: list[str] | None = None
    verdict: str | None = None


class EvalReport(BaseModel):
    """Metric name to value map serialized by ``authguard eval``."""

    auc: float
    accuracy: float
    bleu4: float | None = None
    cider: float | None = None
    rouge_l: float | None = None
    meteor: float | None = None
    vqa_average: float | None = None
    n: int
    config_hash: str | None = None
    per_kind_auc: dict[str, float] = Field(default_factory=dict)
    mean_uncertainty: float | None = None
    verdict_agreement: float | None = None


def per_kind_auc(predictions: Sequence[Prediction]) -> dict[str, float]:
    """AUC of each fake artifact kind against all real samples."""
    reals = [p for p in predictions if p.label == 0]
    kinds = sorted({p.artifact_kind for p in predictions if p.label == 1 and p.artifact_kind})
    result = {}
    if not reals:
        return result
    for kind in kinds:
        subset = reals + [p for p in predictions if p.label == 1 and p.artifact_kind == kind]
        result[kind] = auc(ScoredSet([p.score for p in subset], [p.label for p in subset]))
    return result


def evaluate_predictions(
    predictions: Sequence[Prediction],
    cfg: MetricsConfig | None = None,
    config_hash: str | None = None,
) -> EvalReport:
    """Score a predictions set.

    Caption metrics are reported when at least two predictions carry a
    hypothesis and references.

    Args:
        predictions: Per-image predictions.
        cfg: Metric parameters.
        config_hash: Hash of the run configuration that produced the predictions.

    Returns:
        EvalReport: Detection metrics, caption metrics when available, and extras.

    """
    cfg = cfg or MetricsConfig()
    if not predictions:
        raise AuthGuardError("No predictions to evaluate", ErrorCode.EMPTY_INPUT)
    scored = ScoredSet([p.score for p in predictions], [p.label for p in predictions])
    report = EvalReport(
        auc=auc(scored),
        accuracy=accuracy(scored, cfg.threshold),
        n=len(predictions),
        config_hash=config_hash,
        per_kind_auc=per_kind_auc(predictions),
    )
    uncertainties = [p.uncertainty for p in predictions if p.uncertainty is not None]
    if uncertainties:
        report.mean_uncertainty = float(np.mean(uncertainties))

    verdicts = [p for p in predictions if p.verdict is not None]
    if verdicts:
        agreement = [(p.verdict == "fake") == (p.score >= cfg.threshold) for p in verdicts]
        report.verdict_agreement = float(np.mean(agreement))

    captioned = [(p.hypothesis, p.references) for p in predictions if p.hypothesis is not None and p.references]
    if len(captioned) >= 2:
        eval_set = CaptionEvalSet.from_texts(captioned)
        report.bleu4 = bleu4(eval_set, cfg.bleu_epsilon)
        report.cider = cider(eval_set, cfg.cider_sigma)
        report.rouge_l = rouge_l(eval_set, cfg.rouge_beta)
        report.meteor = meteor(eval_set)
        report.vqa_average = vqa_average(report.bleu4, report.cider, report.rouge_l, report.meteor)
    elif captioned:
        logger.warning("Caption metrics need at least 2 captioned predictions; skipping")
    return report


def write_predictions(path: str | Path, predictions: Iterable[Prediction]) -> int:
    return write_jsonl(path, (p.model_dump(mode="json", exclude_none=True) for p in predictions))


def read_predictions(path: str | Path) -> list[Prediction]:
    return [Prediction.model_validate(row) for row in read_jsonl(path)]
