"""Test cases for metrics module."""

# Import built-in modules
from fractions import Fraction
import math
import random

# Import third-party modules
import pytest

# Import local modules
from authguard.config import MetricsConfig
from authguard.errors import AuthGuardError
from authguard.errors import ErrorCode
from authguard.metrics import CaptionEvalSet
from authguard.metrics import Prediction
from authguard.metrics import ScoredSet
from authguard.metrics import accuracy
from authguard.metrics import auc
from authguard.metrics import bleu4
from authguard.metrics import cider
from authguard.metrics import evaluate_predictions
from authguard.metrics import lcs_length
from authguard.metrics import meteor
from authguard.metrics import read_predictions
from authguard.metrics import rouge_l
from authguard.metrics import vqa_average
from authguard.metrics import write_predictions


def _single(hypothesis: str, reference: str) -> CaptionEvalSet:
    return CaptionEvalSet.from_texts([(hypothesis, [reference])])


def _brute_force_auc(scores, labels) -> float:
    positives = [s for s, y in zip(scores, labels) if y == 1]
    negatives = [s for s, y in zip(scores, labels) if y == 0]
    wins = Fraction(0)
    for p in positives:
        for n in negatives:
            wins += 1 if p > n else Fraction(1, 2) if p == n else 0
    return float(wins / (len(positives) * len(negatives)))


@pytest.mark.parametrize(
    ("scores", "labels", "expected"),
    [
        ((0.9, 0.1), (1, 0), 1.0),
        ((0.3, 0.3, 0.3, 0.3), (1, 0, 1, 0), 0.5),
        ((0.8, 0.6, 0.4, 0.2), (1, 0, 1, 0), 0.75),
    ],
)
def test_auc_examples(scores, labels, expected):
    """Test perfect separation, all ties and a hand-counted case."""
    assert auc(ScoredSet(scores, labels)) == expected


def test_auc_matches_pairwise_oracle():
    """Test exact agreement with the O(P*N) pairwise count on random instances with ties."""
    rng = random.Random(0)
    for _ in range(200):
        size = rng.randint(2, 30)
        labels = [rng.randint(0, 1) for _ in range(size)]
        labels[0], labels[1] = 0, 1
        scores = [rng.randint(0, 6) / 6 for _ in range(size)]
        assert auc(ScoredSet(scores, labels)) == _brute_force_auc(scores, labels)


def test_auc_invariances():
    """Test monotone-transform invariance and label-flip complement."""
    rng = random.Random(1)
    scores = [rng.random() for _ in range(40)]
    labels = [i % 2 for i in range(40)]
    base = auc(ScoredSet(scores, labels))
    assert auc(ScoredSet([math.exp(3 * s) - 7 for s in scores], labels)) == base
    assert auc(ScoredSet(scores, [1 - y for y in labels])) == pytest.approx(1 - base, abs=1e-15)


def test_auc_single_class():
    """Test that one-class input is rejected."""
    with pytest.raises(AuthGuardError) as exc_info:
        auc(ScoredSet([0.1, 0.2], [1, 1]))
    assert exc_info.value.error_code == ErrorCode.VALIDATION_ERROR


def test_scored_set_validation():
    """Test length and label checks."""
    with pytest.raises(AuthGuardError):
        ScoredSet([0.1], [0, 1])
    with pytest.raises(AuthGuardError):
        ScoredSet([0.1, 0.2], [0, 2])


def test_accuracy_examples():
    """Test perfect, inverted and boundary cases."""
    assert accuracy(ScoredSet([0.9, 0.1], [1, 0])) == 1.0
    assert accuracy(ScoredSet([0.1, 0.9], [1, 0])) == 0.0
    assert accuracy(ScoredSet([0.6, 0.6], [1, 0]), threshold=0.5) == 0.5
    assert accuracy(ScoredSet([0.5], [1])) == 1.0


def test_bleu4_identity_and_disjoint():
    """Test BLEU-4 at its maximum and on disjoint tokens."""
    assert bleu4(_single("the eyes look misaligned here", "the eyes look misaligned here")) == pytest.approx(1.0)
    assert bleu4(_single("a b c d", "w x y z")) <= 1e-6


def test_bleu4_brevity_penalty():
    """Test the closed-form brevity penalty with perfect precisions."""
    assert bleu4(_single("a b c d", "a b c d e")) == pytest.approx(math.exp(1 - 5 / 4), abs=1e-6)
    assert bleu4(_single("a b c d", "a b c d e")) == pytest.approx(0.7788, abs=1e-4)


def test_bleu4_uses_closest_reference_length():
    """Test that the reference closest in length sets the brevity penalty."""
    eval_set = CaptionEvalSet.from_texts([("a b c d", ["a b c d e f g h", "a b c d"])])
    assert bleu4(eval_set) == pytest.approx(1.0)


def test_lcs_length():
    """Test LCS on a transposition."""
    assert lcs_length(list("abcd"), list("acbd")) == 3
    assert lcs_length([], list("ab")) == 0


def test_rouge_l_examples():
    """Test identical, disjoint and hand-computed LCS cases."""
    assert rouge_l(_single("a b c d", "a b c d")) == pytest.approx(1.0)
    assert rouge_l(_single("a b", "c d")) == 0.0
    assert rouge_l(_single("a b c d", "a c b d")) == pytest.approx(0.75, abs=1e-6)


def test_rouge_l_is_mean_over_items():
    """Test corpus ROUGE-L as the item mean."""
    eval_set = CaptionEvalSet.from_texts([("a b c d", ["a b c d"]), ("a b", ["c d"])])
    assert rouge_l(eval_set) == pytest.approx(0.5)


def test_meteor_examples():
    """Test the identical-caption value, zero matches and the reorder penalty."""
    identical = meteor(_single("a b c d", "a b c d"))
    assert identical == pytest.approx(0.9921875, abs=1e-6)
    assert meteor(_single("a b", "c d")) == 0.0
    reordered = meteor(_single("b a d c", "a b c d"))
    assert reordered < identical


def test_meteor_repeated_tokens():
    """Test that a repeated reference token is aligned once per occurrence."""
    # two matches in one chunk: P = 2/3, R = 1
    precision, recall = 2 / 3, 1.0
    f_mean = 10 * precision * recall / (recall + 9 * precision)
    expected = f_mean * (1 - 0.5 * (1 / 2) ** 3)
    assert meteor(_single("a a a", "a a")) == pytest.approx(expected, abs=1e-12)


def test_meteor_greedy_alignment_on_repeated_reference_token():
    """Test that the first occurrence of a repeated token is taken, giving two chunks."""
    f_mean = 10 * 1.0 * 0.5 / (0.5 + 9 * 1.0)
    greedy = f_mean * (1 - 0.5 * (2 / 2) ** 3)
    assert meteor(_single("a b", "a c a b")) == pytest.approx(greedy, abs=1e-12)
    assert meteor(_single("a b", "a c a b")) < f_mean * (1 - 0.5 * (1 / 2) ** 3)


def test_cider_fixture():
    """Test CIDEr against a step-by-step TF-IDF computation on three items."""
    eval_set = CaptionEvalSet.from_texts([("a b", ["a b"]), ("c d", ["c e"]), ("a g h", ["a g"])])
    low_idf, high_idf = math.log(1.5), math.log(3)
    unigram_cos = math.sqrt((low_idf**2 + high_idf**2) / (low_idf**2 + 2 * high_idf**2))
    third = 10 * math.exp(-1 / 72) * (unigram_cos + 1 / math.sqrt(2)) / 4
    expected = (5 + 1.25 + third) / 3
    assert cider(eval_set) == pytest.approx(expected, abs=1e-6)


def test_cider_zero_overlap_and_nonnegative():
    """Test zero for disjoint hypotheses and nonnegativity on random sets."""
    assert cider(CaptionEvalSet.from_texts([("x y", ["a b"]), ("z w", ["c d"])])) == 0.0
    rng = random.Random(2)
    words = list("abcdef")
    for _ in range(20):
        pairs = [
            (" ".join(rng.choices(words, k=rng.randint(1, 6))), [" ".join(rng.choices(words, k=rng.randint(1, 6)))])
            for _ in range(4)
        ]
        assert cider(CaptionEvalSet.from_texts(pairs)) >= 0.0


def test_cider_needs_two_items():
    """Test that a single item cannot estimate document frequencies."""
    with pytest.raises(AuthGuardError) as exc_info:
        cider(_single("a b", "a b"))
    assert exc_info.value.error_code == ErrorCode.VALIDATION_ERROR


def test_caption_metrics_are_pure():
    """Test that repeated evaluation is bit-identical."""
    eval_set = CaptionEvalSet.from_texts([("the eyes look odd", ["the eyes are odd"]), ("a mouth", ["the mouth"])])
    for metric in (bleu4, rouge_l, meteor, cider):
        assert metric(eval_set) == metric(eval_set)


def test_caption_metrics_tokenize_case_and_punctuation():
    """Test that case and punctuation do not affect the score."""
    assert rouge_l(_single("The EYES, look odd!", "the eyes look odd")) == pytest.approx(1.0)


def test_vqa_average_rows():
    """Test the averaged caption quality of two published rows and all zeros."""
    assert vqa_average(0.4980, 3.3050, 0.6950, 0.4010) == pytest.approx(1.2248, abs=5e-4)
    assert vqa_average(0.4075, 2.0567, 0.6085, 0.3463) == pytest.approx(0.85475, abs=1e-9)
    assert vqa_average(0.0, 0.0, 0.0, 0.0) == 0.0


def test_vqa_average_rejects_non_finite():
    """Test that NaN inputs raise."""
    with pytest.raises(AuthGuardError) as exc_info:
        vqa_average(float("nan"), 1.0, 1.0, 1.0)
    assert exc_info.value.error_code == ErrorCode.NUMERICAL_ERROR


def _predictions() -> list[Prediction]:
    return [
        Prediction(
            image_id="img-000000",
            score=0.1,
            label=0,
            artifact_kind="none",
            uncertainty=0.2,
            hypothesis="This image is real.",
            references=["This image is real."],
            verdict="real",
        ),
        Prediction(
            image_id="img-000001",
            score=0.8,
            label=1,
            artifact_kind="mouth_warp",
            uncertainty=0.4,
            hypothesis="This image is fake. The mouth is warped.",
            references=["This image is fake. The mouth looks warped."],
            verdict="fake",
        ),
        Prediction(
            image_id="img-000003",
            score=0.6,
            label=1,
            artifact_kind="eye_asymmetry",
            hypothesis="This image is real.",
            references=["This image is fake."],
            verdict="real",
        ),
    ]


def test_evaluate_predictions():
    """Test detection, caption and agreement fields of the report."""
    report = evaluate_predictions(_predictions(), MetricsConfig(), config_hash="abc")
    assert report.auc == 1.0
    assert report.accuracy == 1.0
    assert report.n == 3
    assert report.config_hash == "abc"
    assert report.per_kind_auc == {"eye_asymmetry": 1.0, "mouth_warp": 1.0}
    assert report.mean_uncertainty == pytest.approx(0.3)
    assert report.verdict_agreement == pytest.approx(2 / 3)
    assert report.vqa_average == pytest.approx(
        vqa_average(report.bleu4, report.cider, report.rouge_l, report.meteor)
    )


def test_evaluate_predictions_detection_only():
    """Test that caption metrics are absent without hypotheses."""
    predictions = [Prediction(image_id=str(i), score=i / 4, label=i % 2) for i in range(4)]
    report = evaluate_predictions(predictions)
    assert report.bleu4 is None
    assert report.vqa_average is None
    assert report.verdict_agreement is None


def test_evaluate_predictions_empty():
    """Test that an empty predictions set is rejected."""
    with pytest.raises(AuthGuardError) as exc_info:
        evaluate_predictions([])
    assert exc_info.value.error_code == ErrorCode.EMPTY_INPUT


def test_predictions_file(tmp_path):
    """Test that predictions reload from JSONL unchanged."""
    path = tmp_path / "predictions.jsonl"
    assert write_predictions(path, _predictions()) == 3
    assert read_predictions(path) == _predictions()
