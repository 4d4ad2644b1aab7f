"""Bernoulli model estimation, scoring, and classification metrics."""

import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collusionscan.app_model import AppDescriptor, Channel, ChannelKind
from collusionscan.bayes import (
    BernoulliModel,
    ConfusionMatrix,
    CriticalityClass,
    PermissionVector,
    Verdict,
    estimate_lambdas,
    l_com,
    l_tau,
    l_tau_of_vector,
    load_criticality,
    load_model,
    metrics,
    probability,
    save_model,
    score,
    sweep_threshold,
    synthetic_training_set,
    training_from_csv,
    training_to_csv,
    union_vector,
)
from collusionscan.errors import (
    ConfigError,
    DegenerateMatrix,
    EmptyAppSet,
    EmptyTrainingSet,
    VocabularyMismatch,
)

VOCAB = ("INTERNET", "READ_CONTACTS", "SEND_SMS")


def vec(bits, vocab=VOCAB):
    return PermissionVector(tuple(bits), tuple(vocab))


def vectors_with_count(n, ones, vocab=("P",)):
    """n single-permission vectors, `ones` of them set."""
    return [vec((1 if i < ones else 0,), vocab) for i in range(n)]


def app(app_id, perms=(), sends=(), receives=()):
    return AppDescriptor(
        id=app_id,
        package=f"com.test.{app_id}",
        permissions=frozenset(perms),
        sends=tuple(sends),
        receives=tuple(receives),
    )


class TestEstimateLambdas:
    def test_non_critical_direct_substitution(self):
        model = estimate_lambdas(vectors_with_count(10, 5), {})
        assert model.lambda_hat[0] == pytest.approx(6 / 12, abs=0)

    def test_most_critical_direct_substitution(self):
        crit = {"P": CriticalityClass.MostCritical}
        model = estimate_lambdas(vectors_with_count(10, 5), crit)
        assert model.lambda_hat[0] == pytest.approx(6 / 31, rel=1e-15)

    def test_prior_dominates_single_sample(self):
        model = estimate_lambdas(vectors_with_count(1, 0), {})
        assert model.lambda_hat[0] == pytest.approx(1 / 3, rel=1e-15)
        assert 0.0 < model.lambda_hat[0] < 1.0

    def test_empty_training_set(self):
        with pytest.raises(EmptyTrainingSet):
            estimate_lambdas([], {})

    def test_vocabulary_mismatch(self):
        rows = [vec((1, 0, 0)), PermissionVector((1,), ("OTHER",))]
        with pytest.raises(VocabularyMismatch):
            estimate_lambdas(rows, {})

    @given(
        n=st.integers(min_value=1, max_value=60),
        ones_frac=st.floats(min_value=0.0, max_value=1.0),
        crit=st.sampled_from(list(CriticalityClass)),
    )
    @settings(max_examples=60)
    def test_estimates_strictly_inside_unit_interval(self, n, ones_frac, crit):
        ones = round(ones_frac * n)
        model = estimate_lambdas(vectors_with_count(n, ones), {"P": crit})
        lam = model.lambda_hat[0]
        beta = crit.beta(n)
        assert 0.0 < lam < 1.0
        assert lam == pytest.approx(float(Fraction(ones + 1, n + 1 + beta)), rel=1e-12)


class TestProbability:
    def test_uniform_pair(self):
        model = BernoulliModel(("A", "B"), (0.5, 0.5))
        assert probability(model, PermissionVector((1, 0), ("A", "B"))) == pytest.approx(0.25)

    def test_single_factor(self):
        model = BernoulliModel(("A",), (0.3,))
        assert probability(model, PermissionVector((1,), ("A",))) == pytest.approx(0.3)

    def test_hand_product(self):
        model = BernoulliModel(("A", "B", "C"), (0.2, 0.5, 0.9))
        y = PermissionVector((1, 1, 0), ("A", "B", "C"))
        assert probability(model, y) == pytest.approx(0.2 * 0.5 * 0.1, rel=1e-12)

    def test_vocabulary_mismatch(self):
        model = BernoulliModel(("A",), (0.3,))
        with pytest.raises(VocabularyMismatch):
            probability(model, PermissionVector((1,), ("B",)))

    @given(st.lists(st.floats(min_value=0.01, max_value=0.99), min_size=1, max_size=8))
    @settings(max_examples=50)
    def test_probability_in_unit_interval(self, lambdas):
        vocab = tuple(f"P{i}" for i in range(len(lambdas)))
        model = BernoulliModel(vocab, tuple(lambdas))
        bits = tuple(1 if lam > 0.5 else 0 for lam in lambdas)
        p = probability(model, PermissionVector(bits, vocab))
        assert 0.0 < p <= 1.0


class TestLTau:
    def test_symmetric_model_always_saturates(self):
        model = BernoulliModel(("A", "B"), (0.5, 0.5))
        for bits in ((0, 0), (0, 1), (1, 0), (1, 1)):
            assert l_tau_of_vector(model, PermissionVector(bits, ("A", "B"))) == 1.0

    def test_single_permission_normalisation(self):
        model = BernoulliModel(("A",), (0.1,))
        assert l_tau_of_vector(model, PermissionVector((1,), ("A",))) == pytest.approx(1.0)

    def test_hand_evaluated_low_surprise(self):
        model = BernoulliModel(("A", "B"), (0.1, 0.1))
        got = l_tau_of_vector(model, PermissionVector((0, 0), ("A", "B")))
        expected = (2 * math.log(10 / 9)) / (2 * math.log(10))
        assert got == pytest.approx(expected, rel=1e-12)
        assert got == pytest.approx(0.0458, abs=5e-5)

    def test_union_of_app_permissions(self):
        model = BernoulliModel(VOCAB, (0.2, 0.2, 0.2))
        apps = [app("a", ["INTERNET"]), app("b", ["READ_CONTACTS"])]
        vector, unknown = union_vector(model, apps)
        assert vector.bits == (1, 1, 0)
        assert unknown == 0

    def test_unknown_permissions_counted_not_scored(self):
        model = BernoulliModel(VOCAB, (0.2, 0.2, 0.2))
        apps = [app("a", ["INTERNET", "VIBRATE"])]
        vector, unknown = union_vector(model, apps)
        assert vector.bits == (1, 0, 0)
        assert unknown == 1

    def test_empty_app_set(self):
        model = BernoulliModel(VOCAB, (0.2, 0.2, 0.2))
        with pytest.raises(EmptyAppSet):
            l_tau(model, [])

    @given(
        lambdas=st.lists(st.floats(min_value=0.01, max_value=0.99), min_size=1, max_size=10),
        data=st.data(),
    )
    @settings(max_examples=80)
    def test_always_in_unit_interval(self, lambdas, data):
        vocab = tuple(f"P{i}" for i in range(len(lambdas)))
        model = BernoulliModel(vocab, tuple(lambdas))
        bits = tuple(data.draw(st.integers(0, 1)) for _ in vocab)
        assert 0.0 <= l_tau_of_vector(model, PermissionVector(bits, vocab)) <= 1.0

    @given(data=st.data())
    @settings(max_examples=60)
    def test_monotone_for_rare_permissions(self, data):
        # Granting a permission with lambda < 0.5 never lowers the score.
        k = data.draw(st.integers(2, 6))
        vocab = tuple(f"P{i}" for i in range(k))
        lambdas = tuple(data.draw(st.floats(min_value=0.01, max_value=0.49)) for _ in vocab)
        model = BernoulliModel(vocab, lambdas)
        bits = [data.draw(st.integers(0, 1)) for _ in vocab]
        j = data.draw(st.integers(0, k - 1))
        if bits[j] == 1:
            bits[j] = 0
        low = l_tau_of_vector(model, PermissionVector(tuple(bits), vocab))
        bits[j] = 1
        high = l_tau_of_vector(model, PermissionVector(tuple(bits), vocab))
        assert high >= low


class TestLCom:
    def test_corpus_pair_1_2_shared_prefs(self):
        from collusionscan.corpus import load_app

        assert l_com([load_app("1"), load_app("2")]) == 1

    def test_no_channels(self):
        assert l_com([app("a", ["INTERNET"]), app("b", ["READ_CONTACTS"])]) == 0

    def test_corpus_pair_12_14_same_intent(self):
        from collusionscan.corpus import load_app

        assert l_com([load_app("12"), load_app("14")]) == 1

    def test_empty_set(self):
        with pytest.raises(EmptyAppSet):
            l_com([])


class TestScore:
    def colluding_setup(self):
        ch = Channel(ChannelKind.Intent, "X")
        return [
            app("a", ["READ_CONTACTS", "SEND_SMS"], sends=[ch]),
            app("b", ["INTERNET"], receives=[ch]),
        ]

    def test_above_threshold_with_channel(self):
        model = BernoulliModel(VOCAB, (0.1, 0.1, 0.1))
        report = score(model, self.colluding_setup(), threshold=0.55)
        assert report.l_tau >= 0.55
        assert report.l_com == 1
        assert report.verdict is Verdict.Colluding
        assert report.possibility == pytest.approx(report.l_tau)

    def test_below_threshold_gates_l_com(self):
        # The channel exists, but the gate keeps l_com unevaluated (0)
        # when l_tau misses the threshold.
        model = BernoulliModel(VOCAB, (0.9, 0.9, 0.9))
        apps = self.colluding_setup()
        assert l_com(apps) == 1
        report = score(model, apps, threshold=0.55)
        assert report.l_com == 0
        assert report.verdict is Verdict.NonColluding

    def test_low_l_tau_never_colluding(self):
        model = BernoulliModel(VOCAB, (0.9, 0.9, 0.9))
        apps = self.colluding_setup()
        report = score(model, apps, threshold=0.55)
        assert report.l_tau < 0.55
        assert report.l_com == 0  # gated: never evaluated
        assert report.possibility == 0.0
        assert report.verdict is Verdict.NonColluding

    def test_no_channel_annihilates_possibility(self):
        model = BernoulliModel(VOCAB, (0.1, 0.1, 0.1))
        apps = [app("a", ["READ_CONTACTS", "SEND_SMS"]), app("b", ["INTERNET"])]
        report = score(model, apps, threshold=0.55)
        assert report.l_tau >= 0.55
        assert report.l_com == 0
        assert report.possibility == 0.0
        assert report.verdict is Verdict.NonColluding

    def test_threshold_bounds(self):
        model = BernoulliModel(VOCAB, (0.5, 0.5, 0.5))
        with pytest.raises(ConfigError):
            score(model, self.colluding_setup(), threshold=1.0)
        with pytest.raises(ConfigError):
            score(model, self.colluding_setup(), threshold=0.0)

    def test_verdict_invariant_under_reordering(self):
        model = BernoulliModel(VOCAB, (0.1, 0.2, 0.3))
        apps = self.colluding_setup()
        fwd = score(model, apps)
        rev = score(model, list(reversed(apps)))
        assert fwd.l_tau == rev.l_tau
        assert fwd.verdict == rev.verdict


class TestMetrics:
    def test_paper_confusion_matrix(self):
        precision, recall, f = metrics(ConfusionMatrix(tp=114, fp=7, fn=6, tn=113))
        assert precision == pytest.approx(114 / 121, rel=1e-12)
        assert round(precision, 2) == 0.94
        assert round(f, 2) == 0.95
        assert recall == pytest.approx(0.95, rel=1e-12)

    def test_perfect_classifier(self):
        assert metrics(ConfusionMatrix(10, 0, 0, 0)) == (1.0, 1.0, 1.0)

    def test_balanced_half(self):
        precision, recall, f = metrics(ConfusionMatrix(5, 5, 5, 0))
        assert (precision, recall, f) == (0.5, 0.5, 0.5)

    def test_degenerate(self):
        with pytest.raises(DegenerateMatrix):
            metrics(ConfusionMatrix(0, 0, 5, 5))
        with pytest.raises(DegenerateMatrix):
            metrics(ConfusionMatrix(0, 5, 0, 5))

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            ConfusionMatrix(-1, 0, 0, 0)


class TestModelSerialisation:
    def test_round_trip(self):
        model = estimate_lambdas(
            [vec((1, 0, 1)), vec((0, 0, 1)), vec((1, 1, 0))],
            {"SEND_SMS": CriticalityClass.MostCritical},
        )
        restored = load_model(save_model(model))
        assert restored == model

    def test_lambda_precision_at_least_12_digits(self):
        import json

        model = estimate_lambdas(vectors_with_count(7, 3), {})
        doc = json.loads(save_model(model))
        digits = doc["lambda_hat"][0].replace(".", "").replace("-", "")
        mantissa = digits.split("e")[0]
        assert len(mantissa) >= 12

    def test_bad_model_file(self):
        with pytest.raises(ConfigError):
            load_model("{}")
        with pytest.raises(ConfigError):
            load_model("not json")


class TestTrainingCsv:
    def test_round_trip(self):
        rows = synthetic_training_set(VOCAB, 5, 5, seed=7)
        text = training_to_csv(rows)
        assert training_from_csv(text) == rows

    def test_empty_csv(self):
        with pytest.raises(EmptyTrainingSet):
            training_from_csv("")

    def test_header_only(self):
        with pytest.raises(EmptyTrainingSet):
            training_from_csv("A,B,label\n")

    def test_missing_label_column(self):
        with pytest.raises(ConfigError):
            training_from_csv("A,B\n1,0\n")

    def test_bad_label(self):
        with pytest.raises(ConfigError):
            training_from_csv("A,label\n1,weird\n")

    def test_bad_cell(self):
        with pytest.raises(ConfigError):
            training_from_csv("A,label\nx,clean\n")


class TestCriticalityConfig:
    def test_load(self):
        crit = load_criticality('{"SEND_SMS": "most_critical", "INTERNET": "critical"}')
        assert crit == {
            "SEND_SMS": CriticalityClass.MostCritical,
            "INTERNET": CriticalityClass.Critical,
        }

    def test_unknown_name(self):
        with pytest.raises(ConfigError):
            load_criticality('{"X": "mild"}')


class TestSyntheticCalibration:
    def test_two_population_separation(self):
        vocab = tuple(f"P{i:02d}" for i in range(24))
        train = synthetic_training_set(vocab, 300, 300, seed=11)
        model = estimate_lambdas([v for v, _ in train], {})

        def pair_taus(rows, seed):
            import random

            rng = random.Random(seed)
            malicious = [v for v, lab in rows if lab == "malicious"]
            clean = [v for v, lab in rows if lab == "clean"]
            pairs = []
            for _ in range(120):
                a, b = rng.sample(malicious, 2)
                union = tuple(x | y for x, y in zip(a.bits, b.bits))
                pairs.append((l_tau_of_vector(model, PermissionVector(union, vocab)), True))
                a, b = rng.sample(clean, 2)
                union = tuple(x | y for x, y in zip(a.bits, b.bits))
                pairs.append((l_tau_of_vector(model, PermissionVector(union, vocab)), False))
            return pairs

        holdout = synthetic_training_set(vocab, 150, 150, seed=12)
        theta, _ = sweep_threshold(pair_taus(train, seed=1))
        scored = pair_taus(holdout, seed=2)
        tp = sum(1 for tau, truth in scored if tau >= theta and truth)
        fp = sum(1 for tau, truth in scored if tau >= theta and not truth)
        fn = sum(1 for tau, truth in scored if tau < theta and truth)
        precision = tp / (tp + fp)
        recall = tp / (tp + fn)
        f = 2 * precision * recall / (precision + recall)
        assert f >= 0.9
