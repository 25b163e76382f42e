import numpy as np
import pytest

from cheatsuffix.backends import ReferenceBackend
from cheatsuffix.evaluation import (
    ArrayImageSource,
    ConstantMatcher,
    DirectoryImageSource,
    ScriptedDetector,
    UNAVAILABLE,
    clip_score,
    detection_metrics,
    evaluate_pair,
    load_image_manifest,
    matcher_score,
    pair_key,
    run_protocol,
    transfer_eval,
    universality_matrix,
)
from cheatsuffix.objective import build_text_target
from cheatsuffix.seeding import seeded_uniform


@pytest.fixture(scope="module")
def backend():
    return ReferenceBackend()


LABELS = ("tok05", "tok09", "tok11")


class TestDetectionMetrics:
    def test_truth_table(self):
        det = lambda groups: ScriptedDetector(LABELS, [groups])
        orig, tgt = "tok09", "tok05"
        # all four rows of the (original-detected x target-detected) table
        assert detection_metrics(det({"tok05"}), None, orig, tgt) == (1, 1, 1)
        assert detection_metrics(det({"tok09", "tok05"}), None, orig, tgt) == (0, 1, 0)
        assert detection_metrics(det(set()), None, orig, tgt) == (1, 0, 0)
        assert detection_metrics(det({"tok09"}), None, orig, tgt) == (0, 0, 0)

    def test_both_equals_and(self):
        for detected in (set(), {"tok05"}, {"tok09"}, {"tok05", "tok09"}):
            d = ScriptedDetector(LABELS, [detected])
            ocndr, tcdr, both = detection_metrics(d, None, "tok09", "tok05")
            assert both == (ocndr and tcdr)

    def test_unknown_category_is_config_error(self):
        d = ScriptedDetector(LABELS, [set()])
        with pytest.raises(ValueError, match="label set"):
            detection_metrics(d, None, "zebra", "tok05")

    def test_script_outside_label_set_rejected(self):
        d = ScriptedDetector(LABELS, [{"zebra"}])
        with pytest.raises(ValueError, match="declared label set"):
            detection_metrics(d, None, "tok09", "tok05")


class TestClipScore:
    def test_image_equal_to_text_target_scores_one(self, backend):
        image = build_text_target(backend, 5)
        assert clip_score(backend, image, 5) == pytest.approx(1.0, abs=1e-12)

    def test_matches_hand_composition(self, backend):
        from cheatsuffix.codebook import cosine

        image = seeded_uniform(81, 16).astype(np.float64)
        expected = cosine(backend.encode_image(image), build_text_target(backend, 5))
        assert clip_score(backend, image, 5) == expected


class TestMatcherScore:
    def test_constant_passthrough(self):
        assert matcher_score(ConstantMatcher(0.5), None, "tok05") == 0.5

    def test_absent_adapter_is_none(self):
        assert matcher_score(None, None, "tok05") is None


def _sources_for(backend, key, count, seed=0):
    vectors = [seeded_uniform(seed + i, backend.d_emb) for i in range(count)]
    return ArrayImageSource(vectors, label=key)


class TestEvaluatePair:
    def test_record_fields_and_aggregates(self, backend):
        source = _sources_for(backend, "tok09__tok05", 4)
        detector = ScriptedDetector(LABELS, [{"tok05"}, {"tok09"}, set(), {"tok05"}])
        report = evaluate_pair(backend, source, detector, "tok09", "tok05",
                               matcher=ConstantMatcher(0.25))
        assert [r.both for r in report.records] == [1, 0, 0, 1]
        assert report.aggregates["both"] == 0.5
        assert report.aggregates["ocndr"] == 0.75
        assert report.aggregates["tcdr"] == 0.5
        assert report.aggregates["matcher"] == 0.25
        assert report.aggregates["count"] == 4

    def test_aggregate_recomputable_from_records(self, backend):
        source = _sources_for(backend, "tok09__tok05", 10)
        script = [{"tok05"} if i % 3 else {"tok09"} for i in range(10)]
        detector = ScriptedDetector(LABELS, script)
        report = evaluate_pair(backend, source, detector, "tok09", "tok05")
        assert report.aggregates["both"] == np.mean([r.both for r in report.records])
        assert report.aggregates["clip"] == np.mean([r.clip_score for r in report.records])

    def test_matcher_unavailable_not_zero(self, backend):
        source = _sources_for(backend, "tok09__tok05", 2)
        detector = ScriptedDetector(LABELS, [set(), set()])
        report = evaluate_pair(backend, source, detector, "tok09", "tok05")
        assert report.aggregates["matcher"] == UNAVAILABLE
        assert report.to_dict()["records"][0]["matcher"] == UNAVAILABLE


class TestRunProtocol:
    def test_saturated_fixture_scores_hundred_percent(self, backend):
        suffixes = {("tok09", "tok05"): [24, 30]}
        sources = {"tok09__tok05": _sources_for(backend, "x", 5)}
        detector = ScriptedDetector(LABELS, lambda img: {"tok05"})
        report = run_protocol(suffixes, sources, detector, backend)
        assert report.aggregate["both"] == 1.0
        assert not report.partial

    def test_half_fixture_scores_fifty_percent_exactly(self, backend):
        # 50 of 100 images detect the target only; the rest keep the original
        script = [{"tok05"} if i < 50 else {"tok09"} for i in range(100)]
        suffixes = {("tok09", "tok05"): None}
        sources = {"tok09__tok05": _sources_for(backend, "x", 100)}
        detector = ScriptedDetector(LABELS, script)
        report = run_protocol(suffixes, sources, detector, backend)
        assert report.aggregate["both"] == 0.5
        assert report.aggregate["ocndr"] == 0.5
        assert report.aggregate["tcdr"] == 0.5

    def test_missing_pair_skipped_and_partial(self, backend):
        suffixes = {("tok09", "tok05"): None, ("tok11", "tok05"): None}
        sources = {"tok09__tok05": _sources_for(backend, "x", 2)}
        detector = ScriptedDetector(LABELS, lambda img: {"tok05"})
        report = run_protocol(suffixes, sources, detector, backend)
        assert report.partial
        assert report.skipped == [{"pair": "tok11__tok05", "reason": "no image source"}]
        assert len(report.reports) == 1

    def test_no_attack_sanity(self, backend):
        # detector always sees the original and never the target
        suffixes = {("tok09", "tok05"): []}
        sources = {"tok09__tok05": _sources_for(backend, "x", 20)}
        detector = ScriptedDetector(LABELS, lambda img: {"tok09"})
        report = run_protocol(suffixes, sources, detector, backend)
        assert report.aggregate["ocndr"] == 0.0
        assert report.aggregate["tcdr"] == 0.0
        assert report.aggregate["both"] == 0.0


class TestUniversalityMatrix:
    def test_uniform_success_gives_equal_cells(self, backend):
        cats = ["tok05", "tok09", "tok11", "tok12"]
        suffixes = {(o, t): None for o in cats for t in cats if o != t}
        sources = {}
        for o, t in suffixes:
            for o2 in cats:
                if o2 in (o, t):
                    continue
                sources[pair_key(o, t, applied_original=o2)] = \
                    _sources_for(backend, "u", 3)
        detector = ScriptedDetector(cats, lambda img: set(cats))
        # detect-all: original present -> ocndr 0 -> both 0 everywhere
        grid = universality_matrix(suffixes, sources, detector, backend, cats)
        for i, o in enumerate(cats):
            for j, t in enumerate(cats):
                assert grid["both"][i][j] == (None if i == j else 0.0)

    def test_one_of_three_transfer_categories_succeeds(self, backend):
        cats = ["tok05", "tok09", "tok11", "tok12", "tok13"]
        o, t = "tok09", "tok05"
        suffixes = {(o, t): None}
        sources, scripts = {}, {}
        others = [c for c in cats if c not in (o, t)]
        for idx, o2 in enumerate(others):
            key = pair_key(o, t, applied_original=o2)
            sources[key] = _sources_for(backend, key, 4)
        # tok11 prompts always succeed; the other two never do
        def detect(img):
            return set()
        detector = ScriptedDetector(cats, [
            # iteration order: others in category order, 4 images each
            *([{"tok05"}] * 4),   # tok11: target only -> both=1
            *([{"tok12"}] * 4),   # tok12: original detected -> both=0
            *([{"tok13"}] * 4),   # tok13: original detected -> both=0
        ])
        grid = universality_matrix(suffixes, sources, detector, backend, cats)
        i, j = cats.index(o), cats.index(t)
        assert grid["both"][i][j] == pytest.approx(4 / 12, abs=1e-12)

    def test_diagonal_undefined(self, backend):
        cats = ["tok05", "tok09", "tok11"]
        grid = universality_matrix({}, {}, ScriptedDetector(cats, [set()]),
                                   backend, cats)
        assert all(grid["both"][i][i] is None for i in range(3))


class TestTransferEval:
    def test_identity_transfer_equals_plain_protocol(self, backend):
        suffix_surfaces = {("tok09", "tok05"): ["tok24", "tok30"]}
        sources = {"tok09__tok05": _sources_for(backend, "x", 6)}
        script = [{"tok05"}, {"tok09"}, set(), {"tok05"}, {"tok05"}, {"tok09", "tok05"}]
        d1 = ScriptedDetector(LABELS, list(script))
        d2 = ScriptedDetector(LABELS, list(script))
        transfer = transfer_eval(suffix_surfaces, backend, sources, d1)
        plain = run_protocol({("tok09", "tok05"): None}, sources, d2, backend)
        assert transfer.aggregate["both"] == plain.aggregate["both"]
        assert transfer.mode == "transfer"

    def test_untokenizable_surface_skipped_with_reason(self, backend):
        suffix_surfaces = {
            ("tok09", "tok05"): ["tok24"],
            ("tok11", "tok05"): ["not-a-token"],
        }
        sources = {
            "tok09__tok05": _sources_for(backend, "a", 2),
            "tok11__tok05": _sources_for(backend, "b", 2),
        }
        detector = ScriptedDetector(LABELS, lambda img: {"tok05"})
        report = transfer_eval(suffix_surfaces, backend, sources, detector)
        assert report.partial
        assert len(report.reports) == 1
        assert "not-a-token" in report.skipped[0]["reason"]


class TestDirectorySource:
    def test_manifest_and_ordering(self, tmp_path):
        root = tmp_path / "images"
        (root / "tok09__tok05").mkdir(parents=True)
        for i in range(3):
            (root / "tok09__tok05" / f"{i}.png").write_bytes(b"png")
        (root / "manifest.json").write_text('{"tok09__tok05": 3}')
        sources = load_image_manifest(root)
        items = list(sources["tok09__tok05"])
        assert [i for i, _ in items] == ["tok09__tok05/0", "tok09__tok05/1", "tok09__tok05/2"]

    def test_missing_image_raises(self, tmp_path):
        root = tmp_path / "images"
        (root / "a__b").mkdir(parents=True)
        (root / "manifest.json").write_text('{"a__b": 2}')
        source = load_image_manifest(root)["a__b"]
        with pytest.raises(FileNotFoundError):
            list(source)
