"""Differential judging, crash-log tokenization, clustering, bug patterns."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import modelfuzz as mf
from modelfuzz.errors import EmptyLog, FuzzError, LabelSetMismatch, ProtocolViolation, ShapeMismatch
from modelfuzz.executors import API_ENTRY_POINTS, ExecutionResult


def ok(**arrays):
    outs = {k: mf.Tensor(np.asarray(v, dtype=np.float32), k) for k, v in arrays.items()}
    return ExecutionResult("ok", outputs=outs)


def crashed(log):
    return ExecutionResult("crash", crash_log=log)


# --- max inconsistency ------------------------------------------------------


def test_reference_example_value():
    got = mf.max_inconsistency({"cls": [0.10, 0.20]}, {"cls": [0.10, 0.35]})
    assert got == pytest.approx(0.15, abs=1e-9)


def test_max_over_labels():
    got = mf.max_inconsistency(
        {"a": [0.0, 1.0], "b": [2.0]},
        {"a": [0.05, 1.0], "b": [2.5]},
    )
    assert got == pytest.approx(0.5)


def test_nan_positions_are_excluded():
    got = mf.max_inconsistency({"a": [np.nan, 1.0]}, {"a": [5.0, 1.2]})
    assert got == pytest.approx(0.2)


def test_equal_infinities_contribute_zero():
    assert mf.max_inconsistency({"a": [np.inf]}, {"a": [np.inf]}) == 0.0
    assert mf.max_inconsistency({"a": [-np.inf]}, {"a": [-np.inf]}) == 0.0


def test_inf_vs_finite_is_infinite():
    assert mf.max_inconsistency({"a": [np.inf]}, {"a": [1.0]}) == np.inf
    assert mf.max_inconsistency({"a": [np.inf]}, {"a": [-np.inf]}) == np.inf


def test_label_and_shape_mismatch_raise():
    with pytest.raises(LabelSetMismatch):
        mf.max_inconsistency({"a": [1.0]}, {"b": [1.0]})
    with pytest.raises(ShapeMismatch):
        mf.max_inconsistency({"a": [1.0, 2.0]}, {"a": [1.0]})


@settings(max_examples=50, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=10_000),
    scale=st.floats(min_value=0.01, max_value=10.0),
)
def test_matches_brute_force_on_finite_pairs(seed, scale):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((3, 4)) * scale
    b = a + rng.standard_normal((3, 4)) * 0.05
    got = mf.max_inconsistency({"x": a}, {"x": b})
    assert got == pytest.approx(np.abs(a - b).max(), rel=1e-12)


# --- judge ---------------------------------------------------------------------


def test_judge_flags_inconsistency_beyond_epsilon():
    v = mf.judge(ok(cls=[0.10, 0.20]), ok(cls=[0.10, 0.35]), epsilon=0.1)
    assert v.kind == "inconsistency"
    assert v.max_inconsistency_value == pytest.approx(0.15)
    v2 = mf.judge(ok(cls=[0.10, 0.20]), ok(cls=[0.10, 0.35]), epsilon=0.2)
    assert v2.kind == "none"
    assert v2.max_inconsistency_value == pytest.approx(0.15)


def test_judge_exact_epsilon_is_not_a_bug():
    # 0.125 is exactly representable, so the diff equals epsilon exactly
    v = mf.judge(ok(a=[0.0]), ok(a=[0.125]), epsilon=0.125)
    assert v.kind == "none"
    assert mf.judge(ok(a=[0.0]), ok(a=[0.125]), epsilon=0.124).kind == "inconsistency"


def test_judge_crash_takes_precedence():
    log = "fault: x\n  at kernel::conv2d_forward addr=0x1\n  at graphexec::run_graph addr=0x2"
    v = mf.judge(ok(a=[0.0]), crashed(log))
    assert v.kind == "crash"
    assert v.evidence["crash_log"] == log


def test_judge_discards_unfiltered_crash():
    v = mf.judge(ok(a=[0.0]), crashed("fault: somewhere else entirely"))
    assert v.kind == "none"
    assert "discarded_crash_log" in v.evidence


def test_judge_nan_asymmetry_beats_value_difference():
    v = mf.judge(ok(a=[0.0, 1.0]), ok(a=[np.nan, 9.0]))
    assert v.kind == "nan"


def test_judge_matching_nan_sets_fall_through_to_values():
    v = mf.judge(ok(a=[np.nan, 1.0]), ok(a=[np.nan, 1.5]))
    assert v.kind == "inconsistency"
    assert v.max_inconsistency_value == pytest.approx(0.5)


def test_judge_requires_ok_reference():
    with pytest.raises(FuzzError):
        mf.judge(crashed("fault: ref died"), ok(a=[1.0]))


def test_judge_api_filter_is_configurable():
    log = "fault: x\n  at vendor::secret_entry addr=0x1"
    assert mf.judge(ok(a=[0.0]), crashed(log)).kind == "none"
    assert mf.judge(ok(a=[0.0]), crashed(log), api_names=("vendor::secret_entry",)).kind == "crash"


# --- tokenization and similarity --------------------------------------------------


def test_tokenizer_masks_addresses_and_numbers():
    toks = mf.tokenize_log("Fault at 0xDEADBEEF index 42 in Layer7")
    assert toks == ["fault", "at", "<addr>", "index", "<num>", "in", "layer<num>"]


def test_tokenizer_empty_log():
    assert mf.tokenize_log("   ") == []


def test_cosine_similarity_reference_values():
    assert mf.cosine_similarity("a b", "a c") == pytest.approx(0.5)
    assert mf.cosine_similarity("a b c", "a b c") == pytest.approx(1.0)
    with pytest.raises(EmptyLog):
        mf.cosine_similarity("", "a")


def test_cosine_ignores_address_and_number_differences():
    a = "fault at 0xAAAA slot 1"
    b = "fault at 0xBBBB slot 2"
    assert mf.cosine_similarity(a, b) == pytest.approx(1.0)


# --- clustering --------------------------------------------------------------------


TEMPLATE_A = "fault: dimension mismatch during fused buffer binding of tensor<{n}x32x32>\n  at kernel::conv2d_forward addr={addr}\n  at graphexec::run_graph addr=0x99"
TEMPLATE_B = "fault: workspace allocation failed: pooling window scratch request {n} exceeds arena\n  at kernel::maxpool2d_forward addr={addr}\n  at graphexec::run_graph addr=0x99"


def test_identical_logs_cluster_together():
    logs = [TEMPLATE_A.format(n=8, addr="0xAAA")] * 3
    clusters = mf.cluster_crashes(logs)
    assert len(clusters) == 1
    assert list(clusters[0].indices) == [0, 1, 2]


def test_address_only_variants_cluster_together():
    logs = [
        TEMPLATE_A.format(n=8, addr="0xAAA"),
        TEMPLATE_A.format(n=16, addr="0xBBB"),
        TEMPLATE_A.format(n=4, addr="0xCCC"),
    ]
    assert len(mf.cluster_crashes(logs)) == 1


def test_distinct_templates_separate():
    logs = [
        TEMPLATE_A.format(n=8, addr="0xAAA"),
        TEMPLATE_B.format(n=8, addr="0xBBB"),
        TEMPLATE_A.format(n=2, addr="0xCCC"),
        TEMPLATE_B.format(n=4, addr="0xDDD"),
    ]
    clusters = mf.cluster_crashes(logs)
    assert len(clusters) == 2
    assert {tuple(c.indices) for c in clusters} == {(0, 2), (1, 3)}


def test_clustering_is_idempotent():
    logs = [
        TEMPLATE_A.format(n=8, addr="0xAAA"),
        TEMPLATE_B.format(n=8, addr="0xBBB"),
        TEMPLATE_A.format(n=2, addr="0xCCC"),
    ]
    first = mf.cluster_crashes(logs)
    reps = [c.representative for c in first]
    again = mf.cluster_crashes(reps)
    assert len(again) == len(first)
    assert all(len(c.indices) == 1 for c in again)


def test_incremental_clusterer_matches_offline():
    logs = [
        TEMPLATE_A.format(n=8, addr="0xAAA"),
        TEMPLATE_B.format(n=8, addr="0xBBB"),
        TEMPLATE_A.format(n=2, addr="0xCCC"),
        TEMPLATE_B.format(n=4, addr="0xDDD"),
        TEMPLATE_A.format(n=64, addr="0xEEE"),
    ]
    inc = mf.CrashClusterer()
    assigned = [inc.assign(log) for log in logs]
    assert [cid for cid, _ in assigned] == [0, 1, 0, 1, 0]
    assert [new for _, new in assigned] == [True, True, False, False, False]
    offline = mf.cluster_crashes(logs)
    offline_ids = {}
    for cid, cluster in enumerate(offline):
        for idx in cluster.indices:
            offline_ids[idx] = cid
    incremental_ids = {i: cid for i, (cid, _) in enumerate(assigned)}
    assert incremental_ids == offline_ids


def test_threshold_extremes():
    logs = [TEMPLATE_A.format(n=8, addr="0xAAA"), TEMPLATE_B.format(n=8, addr="0xBBB")]
    assert len(mf.cluster_crashes(logs, threshold=-1.0)) == 1  # everything merges
    assert len(mf.cluster_crashes(logs, threshold=1.0)) == 2  # nothing merges


# --- bug patterns --------------------------------------------------------------------


def test_default_patterns_load_and_classify():
    patterns = mf.load_bug_patterns()
    assert len(patterns) >= 6
    log = TEMPLATE_A.format(n=8, addr="0xAAA")
    assert mf.match_bug_pattern(log, patterns) == "inference-optimization"
    assert mf.match_bug_pattern("fault: quantum flux", patterns) == "unclassified"


def test_first_match_wins():
    patterns = (mf.BugPattern("alpha", "first"), mf.BugPattern("beta", "second"))
    assert mf.match_bug_pattern("beta then alpha", patterns) == "first"


def test_nested_keywords_rejected(tmp_path):
    p = tmp_path / "patterns.json"
    p.write_text('{"patterns": [{"keyword": "mem", "label": "a"}, {"keyword": "memory", "label": "b"}]}')
    with pytest.raises(ProtocolViolation):
        mf.load_bug_patterns(str(p))


def test_filter_crash_log_matches_any_api():
    log = "  at graphexec::run_graph addr=0x1"
    assert mf.filter_crash_log(log, API_ENTRY_POINTS)
    assert not mf.filter_crash_log(log, ("vendor::other",))
    assert not mf.filter_crash_log(None, API_ENTRY_POINTS)
