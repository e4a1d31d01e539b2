import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from factories import placed_query, random_bank, random_placed
from oracles import enum_context_iou, enum_mask_iou, nn_rescale_frame, ratio, to_frame
from segsynth.retrieval import (Query, brute_force_rank, context_iou, layout_queries, mask_iou, rank_topk,
                                retrieve, retrieve_topk)
from segsynth.segment_bank import (UNLABELED, BoundingBox, SemanticLayout, build_bank,
                                   extract_segments)


def _square(frame, y, x, s):
    m = np.zeros(frame, bool)
    m[y:y + s, x:x + s] = True
    return m


def test_mask_iou_worked_examples():
    lab = np.zeros((30, 30), np.uint8)
    a = placed_query(_square((30, 30), 0, 0, 10), lab)
    assert mask_iou(a, a) == 1.0
    b = placed_query(_square((30, 30), 15, 15, 10), lab)
    assert mask_iou(a, b) == 0.0
    c = placed_query(_square((30, 30), 0, 5, 10), lab)
    assert mask_iou(a, c) == pytest.approx(1 / 3, abs=0)


def test_context_iou_worked_examples():
    grid = np.zeros((4, 4), np.uint8)
    other = grid.copy()
    other.ravel()[8:] = 1
    full = np.ones((4, 4), bool)
    a = placed_query(full, grid)
    assert context_iou(a, a) == 1.0
    assert context_iou(a, placed_query(full, np.ones((4, 4), np.uint8))) == 0.0
    assert context_iou(a, placed_query(full, other)) == 8 / 24


@given(st.integers(0, 2**32 - 1))
def test_iou_matches_pixel_enumeration(seed):
    rng = np.random.default_rng(seed)
    fa = (int(rng.integers(6, 14)), int(rng.integers(6, 14)))
    fb = fa if rng.random() < 0.7 else (int(rng.integers(6, 14)), int(rng.integers(6, 14)))
    qa, ma, la = random_placed(rng, fa)
    qb, mb, lb = random_placed(rng, fb)
    mb_full = nn_rescale_frame(mb, fa)
    cb_full = nn_rescale_frame(to_frame(qb.context, qb.context_box.as_list(), fb, UNLABELED), fa)
    ca_full = to_frame(qa.context, qa.context_box.as_list(), fa, UNLABELED)
    assert mask_iou(qa, qb) == ratio(*enum_mask_iou(ma, mb_full))
    assert context_iou(qa, qb) == ratio(*enum_context_iou(ca_full, cb_full))
    if fa == fb:
        assert mask_iou(qa, qb) == mask_iou(qb, qa)
        assert context_iou(qa, qb) == context_iou(qb, qa)


def test_mask_iou_containment():
    lab = np.zeros((20, 20), np.uint8)
    big = placed_query(_square((20, 20), 2, 2, 10), lab)
    small = placed_query(_square((20, 20), 4, 4, 5), lab)
    assert mask_iou(big, small) == 25 / 100


def test_retrieve_single_candidate_and_self(toy_bank):
    rec = toy_bank.segments[7]
    m = retrieve(Query.from_record(rec), toy_bank)
    assert m.segment_id == 7 and m.score == 2.0
    lone = build_bank([(np.zeros((8, 8, 3), np.uint8),
                        SemanticLayout(np.kron([[0, 1], [0, 0]], np.ones((4, 4))).astype(np.uint8), ["a", "b"]), "s")],
                      min_area=0)
    q = Query(1, BoundingBox(0, 0, 2, 2), np.ones((2, 2), bool), BoundingBox(0, 0, 3, 3),
              np.ones((3, 3), np.uint8), (8, 8))
    assert retrieve(q, lone).segment_id == lone.per_class[1][0]


def test_retrieve_no_candidate_and_exclusion(toy_bank):
    rec = toy_bank.segments[0]
    assert retrieve(Query.from_record(rec), toy_bank, exclude_source=rec.source_id).segment_id != 0
    lone = build_bank([(np.zeros((8, 8, 3), np.uint8), SemanticLayout(np.zeros((8, 8), np.uint8), ["a", "b"]), "s")])
    q = Query(1, BoundingBox(0, 0, 2, 2), np.ones((2, 2), bool), BoundingBox(0, 0, 3, 3),
              np.ones((3, 3), np.uint8), (8, 8))
    assert retrieve(q, lone) is None
    assert retrieve(Query.from_record(lone.segments[0]), lone, exclude_source="s") is None


@given(st.integers(0, 2**32 - 1))
def test_retrieve_equals_brute_force(seed):
    rng = np.random.default_rng(seed)
    bank, pairs = random_bank(rng, max_segments=150)
    _, lay, sid = pairs[int(rng.integers(len(pairs)))]
    for q in layout_queries(lay, min_area=1):
        excl = sid if rng.random() < 0.5 else None
        got = retrieve(q, bank, excl)
        ref = brute_force_rank(q, bank, excl)
        if not ref:
            assert got is None
            continue
        assert got == ref[0]
        assert bank.segments[got.segment_id].class_index == q.class_index
        assert 0 <= got.score <= 2


def test_rank_topk_prefix_of_brute_force():
    rng = np.random.default_rng(3)
    bank, pairs = random_bank(rng, max_segments=300)
    for q in layout_queries(pairs[0][1], min_area=1)[:10]:
        ref = brute_force_rank(q, bank)
        for k in (1, 3, 8):
            assert rank_topk(q, bank, k) == ref[:k]


def test_topk_uniform_over_two_candidates():
    labels = np.zeros((16, 16), np.uint8)
    labels[2:6, 2:6] = 1
    labels[9:14, 8:14] = 1
    bank = build_bank([(np.zeros((16, 16, 3), np.uint8), SemanticLayout(labels, ["bg", "obj"]), "s")], min_area=0)
    q = Query.from_record(bank.segments[bank.per_class[1][0]])
    picks = [retrieve_topk(q, bank, 5, rng_seed=s).segment_id for s in range(10000)]
    counts = np.bincount(picks)
    ids = bank.per_class[1]
    assert set(picks) == set(ids)
    for i in ids:
        assert abs(counts[i] - 5000) <= 300
    assert retrieve_topk(q, bank, 5, rng_seed=11) == retrieve_topk(q, bank, 5, rng_seed=11)
    assert retrieve_topk(q, bank, 1, rng_seed=11) == retrieve(q, bank)


def test_rescaled_frames_are_compared_in_query_frame():
    small = np.zeros((10, 10), np.uint8)
    small[2:6, 2:6] = 1
    big = np.kron(small, np.ones((2, 2), np.uint8))
    rec = extract_segments(np.zeros((20, 20, 3), np.uint8), SemanticLayout(big, ["bg", "obj"]), "s", 0)[1]
    q = layout_queries(SemanticLayout(small, ["bg", "obj"]))[1]
    assert mask_iou(q, rec) == 1.0
    assert 0 < context_iou(q, rec) < 1     # context boxes are not scale-equivariant
