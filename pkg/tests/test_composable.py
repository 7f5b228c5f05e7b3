import itertools
import math

import numpy as np
import pytest

from sketchattack.composable import (BlockChainSketchMap, BooleanLinearSketchMap,
                                     BottomKSketchMap, BrokenComposeMap, KPartitionSketchMap,
                                     SampleSketchMap, Sketch, brute_force_axioms,
                                     check_termination, peel, pool_from_peeling, pool_layers,
                                     rank_of, verify_pool)
from sketchattack.core import KeySet
from sketchattack.rng import RngHandle


def small_maps(n=10, seed=0):
    gen = np.random.default_rng(seed)
    return [
        SampleSketchMap(n, [1, 4, 7]),
        BottomKSketchMap.random(n, 3, gen),
        KPartitionSketchMap.random(n, 3, gen),
        BooleanLinearSketchMap.random(n, 3, gen, density=0.4),
        BlockChainSketchMap(n, block_size=2, n_blocks=3, k_tail=2),
    ]


def test_sketch_examples():
    assert SampleSketchMap(10, [2, 5]).sketch([1, 2, 3]).payload == (2,)
    bk = BottomKSketchMap(12, 2)
    assert bk.in_core(KeySet([3, 7, 9])).tolist() == [3, 7]
    zero = BooleanLinearSketchMap(np.zeros((3, 6)))
    assert zero.sketch([0, 4]).payload == (0, 0, 0)


def test_sketch_rejects_out_of_range():
    with pytest.raises(ValueError):
        BottomKSketchMap(5, 2).sketch([5])


def test_canonical_bytes_are_structural():
    a = Sketch("bottomk", (1, 3))
    assert a.to_bytes() == Sketch("bottomk", (1, 3)).to_bytes()
    assert a.to_bytes() != Sketch("sample", (1, 3)).to_bytes()


def test_bottomk_merge_example():
    bk = BottomKSketchMap(12, 2)
    merged = bk.compose(bk.sketch([3, 7]), bk.sketch([1, 9]))
    assert merged.payload == (1, 3)
    assert merged == bk.sketch([1, 3, 7, 9])


def test_compose_family_mismatch():
    bk = BottomKSketchMap(12, 2)
    with pytest.raises(ValueError):
        bk.compose(bk.sketch([1]), SampleSketchMap(12, [1]).sketch([1]))


@pytest.mark.parametrize("idx", range(5))
def test_idempotence_and_identity_random(idx):
    smap = small_maps(n=64, seed=idx)[idx] if idx < 4 else BlockChainSketchMap(64, 4, 5, 6)
    gen = np.random.default_rng(idx)
    e = smap.empty()
    for _ in range(1000):
        s = smap.sketch_mask(gen.random(64) < gen.random())
        assert smap.compose(s, s) == s
        assert smap.compose(e, s) == s


def test_in_core_examples():
    sm = SampleSketchMap(20, [2, 5, 11])
    assert sm.in_core([1, 2, 11, 12]).tolist() == [2, 11]
    bk = BottomKSketchMap.random(30, 5, RngHandle(1))
    assert bk.in_core([4, 9, 20]).tolist() == [4, 9, 20]


def test_boolean_in_core_minimal_by_removal():
    gen = np.random.default_rng(3)
    for _ in range(50):
        bl = BooleanLinearSketchMap.random(6, 3, gen)
        U = KeySet.from_mask(gen.random(6) < 0.7)
        C = bl.in_core(U)
        assert C.issubset(U) and bl.sketch(C) == bl.sketch(U)
        for x in C:
            assert bl.sketch(C - KeySet([x])) != bl.sketch(U)


def test_rank_of():
    bk = BottomKSketchMap.random(200, 8, RngHandle(2))
    assert rank_of(bk, 50, RngHandle(3)) == 8
    sm = SampleSketchMap.random(200, 6, RngHandle(4))
    assert rank_of(sm, 50, RngHandle(5)) <= 6
    bl = BooleanLinearSketchMap.random(12, 4, RngHandle(6), density=0.3)
    worst = max(len(bl.in_core(np.array(m, dtype=bool)))
                for m in itertools.product([False, True], repeat=12))
    assert worst <= 4


def test_rank_of_raises_on_understated_bound():
    bk = BottomKSketchMap(20, 4)
    bk.rank_bound = 2
    with pytest.raises(AssertionError):
        rank_of(bk, 5, RngHandle(0))


def test_peel_sample_single_layer():
    sm = SampleSketchMap(30, [3, 8, 21])
    pe = peel(sm)
    assert len(pe) == 1 and pe.layers[0].tolist() == [3, 8, 21]
    pool = pool_from_peeling(pe, sm, 0.1, 0.01)
    assert pool.keys.tolist() == [3, 8, 21]


def test_peel_bottomk_identity_blocks():
    bk = BottomKSketchMap(20, 4)
    pe = peel(bk)
    assert [ly.tolist() for ly in pe.layers] == [list(range(i, i + 4)) for i in range(0, 20, 4)]


def test_peel_kpartition_per_bucket_oracle():
    kp = KPartitionSketchMap.random(60, 5, RngHandle(8))
    pe = peel(kp)
    for t in range(1, len(pe) + 1):
        want = set()
        for b in range(5):
            members = [x for x in kp.order if kp.bucket_of[x] == b]
            want |= set(int(x) for x in members[:t])
        assert set(pe.prefix(t).tolist()) == want


@pytest.mark.parametrize("idx", range(5))
def test_peeling_layers_sketch_the_suffix(idx):
    smap = small_maps(n=40, seed=idx)[idx]
    pe = peel(smap)
    seen = np.zeros(smap.n, dtype=bool)
    for i, layer in enumerate(pe.layers):
        lm = layer.mask(smap.n)
        assert not (seen & lm).any()
        assert len(layer) <= smap.rank_bound
        assert smap.sketch(layer) == smap.sketch_mask(~seen)
        seen |= lm
    assert smap.sketch_mask(~seen) == smap.empty()


def test_pool_formulas():
    assert pool_layers(8, 0.1, 0.01, True) == math.ceil(math.log(800) / 0.1) == 67
    assert pool_layers(8, 0.1, 0.01, False) == math.ceil((8 + 4 * math.sqrt(8 * math.log(100))) / 0.1)
    bk = BottomKSketchMap.random(2048, 8, RngHandle(1))
    pool = pool_from_peeling(peel(bk), bk, 0.1, 0.01)
    assert pool.layers_used == 67 and len(pool) == 536


def test_verify_pool_trivial_and_empty():
    bk = BottomKSketchMap.random(300, 4, RngHandle(2))
    full = KeySet(range(300), 300)
    rep = verify_pool(bk, full, [KeySet((), 300)], [0.1, 0.5], 200, RngHandle(3))
    assert rep.max_rate == 0.0
    rep = verify_pool(bk, KeySet((), 300), [KeySet((), 300)], [0.3], 200, RngHandle(4))
    assert rep.max_rate == 1.0


def test_verify_pool_bottomk_constructed():
    bk = BottomKSketchMap.random(2048, 8, RngHandle(5))
    pool = pool_from_peeling(peel(bk), bk, 0.1, 0.01)
    masks = [KeySet((), 2048), KeySet(pool.keys.tolist()[:20], 2048)]
    rep = verify_pool(bk, pool.keys, masks, [0.1, 0.3], 2000, RngHandle(6), delta=0.01)
    assert rep.ok, rep.violations()


def test_termination_full_sampling():
    for smap in small_maps(n=30, seed=4):
        pe = peel(smap)
        assert check_termination(smap, pe, len(pe), 1.0, 50, RngHandle(1)) == 0.0


def test_termination_bottomk_monotone():
    bk = BottomKSketchMap.random(2048, 8, RngHandle(9))
    pe = peel(bk)
    ell = pool_layers(8, 0.1, 0.01, True)
    rate = check_termination(bk, pe, ell, 0.1, 2000, RngHandle(10))
    assert rate <= 0.01 + 3 * math.sqrt(0.01 * 0.99 / 2000)


def test_termination_block_chain_is_tight():
    fx = BlockChainSketchMap.for_rank(400, 128, 0.01)
    assert fx.block_size == 17 and fx.n_blocks == 3
    pe = peel(fx)
    rate = check_termination(fx, pe, fx.n_blocks - 1, 0.5, 2000, RngHandle(11))
    assert rate >= 0.99


@pytest.mark.parametrize("idx", range(5))
def test_axioms_pass_for_shipped_maps(idx):
    smap = small_maps(n=10, seed=idx)[idx]
    rep = brute_force_axioms(smap)
    assert rep.passed, rep.summary()


def test_axioms_catch_broken_compose():
    rep = brute_force_axioms(BrokenComposeMap(BottomKSketchMap(8, 2)))
    assert not rep.passed
    bad = rep.first_failure()
    assert bad.name == "composability" and "U=" in bad.witness


def test_axioms_refuse_large_ground_set():
    with pytest.raises(ValueError):
        brute_force_axioms(BottomKSketchMap(13, 2))


def test_boolean_map_can_have_uneven_cores():
    # column 0 covers both rows, columns 1 and 2 cover one each
    bl = BooleanLinearSketchMap([[1, 1, 0], [1, 0, 1]])
    assert bl.in_core([0, 1, 2]).tolist() == [1, 2]
    assert bl.in_core([0, 2]).tolist() == [0]
    assert bl.sketch([0]) == bl.sketch([1, 2])
    assert not bl.monotone
