import math

import numpy as np
import pytest

from oracles import rerank_bruteforce
from vocreid.core import DISTANCE, SimilarityMatrix, ValidationError
from vocreid.rerank import RerankConfig, k_reciprocal_rerank


def sim(a):
    return SimilarityMatrix(np.asarray(a, dtype=float))


def random_instance(rng, nq, ng, d=4):
    x = rng.standard_normal((nq + ng, d))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    s = x @ x.T
    return sim(s[:nq, nq:]), sim(s[nq:, nq:]), sim(s[:nq, :nq])


def test_lambda_one_returns_original_distance(rng):
    qg, gg, qq = random_instance(rng, 4, 9)
    out = k_reciprocal_rerank(qg, gg, qq, RerankConfig(k1=5, k2=3, lambda_rr=1.0))
    assert out.kind == DISTANCE
    assert out.data.tobytes() == (1.0 - qg.data).tobytes()


def test_hand_traced_three_points():
    # query q, gallery g0, g1 with s(q,g0)=0.9, s(q,g1)=0.2, s(g0,g1)=0.3.
    # k1=1: R(q)={q,g0}, R(g0)={g0,q}, R(g1)={g1}; the half-k1 expansion adds
    # nothing. Encodings: V_q = V_g0 up to a swap of the two weights
    # exp(0) and exp(-0.1), V_g1 = e_g1. Jaccard(q, g0) = 1 - exp(-0.1),
    # Jaccard(q, g1) = 1.
    qg = sim([[0.9, 0.2]])
    gg = sim([[1.0, 0.3], [0.3, 1.0]])
    qq = sim([[1.0]])
    out = k_reciprocal_rerank(qg, gg, qq, RerankConfig(k1=1, k2=1, lambda_rr=0.3))
    expected = [0.3 * 0.1 + 0.7 * (1 - math.exp(-0.1)), 0.3 * 0.8 + 0.7 * 1.0]
    np.testing.assert_allclose(out.data[0], expected, rtol=0, atol=1e-12)
    np.testing.assert_allclose(out.data[0], [0.0966138074, 0.94], atol=1e-9)
    brute = rerank_bruteforce((1 - qg.data).tolist(), (1 - qq.data).tolist(), (1 - gg.data).tolist(), 1, 1, 0.3)
    np.testing.assert_allclose(out.data, brute, atol=1e-12)


@pytest.mark.parametrize("k1,k2", [(3, 1), (4, 2), (6, 3), (9, 9)])
def test_matches_bruteforce_10x10(rng, k1, k2):
    qg, gg, qq = random_instance(rng, 10, 10)
    out = k_reciprocal_rerank(qg, gg, qq, RerankConfig(k1, k2, 0.3))
    brute = rerank_bruteforce((1 - qg.data).tolist(), (1 - qq.data).tolist(), (1 - gg.data).tolist(), k1, k2, 0.3)
    np.testing.assert_allclose(out.data, brute, rtol=0, atol=1e-9)


def test_ties_broken_by_index():
    # duplicated gallery items produce exact distance ties
    rng = np.random.default_rng(5)
    x = rng.standard_normal((6, 3))
    x = np.vstack([x, x[:3]])
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    s = x @ x.T
    qg, gg, qq = sim(s[:2, 2:]), sim(s[2:, 2:]), sim(s[:2, :2])
    out = k_reciprocal_rerank(qg, gg, qq, RerankConfig(4, 2, 0.3))
    brute = rerank_bruteforce((1 - qg.data).tolist(), (1 - qq.data).tolist(), (1 - gg.data).tolist(), 4, 2, 0.3)
    np.testing.assert_allclose(out.data, brute, atol=1e-9)


def test_gallery_permutation_equivariance(rng):
    qg, gg, qq = random_instance(rng, 5, 11)
    cfg = RerankConfig(4, 2, 0.3)
    base = k_reciprocal_rerank(qg, gg, qq, cfg).data
    perm = rng.permutation(11)
    shuffled = k_reciprocal_rerank(sim(qg.data[:, perm]), sim(gg.data[np.ix_(perm, perm)]), qq, cfg).data
    inverse = np.argsort(perm)
    # continuous random data has no ties, so the neighbor sets cannot change
    np.testing.assert_allclose(shuffled[:, inverse], base, atol=1e-12)


def test_output_range(rng):
    for _ in range(20):
        qg, gg, qq = random_instance(rng, 6, 8)
        out = k_reciprocal_rerank(qg, gg, qq, RerankConfig(5, 3, 0.3)).data
        d = 1 - qg.data
        assert np.isfinite(out).all()
        assert out.min() >= 0 and out.max() <= 1 + d.max()


def test_threads_identical(rng):
    qg, gg, qq = random_instance(rng, 150, 60)
    cfg = RerankConfig(6, 3, 0.3)
    a = k_reciprocal_rerank(qg, gg, qq, cfg, threads=1).data
    b = k_reciprocal_rerank(qg, gg, qq, cfg, threads=4).data
    assert a.tobytes() == b.tobytes()


def test_distance_input_accepted(rng):
    qg, gg, qq = random_instance(rng, 3, 5)
    as_dist = [SimilarityMatrix(1 - m.data, DISTANCE) for m in (qg, gg, qq)]
    cfg = RerankConfig(3, 2, 0.3)
    np.testing.assert_array_equal(k_reciprocal_rerank(*as_dist, cfg).data, k_reciprocal_rerank(qg, gg, qq, cfg).data)


def test_errors(rng):
    qg, gg, qq = random_instance(rng, 1, 2)
    with pytest.raises(ValidationError, match="k1"):
        k_reciprocal_rerank(qg, gg, qq, RerankConfig(3, 1))
    with pytest.raises(ValidationError):
        RerankConfig(2, 3)
    with pytest.raises(ValidationError):
        RerankConfig(lambda_rr=1.5)


def test_defaults():
    assert RerankConfig() == RerankConfig(20, 6, 0.3)
