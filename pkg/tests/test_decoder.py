import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neuralbp import codes, decoder
from neuralbp.decoder import PRESETS, DecoderSpec, Parameters, decode, parse_spec
from neuralbp.harness import exhaustive_map_oracle

TWO_ATANH_TANH1_SQ = 1.32500274735786443  # 2 atanh(tanh(1)^2), high-precision oracle


def graph(h):
    return codes.build_tanner(np.array(h))


# -- variable side ----------------------------------------------------------

def test_first_layer_broadcasts_llr(hamming):
    g = decoder.tanner_for(hamming)
    llr = np.arange(7.0) - 3
    out = decoder.variable_update(g, llr, np.zeros(g.n_edges))
    assert np.array_equal(out, llr[g.edge_var])


def test_degree3_leave_one_out():
    g = graph([[1, 1], [1, 0], [1, 0]])
    msgs = np.zeros(g.n_edges)
    e = g.var_edges[0]
    msgs[e] = [2.0, -1.0, 0.5]
    out = decoder.variable_update(g, np.array([1.0, 0.0]), msgs)
    assert out[e[0]] == pytest.approx(0.5)


def test_neural_all_ones_is_tanh_of_plain(bch15, rng):
    g = decoder.tanner_for(bch15)
    llr, msgs = rng.normal(0, 2, 15), rng.normal(0, 2, g.n_edges)
    plain = decoder.variable_update(g, llr, msgs)
    neural = decoder.variable_update(g, llr, msgs, np.ones(g.n_edges), np.ones(15), neural=True)
    assert np.allclose(neural, np.tanh(plain / 2), rtol=1e-14, atol=0)


def test_degree1_variable_sees_only_llr():
    g = graph([[1, 1, 0], [0, 1, 1]])
    out = decoder.variable_update(g, np.array([0.7, 0.0, -0.2]), np.ones(g.n_edges) * 5)
    assert out[0] == pytest.approx(0.7) and out[-1] == pytest.approx(-0.2)


def test_pair_weights_reduce_to_source_weights(bch15, rng):
    g = decoder.tanner_for(bch15)
    w = rng.normal(1, 0.3, g.n_edges)
    llr, msgs = rng.normal(0, 2, 15), rng.normal(0, 2, g.n_edges)
    a = decoder.variable_update(g, llr, msgs, w)
    b = decoder.variable_update(g, llr, msgs, w[g.pair_src], pair_weights=True)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_clipping_bounds_messages(bch15, rng):
    g = decoder.tanner_for(bch15)
    out = decoder.variable_update(g, rng.normal(0, 50, 15), rng.normal(0, 50, g.n_edges), clip=10.0)
    assert np.abs(out).max() <= 10.0


# -- check side -------------------------------------------------------------

def test_sum_product_degree2_passthrough():
    g = graph([[1, 1]])
    out = decoder.check_update_sum_product(g, np.array([0.3, 2.0]))
    assert out[0] == pytest.approx(2.0, rel=1e-12)


def test_sum_product_degree3():
    g = graph([[1, 1, 1]])
    out = decoder.check_update_sum_product(g, np.array([0.0, 2.0, 2.0]))
    assert out[0] == pytest.approx(TWO_ATANH_TANH1_SQ, rel=1e-12)
    assert out[1] == 0.0 and out[2] == 0.0  # annihilated by the zero input


def test_sum_product_saturation_is_finite():
    g = graph([[1, 1, 1]])
    out = decoder.check_update_sum_product(g, np.array([60.0, 60.0, 60.0]))
    assert np.all(np.isfinite(out))


def test_lonely_check_emits_zero():
    g = graph([[1, 0], [1, 1]])
    assert decoder.check_update_sum_product(g, np.array([3.0, 1.0, 2.0]))[0] == 0.0
    assert decoder.check_update_min_sum(g, np.array([3.0, 1.0, 2.0]))[0] == 0.0


@pytest.mark.parametrize("variant,kw,expected", [
    ("plain", {}, -0.5),
    ("oms", {"offset": 0.5}, 0.0),
    ("nms", {"weight": 0.8}, -0.4),
])
def test_min_sum_examples(variant, kw, expected):
    g = graph([[1, 1, 1, 1]])
    out = decoder.check_update_min_sum(g, np.array([9.0, 1.5, -0.5, 2.0]), variant, **kw)
    assert out[0] == pytest.approx(expected)


def test_min_sum_post_scale():
    g = graph([[1, 1, 1, 1]])
    out = decoder.check_update_min_sum(g, np.array([9.0, 1.5, -0.5, 2.0]), post_scale=0.5)
    assert out[0] == pytest.approx(-0.25)


# -- relaxation / marginals ----------------------------------------------------

def test_relax_examples():
    m = np.array([1.0, -2.0])
    assert np.array_equal(decoder.relax(m, np.array([5.0, 5.0]), 0.0), m)
    assert decoder.relax(np.array([8.0]), np.array([0.0]), 0.875)[0] == pytest.approx(1.0)
    prev = np.array([3.0])
    for g in (0.1, 0.5, 0.99):
        assert decoder.relax(prev, prev, g)[0] == pytest.approx(3.0)
    assert np.array_equal(decoder.relax(m, None, 0.9), m)  # warm start


@pytest.mark.parametrize("gamma", [-0.1, 1.0])
def test_relax_rejects_gamma(gamma):
    with pytest.raises(ValueError):
        decoder.relax(np.ones(2), np.ones(2), gamma)


def test_marginalize_zero_messages(hamming, rng):
    g = decoder.tanner_for(hamming)
    llr = rng.normal(size=7)
    assert np.allclose(decoder.marginalize(g, llr, np.zeros(g.n_edges)), llr)
    assert np.allclose(decoder.marginalize(g, llr, np.zeros(g.n_edges), neural=True),
                       1 / (1 + np.exp(-llr)))


def test_marginalize_cancelling_messages():
    g = graph([[1, 1], [1, 1]])
    out = decoder.marginalize(g, np.zeros(2), np.array([1.0, 2.0, -1.0, -2.0]), neural=True)
    assert np.allclose(out, 0.5)


# -- O(E) kernels vs naive ----------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["hamming74", "rep3", "spc4", "bch15_11", "bch63_45"]),
       st.integers(0, 2**32 - 1))
def test_totals_match_naive(name, seed):
    code = codes.get_code(name)
    g = decoder.tanner_for(code)
    r = np.random.default_rng(seed)
    llr, msgs = r.normal(0, 3, code.n), r.normal(0, 3, g.n_edges)
    w, cw = r.normal(1, 0.5, g.n_edges), r.normal(1, 0.5, code.n)
    assert np.allclose(decoder.variable_update(g, llr, msgs, w, cw),
                       decoder.variable_update_naive(g, llr, msgs, w, cw), rtol=1e-12, atol=1e-12)
    for variant, kw in [("plain", {}), ("nnms", {"weight": w}), ("noms", {"offset": np.abs(w)})]:
        a = decoder.check_update_min_sum(g, msgs, variant, **kw)
        b = decoder.check_update_min_sum_naive(g, msgs, variant, **kw)
        assert np.allclose(a, b, rtol=1e-12, atol=0)


def test_min_sum_ties_and_zeros():
    g = graph([[1, 1, 1, 1]])
    msgs = np.array([-1.0, 1.0, 0.0, -1.0])
    assert np.array_equal(decoder.check_update_min_sum(g, msgs),
                          decoder.check_update_min_sum_naive(g, msgs))


# -- full decode ------------------------------------------------------------

@pytest.mark.parametrize("name", list(PRESETS))
def test_noiseless_zero_frame(name, hamming_cyclic):
    spec = PRESETS[name].replace(early_stop=True)
    out = decode(spec, None, hamming_cyclic, np.full(7, -8.0))
    assert not out.hard_decisions.any() and out.valid and out.iterations_used == 1


def test_single_error_corrected(hamming):
    llr = np.full(7, -4.0)
    llr[3] = 1.0
    out = decode(PRESETS["bp"], None, hamming, llr)
    assert not out.hard_decisions.any()
    assert np.array_equal(out.hard_decisions, (exhaustive_map_oracle(hamming, llr) > 0.5))


def test_batch_matches_single(bch15, rng):
    llr = rng.normal(-2, 2, (6, 15))
    spec = PRESETS["relaxed-ms"].replace(early_stop=True)
    batch = decode(spec, None, bch15, llr)
    for i in range(6):
        one = decode(spec, None, bch15, llr[i])
        assert np.array_equal(one.hard_decisions, batch.hard_decisions[i])
        assert one.iterations_used == batch.iterations_used[i]
        assert np.array_equal(one.marginal_llrs, batch.marginal_llrs[i])


def test_early_stop_does_not_change_decisions_when_stable(bch15, rng):
    llr = rng.normal(-3, 1.5, (50, 15))
    a = decode(PRESETS["bp"].replace(early_stop=True), None, bch15, llr)
    assert (a.iterations_used <= 5).all() and a.valid[a.iterations_used < 5].all()


def test_neural_marginals_in_unit_interval(bch15, rng):
    g = decoder.tanner_for(bch15)
    spec = PRESETS["bp-ff"]
    p = Parameters.default(spec, g)
    p.edge_weights += rng.normal(0, 0.5, p.edge_weights.shape)
    out = decode(spec, p, bch15, rng.normal(0, 20, (10, 15)))
    assert np.all((out.marginals >= 0) & (out.marginals <= 1))
    assert np.all(np.isfinite(out.marginal_llrs))


def test_cyclic_shift_equivariance(bch15, rng):
    # all n shifts of the parity row: the cyclic shift is then a graph automorphism
    circulant = codes.LinearCode(np.array([np.roll(bch15.h[0], s) for s in range(15)]))
    perm = codes.automorphism(15, 0, 1)
    llr = rng.normal(-1, 2, (20, 15))
    for name in ("bp", "ms", "relaxed-ms"):
        a = decode(PRESETS[name], None, circulant, codes.apply_permutation(perm, llr))
        b = decode(PRESETS[name], None, circulant, llr)
        assert np.allclose(a.marginal_llrs[:, -1], codes.apply_permutation(perm, b.marginal_llrs[:, -1]),
                           rtol=1e-9, atol=1e-9)


# -- specs and parameters -----------------------------------------------------

def test_parse_spec_roundtrip():
    for name, spec in PRESETS.items():
        assert parse_spec(name) == spec
        assert parse_spec(spec.describe()) == spec
    assert parse_spec("bp-rnn:T=3,clip=8").iterations == 3


@pytest.mark.parametrize("bad", ["nonsense", "bp:T=0", "check=sum_product;weights=per_edge_offset"])
def test_parse_spec_rejects(bad):
    with pytest.raises((ValueError, KeyError)):
        parse_spec(bad)


def test_parameter_shapes(bch15):
    g = decoder.tanner_for(bch15)
    E = g.n_edges
    assert decoder.parameter_shapes(PRESETS["bp-ff"], g)["edge_weights"] == (5, E)
    assert decoder.parameter_shapes(PRESETS["bp-rnn"], g)["edge_weights"] == (E,)
    assert decoder.parameter_shapes(PRESETS["bp-ff-pairs"], g)["edge_weights"] == (5, g.n_pairs)
    assert decoder.parameter_shapes(PRESETS["nms"], g) == {"edge_weights": (1,)}
    assert decoder.parameter_shapes(PRESETS["relaxed-ms"], g) == {"gamma_raw": (1,)}


def test_params_validate(bch15):
    g = decoder.tanner_for(bch15)
    p = Parameters(edge_weights=np.ones(3))
    with pytest.raises(ValueError):
        decode(PRESETS["bp-rnn"], p, bch15, np.zeros(15))
    with pytest.raises(ValueError):
        decode(PRESETS["bp"], None, bch15, np.zeros(14))
    assert Parameters.default(PRESETS["relaxed-ms"], g).gamma[0] == 0.5


def test_spec_validation():
    with pytest.raises(ValueError):
        DecoderSpec(check_rule="min_sum", pair_weights=True)
    with pytest.raises(ValueError):
        DecoderSpec(iterations=0)
