import numpy as np
import pytest

from einet import engine
from einet.compiler import compile_graph
from einet.engine import (
    EngineError,
    EvidenceError,
    backward,
    conditional_log_density,
    conditional_sample,
    forward,
    init_parameters,
    log_einsum_exp,
    sample,
)
from einet.expfam import CategoricalFamily, GaussianFamily
from einet.oracle import expand, random_fixture, scalar_eval
from einet.structures import StructureConfig, random_binary_tree


def _tiny_discrete(seed=0, d_vars=3, k=3, replicas=2, num_states=2):
    rg = random_binary_tree(d_vars, StructureConfig(depth=1, replicas=replicas, seed=seed))
    circuit = compile_graph(rg, k=k)
    family = CategoricalFamily(num_states)
    params = init_parameters(circuit, family, seed=seed + 1)
    return circuit, params, family


def test_log_einsum_exp_identity():
    out = log_einsum_exp(np.zeros((1, 1)), np.zeros((1, 1)), np.ones((1, 1, 1, 1)))
    assert out.shape == (1, 1)
    assert abs(out[0, 0]) < 1e-15


def test_log_einsum_exp_uniform():
    w = np.full((1, 2, 2, 2), 0.25)
    half = np.log(0.5) * np.ones((1, 2))
    out = log_einsum_exp(half, half, w)
    assert np.allclose(out, np.log(0.25), atol=1e-12)


def test_log_einsum_exp_underflow_stays_finite():
    w = np.full((1, 2, 2, 2), 0.25)
    left = np.array([[-1000.0, -1001.0]])
    right = np.array([[-1000.0, -1000.0]])
    out = log_einsum_exp(left, right, w)
    assert np.all(np.isfinite(out))
    # extended-precision reference
    import mpmath
    terms = [w[0, 0, i, j] * mpmath.exp(left[0, i]) * mpmath.exp(right[0, j])
             for i in range(2) for j in range(2)]
    want = float(mpmath.log(mpmath.fsum(terms)))
    assert abs(out[0, 0] - want) < 1e-10


def test_log_einsum_exp_neg_inf_operand():
    w = np.full((1, 1, 2, 2), 0.25)
    left = np.array([[-np.inf, -np.inf]])
    right = np.array([[0.0, 0.0]])
    out = log_einsum_exp(left, right, w)
    assert np.isneginf(out).all()
    assert not np.isnan(out).any()


def test_forward_matches_oracle(small_fixture):
    fx = small_fixture
    sc = expand(fx.circuit, fx.params, fx.family)
    got = forward(fx.circuit, fx.params, fx.family, fx.data).log_likelihood
    want = np.array([scalar_eval(sc, row) for row in fx.data])
    assert np.max(np.abs(got - want)) < 1e-6


def test_forward_all_marginalized_is_zero(small_fixture):
    fx = small_fixture
    mask = np.ones(fx.circuit.d_vars, dtype=bool)
    ll = forward(fx.circuit, fx.params, fx.family, fx.data, marg_mask=mask).log_likelihood
    assert np.max(np.abs(ll)) < 1e-6


def test_forward_identical_rows_bitwise():
    circuit, params, family = _tiny_discrete()
    x = np.tile(np.array([[1.0, 0.0, 1.0]]), (5, 1))
    ll = forward(circuit, params, family, x).log_likelihood
    assert np.all(ll == ll[0])


def test_forward_rejects_shape_mismatch():
    circuit, params, family = _tiny_discrete()
    with pytest.raises(EngineError):
        forward(circuit, params, family, np.zeros((2, 5)))


def test_conditional_empty_sets_is_log_likelihood():
    circuit, params, family = _tiny_discrete(seed=3)
    x = np.array([[1.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
    ll = forward(circuit, params, family, x).log_likelihood
    cond = conditional_log_density(circuit, params, family, x,
                                   query=[0, 1, 2], evidence=[])
    assert np.allclose(cond, ll, atol=1e-12)


def test_conditional_matches_enumeration():
    circuit, params, family = _tiny_discrete(seed=5)
    sc = expand(circuit, params, family)
    from einet.oracle import exhaustive_marginal
    x = np.array([1.0, 0.0, 1.0])
    got = conditional_log_density(circuit, params, family, x,
                                  query=[1], evidence=[0])[0]
    want = exhaustive_marginal(sc, x, [0, 1]) - exhaustive_marginal(sc, x, [0])
    assert abs(got - want) < 1e-6


def test_conditional_rejects_overlap():
    circuit, params, family = _tiny_discrete()
    with pytest.raises(ValueError):
        conditional_log_density(circuit, params, family,
                                np.zeros(3), query=[0], evidence=[0, 1])


def test_backward_root_responsibility_sums_to_batch(small_fixture):
    fx = small_fixture
    trace = forward(fx.circuit, fx.params, fx.family, fx.data)
    stats = backward(fx.circuit, fx.params, fx.family, trace)
    root_idx = len(fx.circuit.layers) - 1
    total = 0.0
    if root_idx in stats.einsum:
        total += stats.einsum[root_idx].sum()
    if stats.mixing:
        # a root mixing layer redistributes the einsum mass; the einsum layer
        # below it then holds the full batch mass as well
        total = stats.einsum[max(stats.einsum)].sum()
    assert abs(total - len(fx.data)) < 1e-8
    assert stats.n_samples == len(fx.data)


def test_backward_matches_finite_differences():
    from einet.oracle import finite_diff_grad
    fx = random_fixture(seed=9)
    trace = forward(fx.circuit, fx.params, fx.family, fx.data)
    stats = backward(fx.circuit, fx.params, fx.family, trace)
    batch = len(fx.data)
    rng = np.random.default_rng(0)
    for layer_idx, acc in stats.einsum.items():
        w = fx.params.einsum[layer_idx]
        l = int(rng.integers(acc.shape[0]))
        k = int(rng.integers(acc.shape[1]))
        i = int(rng.integers(acc.shape[2]))
        j = int(rng.integers(acc.shape[3]))
        # d mean LL / d W = n / (W * batch)
        want = acc[l, k, i, j] / (w[l, k, i, j] * batch)
        got = finite_diff_grad(fx.circuit, fx.params, fx.family, fx.data,
                               ("einsum", layer_idx, l, k, i, j))
        denom = max(abs(want), 1e-8)
        assert abs(got - want) / denom < 1e-4


def test_backward_one_hot_path():
    circuit, params, family = _tiny_discrete(seed=11, k=2)
    # make every einsum row deterministic on (0, 0)
    for i, w in params.einsum.items():
        w[:] = 1e-12
        w[:, :, 0, 0] = 1.0
        params.einsum[i] = engine.project_einsum_weights(w)
    x = np.array([[1.0, 1.0, 0.0]])
    trace = forward(circuit, params, family, x)
    stats = backward(circuit, params, family, trace)
    for w_acc in stats.einsum.values():
        off_path = w_acc.copy()
        off_path[:, :, 0, 0] = 0.0
        assert np.all(off_path <= 1e-6)


def test_backward_masked_variables_skip_statistics():
    circuit, params, family = _tiny_discrete(seed=13)
    x = np.array([[1.0, 0.0, 1.0]])
    mask = np.array([False, True, False])
    trace = forward(circuit, params, family, x, marg_mask=mask)
    stats = backward(circuit, params, family, trace)
    assert np.all(stats.acc_pt[1] == 0.0)
    assert stats.acc_p[1].sum() > 0.0


def test_sample_deterministic_given_seed():
    circuit, params, family = _tiny_discrete(seed=17)
    a = sample(circuit, params, family, 20, seed=5)
    b = sample(circuit, params, family, 20, seed=5)
    assert np.array_equal(a, b)
    c = sample(circuit, params, family, 20, seed=6)
    assert not np.array_equal(a, c)


def test_sample_gaussian_mean():
    rg = random_binary_tree(2, StructureConfig(depth=1, replicas=1, seed=0))
    circuit = compile_graph(rg, k=1)
    family = GaussianFamily()
    params = init_parameters(circuit, family, seed=0)
    params.phi[..., 0] = 1.5
    params.phi[..., 1] = 1.5 ** 2 + 1.0
    n = 4000
    draws = sample(circuit, params, family, n, seed=3)
    assert np.all(np.abs(draws.mean(axis=0) - 1.5) < 3.0 / np.sqrt(n))


def test_sample_joint_matches_forward():
    circuit, params, family = _tiny_discrete(seed=19, d_vars=2, k=2)
    n = 20000
    draws = sample(circuit, params, family, n, seed=1)
    states = [(a, b) for a in range(2) for b in range(2)]
    want = {}
    for s in states:
        x = np.array([list(s)], dtype=float)
        want[s] = float(np.exp(forward(circuit, params, family, x).log_likelihood[0]))
    emp = {s: np.mean(np.all(draws == np.array(s), axis=1)) for s in states}
    tv = 0.5 * sum(abs(emp[s] - want[s]) for s in states)
    assert tv < 0.02


def test_conditional_sample_copies_evidence():
    circuit, params, family = _tiny_discrete(seed=23)
    x_e = np.array([1.0, 0.0, 1.0])
    out = conditional_sample(circuit, params, family, x_e, [0, 1, 2], 10, seed=0)
    assert np.array_equal(out, np.tile(x_e, (10, 1)))


def test_conditional_sample_empty_evidence_matches_sample():
    circuit, params, family = _tiny_discrete(seed=29)
    a = conditional_sample(circuit, params, family, np.zeros(3), [], 15, seed=4)
    b = sample(circuit, params, family, 15, seed=4)
    assert np.array_equal(a, b)


def test_conditional_sample_impossible_evidence():
    circuit, params, family = _tiny_discrete(seed=31)
    x_e = np.array([5.0, 0.0, 0.0])  # outside categorical support
    with pytest.raises(Exception):
        conditional_sample(circuit, params, family, x_e, [0], 5, seed=0)


def test_weight_projection_simplex():
    rng = np.random.default_rng(0)
    w = engine.project_einsum_weights(rng.random((3, 2, 4, 4)))
    sums = w.sum(axis=(2, 3))
    assert np.allclose(sums, 1.0, atol=1e-12)
    assert w.min() >= engine.EPS_W
