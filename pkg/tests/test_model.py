import numpy as np
import pytest
from hypothesis import given, strategies as st

from factored_rl.model import (
    DimensionError,
    FactorDims,
    Scope,
    decode_index,
    dumps_spec,
    encode_index,
    flat_model,
    flatten_to_flat_mdp,
    loads_spec,
    make_spec,
    project_scope,
    validate_spec,
)


@pytest.mark.parametrize("factors,dims,idx", [([0, 0], [2, 3], 0), ([1, 2], [2, 3], 5), ([1, 1], [2, 3], 4)])
def test_encode_decode_examples(factors, dims, idx):
    assert encode_index(factors, dims) == idx
    assert decode_index(idx, dims) == factors


def test_encode_out_of_range_names_component():
    with pytest.raises(DimensionError, match="factor 1"):
        encode_index([0, 3], [2, 3])


def test_decode_out_of_range():
    with pytest.raises(DimensionError):
        decode_index(6, [2, 3])


@given(st.lists(st.integers(1, 5), min_size=1, max_size=4).flatmap(
    lambda dims: st.tuples(st.just(dims), st.integers(0, int(np.prod(dims)) - 1))))
def test_roundtrip_property(case):
    dims, idx = case
    assert encode_index(decode_index(idx, dims), dims) == idx


@given(st.lists(st.integers(1, 4), min_size=1, max_size=4))
def test_encode_matches_numpy_c_order(dims):
    for idx in range(int(np.prod(dims))):
        assert decode_index(idx, dims) == list(np.unravel_index(idx, dims))


@pytest.mark.parametrize("scope,expected", [((0, 2), [1, 2]), ((1,), [0]), ((0, 1, 2), [1, 0, 2])])
def test_project_scope(scope, expected):
    assert project_scope([1, 0, 2], Scope(scope)) == expected


def test_scope_must_increase():
    with pytest.raises(ValueError):
        Scope((2, 1))


def test_scope_cells_match_projection():
    dims = FactorDims((2, 3), (2,))
    sc = Scope((0, 2))
    cells = dims.scope_cells(sc)
    for x in range(dims.X):
        full = decode_index(x, dims.all_dims)
        assert cells[x] == encode_index(project_scope(full, sc), dims.scope_dims(sc))


def two_factor_spec(row=(0.5, 0.5), mean=0.3):
    return make_spec((2, 2), (2,), 2,
                     [((0, 2), [mean] * 4)],
                     [((0, 2), [list(row)] * 4), ((1, 2), [[0.5, 0.5]] * 4)])


def test_validate_ok():
    assert validate_spec(two_factor_spec()) == []


def test_validate_row_sum():
    problems = validate_spec(two_factor_spec(row=(0.45, 0.45)))
    assert any("row sum 0.9" in p and "!= 1" in p for p in problems)


def test_validate_mean_range():
    problems = validate_spec(two_factor_spec(mean=1.5))
    assert any("mean 1.5 out of [0,1]" in p for p in problems)


def test_validate_bad_scope_and_shape():
    spec = make_spec((2,), (2,), 1, [((0, 5), [0.5] * 4)], [((0, 1), [[1.0, 0.0]] * 3)])
    problems = validate_spec(spec)
    assert any("scope index" in p for p in problems)
    assert any("table shape" in p for p in problems)


def test_flatten_cardinality_and_product_row():
    spec = make_spec((2, 2), (), 1, [((0,), [0.7, 0.7], [False, False])],
                     [((0,), [[0.5, 0.5]] * 2), ((1,), [[0.5, 0.5]] * 2)])
    flat = flatten_to_flat_mdp(spec)
    assert flat.dims.state_dims == (4,)
    assert flat.dims.A == 1
    assert flat.transitions[0].scope.indices == (0, 1)
    np.testing.assert_allclose(flat.transitions[0].rows[0], [0.25] * 4)
    np.testing.assert_allclose(flat.rewards[0].means, 0.7)


def test_flat_model_rows_sum_to_one(rng):
    from factored_rl.environment import gen_random_fmdp
    spec = gen_random_fmdp(((2, 3), (2,)), ([(0, 2)], [(0, 2), (0, 1, 2)]), 3, seed=4)
    R, P = flat_model(spec)
    np.testing.assert_allclose(P.sum(axis=2), 1.0, atol=1e-12)
    assert R.shape == (6, 2)


def test_json_roundtrip():
    spec = make_spec((2,), (2,), 3, [((0, 1), [0.1, 0.2, 0.3, 0.4], [True, False, True, False])],
                     [((0, 1), [[0.25, 0.75]] * 4)], (1,))
    back = loads_spec(dumps_spec(spec))
    assert back.initial_state == (1,)
    np.testing.assert_array_equal(back.rewards[0].bernoulli, spec.rewards[0].bernoulli)
    np.testing.assert_array_equal(back.transitions[0].rows, spec.transitions[0].rows)
    assert dumps_spec(back) == dumps_spec(spec)
