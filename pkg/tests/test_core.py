import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from forni.core import (
    NEIGHBOR_OFFSETS,
    EstimationConfig,
    aggregate_similarity,
    basis_neighbor_similarity,
    build_weights,
    cfari,
    default_mask,
    estimate,
    extract_likely_fos,
    joint_objective,
    sweep_order,
)
from forni.geometry import build_basis, default_basis
from forni.metrics import e_fo_field
from forni.solver import normalize, solve_weighted_l1


def likely_oracle(R, directions, theta_deg):
    """Direct evaluation of the local-maximum predicate with angles in degrees."""
    out = []
    for i, v in enumerate(directions):
        ok = True
        for j, u in enumerate(directions):
            if j == i:
                continue
            ang = np.degrees(np.arccos(min(1.0, abs(float(v @ u)))))
            if ang <= theta_deg and R[j] > R[i]:
                ok = False
                break
        if ok:
            out.append(i)
    return np.array(out, dtype=int)


def errors(field, truth):
    return e_fo_field(field.fo_sets(), [truth.fo_set(v) for v in field.voxels])


# --- basis-neighbor and aggregate similarity ---------------------------------


def test_basis_neighbor_similarity_examples(basis):
    i = 50
    r = basis_neighbor_similarity(1.0, basis.directions[i : i + 1], basis)
    assert r[i] == 1.0
    np.testing.assert_allclose(r, np.abs(basis.directions @ basis.directions[i]), atol=1e-15)
    diag = build_basis([[1.0, 1.0, 0.0]])
    r = basis_neighbor_similarity(0.5, [[1.0, 0, 0], [0, 1.0, 0]], diag)
    assert abs(r[0] - 0.5 / np.sqrt(2)) < 1e-15
    assert abs(r[0] - 0.3536) < 1e-4
    assert np.all(basis_neighbor_similarity(0.7, np.zeros((0, 3)), basis) == 0)


def test_aggregate_isolated_and_full_neighborhood(basis):
    assert np.all(aggregate_similarity([], [], basis) == 0)
    v1 = basis.directions[10:11]
    R = aggregate_similarity([1.0] * 26, [v1] * 26, basis)
    assert R[10] == 26.0
    assert np.all(R <= 26.0 + 1e-12)


def test_crossing_profile_has_two_maxima(basis):
    x, y = basis.nearest([[1.0, 0, 0], [0, 1.0, 0]])
    XY = basis.directions[[x, y]]
    w = np.random.default_rng(0).uniform(0.2, 1.0, 26)
    R = aggregate_similarity(w, [XY] * 26, basis)
    likely = extract_likely_fos(R, basis, 20.0)
    assert sorted(likely) == sorted([x, y])
    assert np.degrees(np.arccos(basis.cosines[x, y])) > 20.0


def test_mixed_crossing_profile_keeps_two_separated_maxima(basis):
    # single-FO neighbors pull each peak a little toward the other axis
    x, y = basis.nearest([[1.0, 0, 0], [0, 1.0, 0]])
    X, Y, XY = basis.directions[[x]], basis.directions[[y]], basis.directions[[x, y]]
    R = aggregate_similarity(np.ones(26), [XY] * 18 + [X] * 4 + [Y] * 4, basis)
    likely = basis.directions[extract_likely_fos(R, basis, 20.0)]
    near_x = np.degrees(np.arccos(np.abs(likely @ X[0]))) < 12
    near_y = np.degrees(np.arccos(np.abs(likely @ Y[0]))) < 12
    assert near_x.any() and near_y.any() and np.all(near_x | near_y)


@given(st.integers(0, 2**31 - 1))
def test_aggregate_bounded_by_weight_sum(seed):
    basis = default_basis()
    rng = np.random.default_rng(seed)
    n = rng.integers(0, 27)
    w = rng.uniform(0, 1, n)
    sets = [basis.directions[rng.choice(289, rng.integers(0, 4), replace=False)]
            for _ in range(n)]
    R = aggregate_similarity(w, sets, basis)
    assert np.all(R >= 0)
    assert np.all(R <= w.sum() + 1e-12)
    if all(len(s) == 0 for s in sets):
        assert np.all(R == 0)


# --- likely FOs ----------------------------------------------------------------


def test_single_bump(basis):
    i = 77
    R = np.exp(-5 * (1 - basis.cosines[i]))
    np.testing.assert_array_equal(extract_likely_fos(R, basis), [i])


def test_constant_profile_selects_all_and_gives_uniform_weights(basis):
    likely = extract_likely_fos(np.full(289, 3.0), basis)
    assert len(likely) == 289
    np.testing.assert_array_equal(build_weights(likely, basis, 0.8), np.ones(289))


def test_two_bumps_with_saddle(basis):
    x, y = basis.nearest([[1.0, 0, 0], [0, 1.0, 0]])
    R = 2.0 * np.maximum(basis.cosines[x], basis.cosines[y]) ** 8
    likely = extract_likely_fos(R, basis, 20.0)
    np.testing.assert_array_equal(likely, likely_oracle(R, basis.directions, 20.0))
    assert set(likely) == {x, y}
    saddle = basis.nearest([[1.0, 1.0, 0]])[0]
    assert saddle not in likely


@given(st.integers(0, 2**31 - 1), st.sampled_from([5.0, 12.0, 20.0, 35.0]))
def test_likely_matches_predicate_oracle(seed, theta):
    basis = default_basis(4)  # 33 directions keeps the oracle cheap
    rng = np.random.default_rng(seed)
    R = rng.integers(0, 4, len(basis)).astype(float)  # many ties
    got = extract_likely_fos(R, basis, theta)
    np.testing.assert_array_equal(got, likely_oracle(R, basis.directions, theta))
    assert np.argmax(R) in got


def test_theta_is_in_degrees(basis):
    i = basis.nearest([[0, 0, 1.0]])[0]
    near = np.degrees(np.arccos(basis.cosines[i]))
    j = np.flatnonzero((near > 10) & (near < 20))[0]
    R = np.zeros(289)
    R[i], R[j] = 2.0, 1.0
    assert j not in extract_likely_fos(R, basis, 20.0)
    assert j in extract_likely_fos(R, basis, 10.0)


# --- weights -------------------------------------------------------------------


def test_weight_examples():
    b = build_basis([[1.0, 0, 0], [0, 1.0, 0], [0.5, np.sqrt(0.75), 0]])
    C = build_weights([0], b, 0.8)
    assert abs(C[0] - 1.0) < 1e-12
    assert abs(C[1] - 5.0) < 1e-12
    assert abs(C[2] - 3.0) < 1e-12
    np.testing.assert_array_equal(build_weights([0], b, 0.0), np.ones(3))
    np.testing.assert_array_equal(build_weights([], b, 0.8), np.ones(3))


@pytest.mark.parametrize("alpha", [1.0, 1.5, -0.1])
def test_weight_alpha_range(basis, alpha):
    with pytest.raises(ValueError):
        build_weights([0], basis, alpha)


@given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.99))
def test_weights_have_unit_minimum(seed, alpha):
    basis = default_basis()
    rng = np.random.default_rng(seed)
    likely = rng.choice(289, rng.integers(1, 6), replace=False)
    C = build_weights(likely, basis, alpha)
    assert abs(C.min() - 1.0) < 1e-12
    assert np.all(np.isfinite(C)) and np.all(C >= 1.0)
    assert np.all(C[likely] == C.min())


# --- configuration and helpers ----------------------------------------------------


@pytest.mark.parametrize("kw", [dict(alpha=1.0), dict(beta=0.0), dict(mu=-1.0),
                                dict(theta_r=0.0), dict(n_parallel=0), dict(workers=0),
                                dict(f_th=1.0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        EstimationConfig(**kw)


def test_neighborhood_is_26_connected():
    assert len(NEIGHBOR_OFFSETS) == 26
    assert len({tuple(o) for o in NEIGHBOR_OFFSETS}) == 26
    assert np.abs(NEIGHBOR_OFFSETS).max() == 1


def test_sweep_order_is_z_then_y_then_x():
    mask = np.zeros((3, 2, 2), dtype=bool)
    mask[[0, 2, 1], [1, 0, 0], [0, 0, 1]] = True
    np.testing.assert_array_equal(sweep_order(mask), [[2, 0, 0], [0, 1, 0], [1, 0, 1]])


def test_default_mask_threshold():
    s0 = np.zeros((10, 10, 1))
    s0[:5] = 100.0
    s0[5, 0] = 5.0
    m = default_mask(s0)
    assert m.sum() == 50 and not m[5, 0, 0]


# --- estimation ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def runs(small_case, basis):
    truth, scheme, y, G = small_case
    cf = cfari(y, truth.mask, basis, G)
    fo = estimate(y, truth.mask, basis, G, init=cf, scheme=scheme)
    return cf, fo


def test_field_invariants(runs, basis):
    for field in runs:
        sums = field.fractions.sum(axis=1)
        assert np.all((np.abs(sums - 1) < 1e-10) | (sums == 0))
        assert np.all(field.fractions >= 0)
        assert np.all(np.abs(field.weights.min(axis=1) - 1.0) < 1e-12)
        for m in range(len(field)):
            fos = field.fos(m)
            assert np.all(basis.abs_cosines(fos).max(axis=0) > 1 - 1e-12) if len(fos) else True
            np.testing.assert_array_equal(field.fo_idx[m],
                                          np.flatnonzero(field.fractions[m] > 0.1))


def test_forni_beats_cfari_on_crossing(runs, small_case):
    truth = small_case[0]
    cf, fo = runs
    cross = truth.count[tuple(cf.voxels.T)] == 2
    assert cross.sum() > 0
    e_cf, e_fo_ = errors(cf, truth), errors(fo, truth)
    assert e_fo_[cross].mean() < e_cf[cross].mean()
    assert e_fo_.mean() < e_cf.mean()


def test_alpha_zero_equals_cfari_bitwise(small_case, basis):
    truth, scheme, y, G = small_case
    cf = cfari(y, truth.mask, basis, G)
    for t_max in (1, 5):
        fo = estimate(y, truth.mask, basis, G, EstimationConfig(alpha=0.0, t_max=t_max),
                      scheme=scheme)
        assert np.array_equal(fo.fractions, cf.fractions)
        assert np.array_equal(fo.raw, cf.raw)
        assert all(np.array_equal(a, b) for a, b in zip(fo.fo_idx, cf.fo_idx))
        assert np.all(fo.weights == 1.0)
        assert len(fo.diagnostics["sweeps"]) == 1


def test_empty_neighborhood_reduces_to_cfari(small_case, basis):
    truth, scheme, y, G = small_case
    M = int(truth.mask.sum())
    empty = [np.zeros(0, dtype=int)] * M
    # one group covering the mask: every voxel sees only the empty initial state
    fo = estimate(y, truth.mask, basis, G, EstimationConfig(t_max=1, n_parallel=M),
                  init=empty, scheme=scheme)
    cf = cfari(y, truth.mask, basis, G)
    assert np.array_equal(fo.raw, cf.raw)
    assert np.all(fo.weights == 1.0)


def test_subproblem_terms_never_increase(small_case, basis):
    truth, scheme, y, G = small_case
    cfg = EstimationConfig(n_parallel=1)
    prev = cfari(y, truth.mask, basis, G)
    Y = y[tuple(prev.voxels.T)]
    for _ in range(3):
        cur = estimate(y, truth.mask, basis, G, EstimationConfig(n_parallel=1, t_max=1),
                       init=prev, scheme=scheme)
        for m in range(len(cur)):
            r = G @ prev.raw[m] - Y[m]
            before = r @ r + cfg.beta * cur.weights[m] @ prev.raw[m]
            assert cur.objective_terms[m] <= before + 1e-12
        prev = cur


def test_joint_objective_matches_terms(runs, small_case):
    _, _, y, G = small_case
    fo = runs[1]
    assert abs(joint_objective(fo, y, G, 0.5) - fo.objective()) < 1e-9 * fo.objective()


def test_schedule_robustness(small_case, basis):
    truth, scheme, y, G = small_case
    objs = [estimate(y, truth.mask, basis, G, EstimationConfig(n_parallel=n), scheme=scheme)
            .objective() for n in (1, 8)]
    assert abs(objs[0] - objs[1]) / max(objs) < 0.01


def test_worker_count_does_not_change_result(small_case, basis):
    truth, scheme, y, G = small_case
    a = estimate(y, truth.mask, basis, G, EstimationConfig(workers=1), scheme=scheme)
    b = estimate(y, truth.mask, basis, G, EstimationConfig(workers=3), scheme=scheme)
    assert np.array_equal(a.raw, b.raw)
    assert all(np.array_equal(p, q) for p, q in zip(a.fo_idx, b.fo_idx))
    assert a.diagnostics["sweeps"] == b.diagnostics["sweeps"]


def test_diagnostics_and_convergence(runs):
    fo = runs[1]
    sweeps = fo.diagnostics["sweeps"]
    assert 1 <= len(sweeps) <= 10
    last = sweeps[-1]
    assert last["changed_fraction"] <= 0.001 or len(sweeps) == 10
    assert fo.diagnostics["unconverged"] == int((~fo.converged).sum())


def test_t_max_zero_returns_initialization(small_case, basis):
    truth, scheme, y, G = small_case
    init = cfari(y, truth.mask, basis, G)
    fo = estimate(y, truth.mask, basis, G, EstimationConfig(t_max=0), init=init, scheme=scheme)
    assert all(np.array_equal(a, b) for a, b in zip(fo.fo_idx, init.fo_idx))
    assert fo.diagnostics["sweeps"] == []


def test_explicit_tensors_match_fitted(small_case, basis):
    from forni.dti import fit_tensors

    truth, scheme, y, G = small_case
    D = fit_tensors(y, scheme)
    a = estimate(y, truth.mask, basis, G, tensors=D)
    b = estimate(y, truth.mask, basis, G, scheme=scheme)
    assert np.array_equal(a.raw, b.raw)


def test_estimate_input_errors(small_case, basis):
    truth, scheme, y, G = small_case
    with pytest.raises(ValueError):
        estimate(y, np.zeros(truth.shape, bool), basis, G, scheme=scheme)
    with pytest.raises(ValueError):
        estimate(y, truth.mask, basis, G)  # neither tensors nor scheme
    with pytest.raises(ValueError):
        estimate(y[..., :10], truth.mask, basis, G, scheme=scheme)
    with pytest.raises(ValueError):
        estimate(y, truth.mask, basis, G, init=[[]], scheme=scheme)


def test_cfari_voxel_is_plain_solve(small_case, basis):
    truth, scheme, y, G = small_case
    cf = cfari(y, truth.mask, basis, G)
    v = cf.voxels[7]
    res = solve_weighted_l1(G, y[tuple(v)], None, 0.5)
    np.testing.assert_array_equal(cf.fractions[7], normalize(res.f))
