"""Expectation-maximization loop and its two half-steps.

The E-step has two exact conservation laws that hold for any parameter and
any path: summed cross-block jump expectations reproduce the observed jump
counts, and summed dwell expectations reproduce the window length.  Those,
a fine-grid posterior oracle, and the closed-form complete-data case pin
the statistics down from three independent directions.
"""
import numpy as np
import pytest
import scipy.linalg
from numpy.testing import assert_allclose

from conftest import START_BLOCKS, TRUE_BLOCKS, rand_generator, rand_path
from ctbmc.em import EmConfig, SufficientStats, e_step, fit, m_step
from ctbmc.errors import DegenerateStateError, ValidationError
from ctbmc.model import Generator, InitialDistribution
from ctbmc.simulate import observe, simulate_joint


def observed_counts(path, d):
    seq = np.concatenate(([path.x0], path.states)).astype(int)
    counts = np.zeros((d, d))
    for a, b in zip(seq[:-1], seq[1:]):
        counts[a, b] += 1
    return counts


# --- E-step ---

def test_estep_conserves_counts_and_time(ref_gen, ref_path_500):
    init = InitialDistribution.uniform(ref_path_500.x0, 2)
    stats = e_step(ref_gen, init, ref_path_500)
    counts = observed_counts(ref_path_500, 2)
    for l in range(2):
        for n in range(2):
            if l != n:
                assert stats.jumps[l, n].sum() == pytest.approx(counts[l, n], abs=1e-8)
    assert stats.dwell.sum() == pytest.approx(float(ref_path_500.times[-1]), rel=1e-9)


def test_estep_conservation_random_models():
    rng = np.random.default_rng(41)
    for k in range(10):
        d = int(rng.integers(2, 4))
        r = int(rng.integers(2, 4))
        gen = rand_generator(rng, d, r, scale=float(rng.uniform(0.5, 5.0)))
        path = rand_path(gen, 200, seed=300 + k)
        # score under a different parameter than the one that generated the data
        other = rand_generator(rng, d, r, scale=float(rng.uniform(0.5, 5.0)))
        stats = e_step(other, InitialDistribution.uniform(path.x0, r), path)
        counts = observed_counts(path, d)
        for l in range(d):
            for n in range(d):
                if l != n:
                    assert stats.jumps[l, n].sum() == pytest.approx(
                        counts[l, n], abs=1e-8
                    )
        assert stats.dwell.sum() == pytest.approx(float(path.times[-1]), rel=1e-6)
        assert (stats.jumps >= 0.0).all() and (stats.dwell >= 0.0).all()
        # joint self-transitions carry no mass
        for l in range(d):
            assert np.abs(np.diagonal(stats.jumps[l, l])).max() == 0.0


def test_estep_single_hidden_state_is_count_and_dwell():
    # with r = 1 nothing is hidden: statistics are the observed tallies
    blocks = np.zeros((3, 3, 1, 1))
    blocks[0, 1], blocks[1, 2], blocks[2, 0] = 2.0, 3.0, 4.0
    blocks[1, 0], blocks[2, 1], blocks[0, 2] = 1.0, 1.5, 0.5
    gen = Generator(blocks)
    path = rand_path(gen, 150, seed=42)
    scorer = rand_generator(np.random.default_rng(43), 3, 1)
    stats = e_step(scorer, InitialDistribution(path.x0, np.array([1.0])), path)
    counts = observed_counts(path, 3)
    seq = np.concatenate(([path.x0], path.states)).astype(int)
    dwell = np.zeros(3)
    for k, dt in enumerate(path.dwell_times()):
        dwell[seq[k]] += dt
    assert_allclose(stats.jumps[:, :, 0, 0], counts, atol=1e-10)
    assert_allclose(stats.dwell[:, 0], dwell, rtol=1e-12)


def test_estep_matches_grid_posterior_oracle():
    # brute force: discretize time, run a discrete forward-backward over the
    # joint states with the observable coordinate clamped, accumulate the
    # posterior transition and occupancy mass
    rng = np.random.default_rng(44)
    gen = rand_generator(rng, 2, 2, scale=1.0)
    path = rand_path(gen, 3, seed=45)
    init = InitialDistribution.uniform(path.x0, 2)
    stats = e_step(gen, init, path)

    delta = 1e-5
    t_end = float(path.times[-1])
    steps = int(round(t_end / delta))
    p_step = scipy.linalg.expm(gen.full() * delta)
    seq = np.concatenate(([path.x0], path.states)).astype(int)
    jump_idx = np.round(path.times / delta).astype(int)

    def block_at(j):
        # observable state on grid step j (steps are [j delta, (j+1) delta))
        return seq[np.searchsorted(jump_idx, j, side="right")]

    mask = np.zeros((steps + 1, 4))
    for j in range(steps + 1):
        l = block_at(j)
        mask[j, 2 * l: 2 * l + 2] = 1.0
    fwd = np.zeros((steps + 1, 4))
    start = np.zeros(4)
    start[2 * path.x0: 2 * path.x0 + 2] = init.mu
    fwd[0] = start / start.sum()
    for j in range(1, steps + 1):
        v = (fwd[j - 1] @ p_step) * mask[j]
        fwd[j] = v / v.sum()
    bwd = np.zeros((steps + 1, 4))
    bwd[steps] = 1.0
    for j in range(steps - 1, -1, -1):
        v = p_step @ (mask[j + 1] * bwd[j + 1])
        bwd[j] = v / v.sum()
    exp_jumps = np.zeros((4, 4))
    exp_dwell = np.zeros(4)
    for j in range(steps):
        xi = np.outer(fwd[j], mask[j + 1] * bwd[j + 1]) * p_step
        xi /= xi.sum()
        exp_jumps += xi
        exp_dwell += xi.sum(axis=1) * delta
    np.fill_diagonal(exp_jumps, 0.0)

    got_jumps = np.zeros((4, 4))
    for l in range(2):
        for n in range(2):
            got_jumps[2 * l: 2 * l + 2, 2 * n: 2 * n + 2] = stats.jumps[l, n]
    assert_allclose(got_jumps, exp_jumps, rtol=1e-3, atol=1e-4)
    assert_allclose(stats.dwell.reshape(-1), exp_dwell, rtol=1e-3)


def test_estep_needs_a_jump(ref_gen):
    from ctbmc.simulate import ObservedPath

    empty = ObservedPath(0, np.array([]), np.array([]), 1.0)
    with pytest.raises(ValidationError):
        e_step(ref_gen, InitialDistribution.uniform(0, 2), empty)


def test_estep_ignores_stretch_after_last_jump(ref_gen):
    path = rand_path(ref_gen, 30, seed=46)
    from ctbmc.simulate import ObservedPath

    longer = ObservedPath(path.x0, path.times, path.states, path.horizon + 1.0)
    init = InitialDistribution.uniform(path.x0, 2)
    a = e_step(ref_gen, init, path)
    b = e_step(ref_gen, init, longer)
    assert_allclose(a.jumps, b.jumps, rtol=0, atol=0)
    assert_allclose(a.dwell, b.dwell, rtol=0, atol=0)


# --- M-step ---

def test_mstep_is_rate_division():
    jumps = np.zeros((2, 2, 2, 2))
    jumps[0, 1] = [[4.0, 2.0], [1.0, 3.0]]
    jumps[1, 0] = [[6.0, 0.0], [0.0, 2.0]]
    jumps[0, 0, 0, 1] = 5.0
    dwell = np.array([[2.0, 4.0], [1.0, 0.5]])
    est = m_step(SufficientStats(jumps=jumps, dwell=dwell))
    assert est.blocks[0, 1, 0, 0] == 2.0  # 4 / 2
    assert est.blocks[0, 1, 1, 1] == 0.75  # 3 / 4
    assert est.blocks[0, 0, 0, 1] == 2.5
    assert est.blocks[1, 0, 1, 1] == 4.0
    # scaling both statistics leaves the rates alone
    doubled = m_step(SufficientStats(jumps=2.0 * jumps, dwell=2.0 * dwell))
    assert_allclose(doubled.blocks, est.blocks, rtol=0, atol=0)


def test_mstep_mask_forces_zeros():
    jumps = np.full((2, 2, 1, 1), 3.0)
    dwell = np.ones((2, 1))
    mask = np.ones((2, 2, 1, 1), dtype=bool)
    mask[0, 1] = False
    est = m_step(SufficientStats(jumps=jumps, dwell=dwell), mask=mask)
    assert est.blocks[0, 1, 0, 0] == 0.0
    assert est.blocks[1, 0, 0, 0] == 3.0
    with pytest.raises(ValidationError):
        m_step(SufficientStats(jumps=jumps, dwell=dwell), mask=np.ones((2, 2), dtype=bool))


def test_mstep_degenerate_state():
    jumps = np.zeros((2, 2, 1, 1))
    jumps[0, 1] = 2.0
    dwell = np.array([[0.0], [1.0]])
    with pytest.raises(DegenerateStateError) as exc:
        m_step(SufficientStats(jumps=jumps, dwell=dwell))
    assert exc.value.state == (0, 0)
    prev = Generator(TRUE_BLOCKS)
    est = m_step(
        SufficientStats(jumps=np.zeros((2, 2, 2, 2)), dwell=np.array([[0.0, 1.0], [1.0, 1.0]])),
        previous=prev,
    )
    # frozen row comes from the fallback, the others reestimate (to zero here)
    assert_allclose(est.blocks[0, 1, 0], prev.blocks[0, 1, 0], atol=0)
    assert est.blocks[0, 1, 1, 0] == 0.0
    # silent zero row when there is neither dwell nor jump mass
    quiet = m_step(SufficientStats(jumps=np.zeros((2, 2, 1, 1)), dwell=np.array([[0.0], [1.0]])))
    assert np.abs(quiet.blocks[0]).max() == 0.0


# --- fit loop ---

def test_fit_complete_data_hits_closed_form_fast():
    # nothing hidden: the first update lands on counts-over-dwell exactly and
    # the second pass only certifies convergence
    blocks = np.zeros((3, 3, 1, 1))
    blocks[0, 1], blocks[1, 2], blocks[2, 0] = 2.0, 3.0, 4.0
    blocks[1, 0], blocks[2, 1], blocks[0, 2] = 1.0, 1.5, 0.5
    gen = Generator(blocks)
    path = rand_path(gen, 300, seed=50)
    start = rand_generator(np.random.default_rng(51), 3, 1, scale=2.0)
    res = fit(start, InitialDistribution(path.x0, np.array([1.0])), path)
    assert res.termination == "converged"
    assert res.iterations <= 2
    counts = observed_counts(path, 3)
    seq = np.concatenate(([path.x0], path.states)).astype(int)
    dwell = np.zeros(3)
    for k, dt in enumerate(path.dwell_times()):
        dwell[seq[k]] += dt
    want = counts / dwell[:, None]
    got = res.estimate.blocks[:, :, 0, 0].copy()
    np.fill_diagonal(got, 0.0)
    np.fill_diagonal(want, 0.0)
    assert_allclose(got, want, rtol=1e-12)


def test_fit_trace_monotone_many_random_instances():
    rng = np.random.default_rng(52)
    for k in range(25):
        d = int(rng.integers(2, 4))
        r = int(rng.integers(1, 3))
        gen = rand_generator(rng, d, r, scale=float(rng.uniform(0.5, 8.0)))
        start = rand_generator(rng, d, r, scale=float(rng.uniform(0.5, 8.0)))
        path = rand_path(gen, 60, seed=400 + k)
        res = fit(start, InitialDistribution.uniform(path.x0, r), path,
                  EmConfig(rel_tol=1e-6, max_iters=40))
        assert (np.diff(res.loglik_trace) >= -1e-9).all()
        assert res.loglik_trace.size == res.iterations + 1
        assert res.termination in ("converged", "max_iters")


def test_fit_preserves_zero_pattern(ref_gen, start_gen):
    path = rand_path(ref_gen, 400, seed=53)
    res = fit(start_gen, InitialDistribution.uniform(path.x0, 2), path,
              EmConfig(max_iters=60))
    assert res.estimate.blocks[1, 0, 0, 1] == 0.0
    assert res.estimate.blocks[1, 0, 1, 0] == 0.0
    # entries that started positive stayed positive
    started = Generator(START_BLOCKS).off_diagonal_mask() & (START_BLOCKS > 0.0)
    assert (res.estimate.blocks[started] > 0.0).all()


def test_fit_honors_mask(ref_gen):
    path = rand_path(ref_gen, 200, seed=54)
    mask = Generator(START_BLOCKS).off_diagonal_mask()
    mask[0, 1, 1, 0] = False
    res = fit(Generator(START_BLOCKS), InitialDistribution.uniform(path.x0, 2),
              path, EmConfig(max_iters=25, mask=mask))
    assert res.estimate.blocks[0, 1, 1, 0] == 0.0
    assert res.estimate.blocks[0, 1, 0, 0] > 0.0


def test_fit_termination_settings(ref_gen, start_gen, ref_path_500):
    init = InitialDistribution.uniform(ref_path_500.x0, 2)
    capped = fit(start_gen, init, ref_path_500, EmConfig(max_iters=3))
    assert capped.termination == "max_iters"
    assert capped.iterations == 3
    loose = fit(start_gen, init, ref_path_500, EmConfig(rel_tol=0.5))
    assert loose.termination == "converged"
    assert loose.iterations <= 3


def test_fit_improves_loglik_toward_truth(ref_gen, start_gen, ref_path_500):
    init = InitialDistribution.uniform(ref_path_500.x0, 2)
    res = fit(start_gen, init, ref_path_500, EmConfig(max_iters=150))
    # the fitted model should beat the rough start decisively on its own data
    assert res.loglik_trace[-1] > res.loglik_trace[0] + 100.0


def test_fit_rejects_bad_inputs(ref_gen):
    from ctbmc.simulate import ObservedPath

    empty = ObservedPath(0, np.array([]), np.array([]), 1.0)
    with pytest.raises(ValidationError):
        fit(ref_gen, InitialDistribution.uniform(0, 2), empty)
    bad_blocks = TRUE_BLOCKS.copy()
    bad_blocks[0, 1] = -1.0
    path = rand_path(ref_gen, 10, seed=55)
    with pytest.raises(ValidationError):
        fit(Generator(bad_blocks), InitialDistribution.uniform(path.x0, 2), path)
    with pytest.raises(ValidationError):
        EmConfig(rel_tol=-1.0)
    with pytest.raises(ValidationError):
        EmConfig(max_iters=0)
