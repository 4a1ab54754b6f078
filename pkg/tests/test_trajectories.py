from __future__ import annotations

import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from openres import (
    GaussianState,
    ResolutionError,
    ResourceError,
    SpecificationError,
    SystemSpec,
    build_damping_matrix,
    derive_drift,
    evolve_state,
    run_ensemble,
)
from openres.trajectories import (
    MomentAccumulator,
    NoiseModel,
    exact_ou_coefficients,
    moment_features,
    sample_initial,
    step_euler_maruyama,
    step_exact_ou,
    trajectory_rng,
)


def single(gamma=0.1, omega=1.0, n_th=0.0):
    return SystemSpec(omega=[omega], W=[[np.sqrt(gamma / np.pi)]], n_th=n_th)


def _within(est, se, target, k=4.0):
    return np.all(np.abs(est - target) <= k * se + 1e-12)


def test_noise_factor(reference_pair):
    g = build_damping_matrix(reference_pair)
    nm = NoiseModel.from_damping(g, 0.5)
    np.testing.assert_allclose(nm.factor @ nm.factor.conj().T, nm.intensity, atol=1e-10 * np.linalg.norm(g))
    assert NoiseModel.from_damping(g, 0.0).is_zero


def test_sample_initial_degenerate_cases():
    rng = np.random.default_rng(0)
    assert np.all(sample_initial(GaussianState.vacuum(2), rng) == 0)
    mu = np.array([1.0 + 2j, -0.5j])
    for _ in range(5):
        np.testing.assert_allclose(sample_initial(GaussianState.coherent(mu), rng), mu, atol=1e-12)


def test_sample_initial_thermal_variance():
    s0 = GaussianState.thermal(1, 1.0)
    ens = run_ensemble(single(), s0, dt=1.0, t_max=0.0, K=100_000, base_seed=1, store_paths=True)
    x = ens.samples[:, 0, 0]
    for k in range(5):  # the ensemble draws alpha(0) exactly as sample_initial does
        assert sample_initial(s0, trajectory_rng(1, k))[0] == x[k]
    v = np.abs(x) ** 2
    assert abs(v.mean() - 1.0) <= 4 * v.std(ddof=1) / np.sqrt(v.size)
    r = x * x  # circular: E[alpha^2] = 0
    assert abs(r.mean().real) <= 4 * r.real.std() / np.sqrt(r.size)


def test_sample_initial_rejects_subvacuum():
    squeezed = GaussianState(np.zeros(1), np.array([[0.1]]), np.array([[0.5]]))
    with pytest.raises(SpecificationError, match="P function"):
        sample_initial(squeezed, np.random.default_rng(0))


def test_exact_step_identities(reference_pair):
    g = build_damping_matrix(reference_pair)
    M = derive_drift(reference_pair, g)
    a = np.array([1.0, 0.3j])
    quiet = NoiseModel.from_damping(g, 0.0)
    np.testing.assert_allclose(step_exact_ou(a, M, quiet, 0.7, None), expm(0.7 * M) @ a, atol=1e-14)
    noisy = NoiseModel.from_damping(g, 0.5)
    np.testing.assert_array_equal(step_exact_ou(a, M, noisy, 0.0, np.random.default_rng(0)), a)


def test_exact_step_noise_statistics(reference_pair):
    """xi = alpha' - e^{M dt} alpha: E[xi xi^H] = Q(dt), E[xi xi^T] = 0."""
    g = build_damping_matrix(reference_pair)
    M = derive_drift(reference_pair, g)
    noise = NoiseModel.from_damping(g, 0.5)
    rng = np.random.default_rng(5)
    xi = step_exact_ou(np.zeros((200_000, 2)), M, noise, 1.3, rng)
    E, RQ = exact_ou_coefficients(M, noise, 1.3)
    Q = RQ @ RQ.conj().T
    outer = xi[:, :, None] * xi.conj()[:, None, :]
    rel = xi[:, :, None] * xi[:, None, :]
    n = xi.shape[0]
    for f, target in ((outer, Q), (rel, np.zeros((2, 2)))):
        mean = f.mean(axis=0)
        se_re, se_im = f.real.std(axis=0) / np.sqrt(n), f.imag.std(axis=0) / np.sqrt(n)
        assert _within(mean.real, se_re, target.real) and _within(mean.imag, se_im, target.imag)


def test_euler_maruyama_guard(reference_pair):
    g = build_damping_matrix(reference_pair)
    M = derive_drift(reference_pair, g)
    with pytest.raises(ResolutionError, match="suggested dt") as info:
        step_euler_maruyama(np.zeros(2), M, NoiseModel.from_damping(g, 0.5), 0.5, np.random.default_rng(0))
    assert info.value.suggested_dt * np.linalg.norm(M, 2) < 0.1


def test_euler_maruyama_zero_path():
    spec = single()
    ens = run_ensemble(spec, GaussianState.vacuum(1), "euler-maruyama", dt=0.01, t_max=1.0, K=3,
                       base_seed=0, store_paths=True)
    assert np.all(ens.samples == 0)


def test_euler_maruyama_weak_order_one():
    spec = single(gamma=0.1)
    s0 = GaussianState.coherent([1.0])
    exact = abs(np.exp((-1j - 0.1) * 2.0))
    errs = []
    for dt in (0.02, 0.01, 0.005):
        ens = run_ensemble(spec, s0, "euler-maruyama", dt=dt, t_max=2.0, K=1, base_seed=0)
        errs.append(abs(abs(ens.moments_at(2.0).m[0]) - exact))
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.05)


def test_euler_maruyama_agrees_with_exact_in_distribution(reference_pair, coherent_start):
    a = run_ensemble(reference_pair, coherent_start, "exact-ou", dt=0.5, t_max=2.0, K=20_000, base_seed=1)
    b = run_ensemble(reference_pair, coherent_start, "euler-maruyama", dt=0.002, t_max=2.0, K=20_000,
                     base_seed=2, record_every=250)
    ma, sa_re, sa_im = a.moment_estimates()
    mb, sb_re, sb_im = b.moment_estimates()
    i, j = a.time_index(2.0), b.time_index(2.0)
    # EM bias at this dt is ~1e-3 relative, far below the sampling error
    assert _within(ma[i].real - mb[j].real, np.hypot(sa_re[i], sb_re[j]), 0.0)
    assert _within(ma[i].imag - mb[j].imag, np.hypot(sa_im[i], sb_im[j]), 0.0)


def test_zero_temperature_single_path_equals_deterministic(reference_pair, coherent_start):
    spec = reference_pair.replace(n_th=0.0)
    s0 = coherent_start.replace(N=np.outer(coherent_start.m.conj(), coherent_start.m))
    ens = run_ensemble(spec, s0, dt=0.25, t_max=3.0, K=1, base_seed=9, store_paths=True)
    M = derive_drift(spec, build_damping_matrix(spec))
    for j, t in enumerate(ens.times):
        np.testing.assert_allclose(ens.samples[0, j], expm(M * t) @ s0.m, atol=1e-12)
        np.testing.assert_allclose(ens.moments_at(t).m, ens.samples[0, j], atol=0)


def test_determinism_and_partition_independence(reference_pair, coherent_start):
    kw = dict(dt=0.5, t_max=3.0, K=2000, base_seed=17)
    a = run_ensemble(reference_pair, coherent_start, **kw)
    b = run_ensemble(reference_pair, coherent_start, **kw)
    np.testing.assert_array_equal(a.accumulator.mean, b.accumulator.mean)
    np.testing.assert_array_equal(a.accumulator.m2_re, b.accumulator.m2_re)
    c = run_ensemble(reference_pair, coherent_start, block_size=333, workers=4, **kw)
    np.testing.assert_allclose(c.accumulator.mean, a.accumulator.mean, atol=1e-13)
    d = run_ensemble(reference_pair, coherent_start, block_size=333, workers=4, store_paths=True, **kw)
    np.testing.assert_allclose(d.accumulator.mean, a.accumulator.mean, atol=1e-13)
    # path storage: trajectory k is a function of (seed, k) only
    e = run_ensemble(reference_pair, coherent_start, block_size=7, store_paths=True,
                     **{**kw, "K": 10})
    np.testing.assert_array_equal(e.samples, d.samples[:10])


def test_trajectory_streams_are_independent_of_order():
    a = trajectory_rng(3, 5).standard_normal(4)
    trajectory_rng(3, 4).standard_normal(10)
    np.testing.assert_array_equal(trajectory_rng(3, 5).standard_normal(4), a)
    assert not np.array_equal(trajectory_rng(3, 6).standard_normal(4), a)


def test_resource_guard(reference_pair, coherent_start):
    with pytest.raises(ResourceError):
        run_ensemble(reference_pair, coherent_start, dt=0.5, t_max=10.0, K=1000, store_paths=True,
                     memory_budget=1000)
    run_ensemble(reference_pair, coherent_start, dt=0.5, t_max=10.0, K=1000, memory_budget=1000)


def test_input_errors(reference_pair, coherent_start):
    with pytest.raises(SpecificationError):
        run_ensemble(reference_pair, coherent_start, dt=0.3, t_max=1.0, K=10)
    with pytest.raises(SpecificationError):
        run_ensemble(reference_pair, coherent_start, K=0)
    with pytest.raises(SpecificationError):
        run_ensemble(reference_pair, coherent_start, scheme="rk4")


def test_stationary_ensemble(reference_pair):
    s0 = GaussianState.thermal(2, 0.5)
    ens = run_ensemble(reference_pair, s0, dt=1.0, t_max=5.0, K=20_000, base_seed=4)
    mean, se_re, se_im = ens.moment_estimates()
    target = s0.flat()
    for k in range(len(ens.times)):
        assert _within(mean[k].real, se_re[k], target.real)
        assert _within(mean[k].imag, se_im[k], target.imag)


def test_wick_fourth_moment():
    spec = single(gamma=0.2, n_th=1.5)
    ens = run_ensemble(spec, GaussianState.thermal(1, 1.5), dt=2.0, t_max=4.0, K=40_000, base_seed=8,
                       store_paths=True)
    x = ens.samples[:, -1, 0]
    n2 = np.abs(x) ** 2
    lhs = np.mean(n2 ** 2)
    rhs = 2 * np.mean(n2) ** 2 + abs(np.mean(x * x)) ** 2
    se = np.std(n2 ** 2, ddof=1) / np.sqrt(x.size)
    assert abs(lhs - rhs) <= 6 * se


def test_exact_ou_is_dt_invariant(reference_pair, coherent_start):
    a = run_ensemble(reference_pair, coherent_start, dt=1.0, t_max=4.0, K=20_000, base_seed=21)
    b = run_ensemble(reference_pair, coherent_start, dt=0.5, t_max=4.0, K=20_000, base_seed=22)
    ma, ra, ia = a.moment_estimates()
    mb, rb, ib = b.moment_estimates()
    i, j = a.time_index(4.0), b.time_index(4.0)
    assert _within(ma[i].real - mb[j].real, np.hypot(ra[i], rb[j]), 0.0)
    assert _within(ma[i].imag - mb[j].imag, np.hypot(ia[i], ib[j]), 0.0)


def test_moments_match_analytic_overlapping(reference_pair, coherent_start):
    ens = run_ensemble(reference_pair, coherent_start, dt=0.5, t_max=5.0, K=10_000, base_seed=42)
    M = derive_drift(reference_pair, build_damping_matrix(reference_pair))
    g = build_damping_matrix(reference_pair)
    mean, se_re, se_im = ens.moment_estimates()
    for k, t in enumerate(ens.times):
        target = evolve_state(coherent_start, M, g, 0.5, t).flat()
        assert _within(mean[k].real, se_re[k], target.real)
        assert _within(mean[k].imag, se_im[k], target.imag)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.integers(1, 40), st.integers(0, 2**31))
def test_accumulator_merge_is_associative(n1, n2, n3, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n1 + n2 + n3, 3)) + 1j * rng.standard_normal((n1 + n2 + n3, 3))
    parts = [MomentAccumulator.from_batch(p) for p in np.split(x, [n1, n1 + n2])]
    left = parts[0].merge(parts[1]).merge(parts[2])
    right = parts[0].merge(parts[1].merge(parts[2]))
    whole = MomentAccumulator.from_batch(x)
    for acc in (left, right):
        assert acc.count == whole.count
        np.testing.assert_allclose(acc.mean, whole.mean, atol=1e-12)
        np.testing.assert_allclose(acc.m2_re, whole.m2_re, rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(acc.m2_im, whole.m2_im, rtol=1e-10, atol=1e-10)


def test_moment_features_layout():
    a = np.array([[1 + 1j, 2.0]])
    f = moment_features(a)
    np.testing.assert_array_equal(f[0, :2], a[0])
    np.testing.assert_array_equal(f[0, 2:6].reshape(2, 2), np.outer(a[0].conj(), a[0]))
    np.testing.assert_array_equal(f[0, 6:].reshape(2, 2), np.outer(a[0], a[0]))


def test_csv_and_metadata(reference_pair, coherent_start):
    ens = run_ensemble(reference_pair, coherent_start, dt=0.5, t_max=1.0, K=10, base_seed=77)
    rows = list(csv.reader(io.StringIO(ens.to_csv())))
    assert rows[0][0] == "t[1/freq]"
    assert "stderr_re_m0[1]" in rows[0]
    assert len(rows) == 1 + 3
    meta = json.loads(ens.metadata_json())
    assert meta["base_seed"] == 77 and meta["n_trajectories"] == 10
    assert meta["spec_hash"] == reference_pair.spec_hash and meta["scheme"] == "exact-ou"
