import math

import numpy as np
import pytest

from rkkytune import kernel as K
from rkkytune import spectra
from rkkytune.errors import DegenerateDenominator, DomainError, FitFailure, InsufficientVirtualStates

IDX = np.array([100, 150, 179, 180, 181, 200, 250, 300])


def _dense_kernel(basis, N, idx):
    """Full particle-hole sum over every eigenpair of the discretised operator."""
    op = basis.operator
    e, v = np.linalg.eigh(op.to_sparse().toarray())
    h = basis.grid.step
    psi = np.zeros((e.size, basis.grid.n_points))
    psi[:, 1:-1] = v.T / math.sqrt(h)
    P = psi[:, idx]
    F = np.zeros((idx.size, idx.size))
    for n in range(N):
        w = P[n] * P[N:]
        F -= (w.T / (e[N:] - e[n])) @ w
    return F


def test_closure_equals_full_sum(small_basis):
    F = _dense_kernel(small_basis, 6, IDX)
    G = K.mediated_kernel_1d(small_basis, 6).matrix(IDX)
    assert np.max(np.abs(G - F)) < 1e-10 * np.max(np.abs(F))


def test_closure_independent_of_window(small_basis):
    a = K.mediated_kernel_1d(small_basis, 6, 8).matrix(IDX)
    b = K.mediated_kernel_1d(small_basis, 6, 24).matrix(IDX)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-10 * np.max(np.abs(b)))


def test_bare_sum_is_truncated(small_basis):
    F = _dense_kernel(small_basis, 6, IDX)
    bare = K.mediated_kernel_1d(small_basis, 6, closure=False).matrix(IDX)
    assert np.max(np.abs(bare - F)) > 1e-3 * np.max(np.abs(F))


def test_kernel_symmetric_and_empty(small_basis):
    ker = K.mediated_kernel_1d(small_basis, 6)
    a, b = IDX[:5], IDX[3:]
    np.testing.assert_array_equal(ker.evaluate(a, b), ker.evaluate(b, a))
    np.testing.assert_array_equal(K.mediated_kernel_1d(small_basis, 0).evaluate(a, b), 0.0)
    with pytest.raises(DomainError):
        ker.evaluate([1, 2], [3])


def test_contact_value_attractive(small_basis):
    c = (small_basis.grid.n_points - 1) // 2
    assert K.mediated_kernel_1d(small_basis, 6).evaluate([c], [c])[0] < 0


def test_radial_profile_from_dense(small_basis):
    P = small_basis.grid.n_points
    dense = K.mediated_kernel_1d(small_basis, 6).matrix(np.arange(P))
    k_f = math.sqrt(5.5)
    rad = K.radial_profile(dense, k_f, 10.0, grid=small_basis.grid)
    c = (P - 1) // 2
    assert rad.r_values[0] == 0.0
    assert rad.f_values[0] == dense[c, c]
    assert rad.f_values[2] == dense[c - 1, c + 1]
    assert rad.f_values[1] == pytest.approx(0.5 * (dense[c, c + 1] + dense[c - 1, c]))
    mirrored = dense[::-1, ::-1]
    rad2 = K.radial_profile(mirrored, k_f, 10.0, grid=small_basis.grid)
    np.testing.assert_allclose(rad2.f_values, rad.f_values, rtol=1e-14, atol=0)
    ker_rad = K.radial_profile(K.mediated_kernel_1d(small_basis, 6), k_f, 10.0)
    np.testing.assert_allclose(ker_rad.f_values, rad.f_values, rtol=1e-12)
    assert ker_rad.residual is not None


def test_asymptotic_forms():
    assert K.asymptotic_f1d(math.pi / 2) == pytest.approx(2 / math.pi, rel=1e-12)
    assert K.asymptotic_f2d(math.pi / 4) == pytest.approx(-16 / math.pi ** 2, rel=1e-12)
    x = np.array([100.0, 200.0, 400.0])
    env = np.abs(K.asymptotic_f1d(x * 0 + np.pi * np.array([100, 200, 400])))
    np.testing.assert_allclose(env * np.pi * np.array([100, 200, 400]), 1.0, rtol=1e-3)
    with pytest.raises(DomainError):
        K.asymptotic_f1d(0.0)
    with pytest.raises(DomainError):
        K.asymptotic_f2d(-1.0)


def _radial(x, f, k_f=1.0):
    return K.RadialKernel(np.asarray(x, float), np.asarray(f, float), k_f)


def test_extract_maxima_known_function():
    x = np.linspace(0, 20, 20001)
    m = K.extract_maxima(_radial(x, np.cos(2 * x)))
    pos = np.array([p[0] for p in m])
    np.testing.assert_allclose(pos, np.pi * np.arange(1, pos.size + 1), atol=1e-6)
    assert pos.size == 6
    assert K.extract_maxima(_radial(x, np.exp(-x))) == []


def test_fit_yukawa_recovers_length():
    x = np.linspace(0, 60, 60001)
    f = np.zeros_like(x)
    f[1:] = np.exp(-x[1:] / (math.pi * 2.0)) * np.cos(2 * x[1:]) / x[1:]
    m = [p for p in K.extract_maxima(_radial(x, f)) if p[0] > 2]
    fit = K.fit_yukawa(m, 1.0)
    assert fit.ell == pytest.approx(2.0, rel=0.01)
    flat = K.fit_yukawa([(p[0], 1 / p[0]) for p in m], 1.0)
    assert math.isinf(flat.ell)
    with pytest.raises(FitFailure):
        K.fit_yukawa(m[:2], 1.0)


def test_envelope_error_exact_shape():
    x = np.linspace(0, 30, 30001)
    f = np.zeros_like(x)
    f[1:] = 3.0 * K.asymptotic_f1d(x[1:])
    err, scale, n = K.envelope_error(_radial(x, f), 1, 2, 10)
    # the envelope ignores the slow amplitude drift between extrema
    assert err < 0.01 and scale == pytest.approx(3.0, rel=0.01) and n >= 4


def test_cosine_transform():
    x = np.linspace(0, 60, 12001)
    spec = K.cosine_transform(_radial(x, np.cos(2 * x)), 1.0)
    step = spec.k_values[1] - spec.k_values[0]
    assert abs(spec.peaks(1)[0][0] - 2.0) <= step
    zero = K.cosine_transform(_radial(x, 0 * x), 1.0)
    assert np.all(zero.amplitudes == 0)
    with pytest.raises(DomainError):
        K.cosine_transform(_radial(x, x), 1.0, n_k=100)


def test_beat_frequencies():
    assert K.predicted_beat_frequencies(1.0, 50, 250, 0) == [2.0]
    k = K.predicted_beat_frequencies(1.0, 50, 250, 1)
    assert k[1] == pytest.approx(1.6)


def test_2d_empty_and_validation():
    b = spectra.build_2d_basis(spectra.TrapSpec2D(6, 1.3), 12)
    r = K.mediated_kernel_2d(b, 0, np.linspace(0, 5, 11))
    assert np.all(r.f_values == 0)
    with pytest.raises(DomainError):
        K.mediated_kernel_2d(b, 6, np.linspace(1, 5, 11))
    with pytest.raises(InsufficientVirtualStates):
        K.mediated_kernel_2d(spectra.build_2d_basis(spectra.TrapSpec2D(6, 1.3), 5.0), 6,
                             np.linspace(0, 5, 11), open_shell="exclude")


@pytest.mark.filterwarnings("ignore::rkkytune.errors.OpenShellWarning")
def test_2d_open_shell_policy():
    b = spectra.build_2d_basis(spectra.TrapSpec2D(3, 0.5), 20)
    with pytest.raises(DegenerateDenominator):
        K.mediated_kernel_2d(b, 3, np.linspace(0, 5, 11))
    r = K.mediated_kernel_2d(b, 3, np.linspace(0, 5, 11), open_shell="exclude")
    assert r.meta["n_excluded"] > 0


def test_2d_closure_against_brute_force():
    t = spectra.TrapSpec2D(6, 1.3)
    kfr = np.linspace(0, 6, 61)
    closed = K.mediated_kernel_2d(spectra.build_2d_basis(t, 12), 6, kfr, open_shell="exclude")
    closed5 = K.mediated_kernel_2d(spectra.build_2d_basis(t, 40), 6, kfr, open_shell="exclude")
    w = kfr >= 2
    scale = np.max(np.abs(closed.f_values[w]))
    np.testing.assert_allclose(closed5.f_values[w], closed.f_values[w], atol=1e-8 * scale)
    brute = K.mediated_kernel_2d(spectra.build_2d_basis(t, 1600), 6, kfr, closure=False,
                                 open_shell="exclude")
    assert np.max(np.abs(brute.f_values[w] - closed.f_values[w])) < 0.01 * scale


def test_2d_reduces_to_1d():
    N = 30
    t = spectra.TrapSpec2D(N, 20.0 * N)
    rad1, _ = K.kernel_1d(spectra.TrapSpec1D(N), kfr_max=10, points_per_wavelength=24)
    rad2 = K.kernel_2d(t, rad1.r_values)
    f2 = rad2.f_values * 2 * math.pi / t.anisotropy
    w = (rad1.r_values > 2) & (rad1.r_values < 8)
    dev = np.max(np.abs(f2[w] - rad1.f_values[w])) / np.max(np.abs(rad1.f_values[w]))
    assert dev < 0.05


def test_pipeline_meta():
    rad, basis = K.kernel_1d(spectra.TrapSpec1D(20), kfr_max=15)
    assert rad.k_f == pytest.approx(K.harmonic_k_f(20))
    assert rad.meta["n_virtual"] == 80 and rad.meta["closure"]
    assert rad.f_values[0] < 0
    assert basis.n_states == 100


def test_1d_open_shell_policy(rng):
    grid = spectra.GridSpec(5.0, 11)
    basis = spectra.SpectralBasis(np.array([0.5, 1.5, 1.5, 2.5]), rng.standard_normal((4, 11)),
                                  grid, np.arange(4))
    with pytest.raises(DegenerateDenominator):
        K.mediated_kernel_1d(basis, 2, 2, closure=False).evaluate([3], [5])
    ker = K.mediated_kernel_1d(basis, 2, 2, closure=False, open_shell="exclude")
    ker.evaluate([3], [5])
    assert ker.n_excluded == 1
