"""Fermion-mediated interaction kernels.

The kernel is the second-order particle-hole sum

    F(a, b) = -sum_{n occ, m unocc} psi_n(a) psi_m(a) psi_n(b) psi_m(b) / (eps_m - eps_n)

with the coupling prefactor G set to one. A bare truncated sum over M
virtual states converges slowly (roughly as M^{-1/2}), so by default the
states above the explicit window are summed exactly through a reduced
resolvent: in 1D by solving tridiagonal systems (H - eps_n) X = Q delta,
in 2D through the closed-form imaginary-time propagator of the oscillator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack

from . import _backend
from .errors import (CutoffTooSmall, DegenerateDenominator, DomainError, FitFailure,
                     InsufficientBasis, InsufficientVirtualStates)
from .spectra import (GridSpec, SpectralBasis, TrapSpec1D, TrapSpec2D,
                      build_1d_hamiltonian, build_2d_basis, fermi_level,
                      hermite_functions, solve_eigenbasis)

DEGENERATE_TOL = 1e-12
OPEN_SHELL_POLICIES = ("raise", "exclude")


@dataclass(frozen=True)
class RadialKernel:
    """Kernel F(r) on distances stored as k_F r.

    ``residual`` is the translation-invariance residual when it was
    measured (1D pipeline), else ``None``.
    """

    r_values: np.ndarray
    f_values: np.ndarray
    k_f: float
    meta: dict = field(default_factory=dict)
    residual: float | None = None

    def __post_init__(self):
        r = np.asarray(self.r_values, dtype=float)
        if r.ndim != 1 or r.size != np.asarray(self.f_values).size:
            raise DomainError("r_values and f_values must be 1D of equal length")
        if r.size and (r[0] != 0.0 or np.any(np.diff(r) <= 0)):
            raise DomainError("r_values must start at 0 and increase strictly")


@dataclass(frozen=True)
class DecayFit:
    ell: float
    amplitude: float
    residual: float


@dataclass(frozen=True)
class SpectrumSamples:
    k_values: np.ndarray
    amplitudes: np.ndarray

    def peaks(self, count: int | None = None):
        """Local maxima of |amplitude|, largest first, as (k, amplitude) pairs."""
        a = np.abs(self.amplitudes)
        idx = [i for i in range(1, len(a) - 1) if a[i] > a[i - 1] and a[i] >= a[i + 1]]
        if len(a) > 1 and a[-1] > a[-2]:
            idx.append(len(a) - 1)
        idx.sort(key=lambda i: (-a[i], i))
        if count is not None:
            idx = idx[:count]
        return [(float(self.k_values[i]), float(self.amplitudes[i])) for i in idx]


def _check_policy(open_shell):
    if open_shell not in OPEN_SHELL_POLICIES:
        raise DomainError(f"open_shell must be one of {OPEN_SHELL_POLICIES}")


class MediatedKernel1D:
    """Lazily evaluated 1D kernel F(xi_a, xi_b) on the grid of a basis.

    Point pairs are given as indices into ``basis.grid.points``. Evaluation
    is exactly symmetric: each pair is computed in a canonical order.

    Parameters
    ----------
    basis : SpectralBasis
        1D basis carrying its finite-difference operator; must hold at least
        ``n_fermions + n_virtual`` states.
    n_fermions : int
    n_virtual : int
        Explicit virtual states M (default 4N).
    closure : bool
        Add the exact contribution of all states above the explicit window.
        With ``False`` the bare truncated sum is returned.
    open_shell : {"raise", "exclude"}
        Action on a denominator below the degeneracy tolerance.
    degenerate_tol : float, optional
        Denominator below which a particle-hole pair counts as degenerate
        (default ``DEGENERATE_TOL * max(1, eps_F)``). Raising it treats
        tunnelling-split doublets at eps_F as an open shell.
    """

    def __init__(self, basis: SpectralBasis, n_fermions: int, n_virtual: int | None = None,
                 closure: bool = True, open_shell: str = "raise",
                 degenerate_tol: float | None = None):
        _check_policy(open_shell)
        if degenerate_tol is not None and not degenerate_tol >= 0:
            raise DomainError("degenerate_tol must be >= 0")
        if basis.is_2d or basis.wavefunctions is None:
            raise DomainError("a sampled 1D basis is required")
        if n_fermions < 0:
            raise DomainError("n_fermions must be >= 0")
        if n_virtual is None:
            n_virtual = 4 * n_fermions
        if n_fermions > 0 and n_virtual < 1:
            raise InsufficientVirtualStates("at least one explicit virtual state is required")
        if basis.n_states < n_fermions + n_virtual:
            raise InsufficientVirtualStates(
                f"basis holds {basis.n_states} states; need N + M = {n_fermions + n_virtual}")
        if closure and basis.operator is None:
            raise DomainError("closure needs the basis operator")
        self.basis = basis
        self.grid = basis.grid
        self.n_fermions = int(n_fermions)
        self.n_virtual = int(n_virtual)
        self.closure = bool(closure)
        self.open_shell = open_shell
        self.degenerate_tol = degenerate_tol
        self.n_excluded = 0

    def evaluate(self, ia, ib) -> np.ndarray:
        """F at the grid-index pairs (ia[k], ib[k])."""
        ia = np.asarray(ia, dtype=np.int64).ravel()
        ib = np.asarray(ib, dtype=np.int64).ravel()
        if ia.shape != ib.shape:
            raise DomainError("index arrays differ in length")
        if self.n_fermions == 0 or ia.size == 0:
            return np.zeros(ia.size)
        lo = np.minimum(ia, ib)
        hi = np.maximum(ia, ib)
        return self._explicit(lo, hi) + (self._remainder(lo, hi) if self.closure else 0.0)

    def matrix(self, indices) -> np.ndarray:
        """Dense block F[indices, indices]."""
        idx = np.asarray(indices, dtype=np.int64)
        i, j = np.triu_indices(idx.size)
        vals = self.evaluate(idx[i], idx[j])
        out = np.empty((idx.size, idx.size))
        out[i, j] = vals
        out[j, i] = vals
        return out

    def _explicit(self, lo, hi):
        N, M = self.n_fermions, self.n_virtual
        psi = self.basis.wavefunctions
        e = self.basis.energies
        pocc = np.ascontiguousarray((psi[:N, lo] * psi[:N, hi]).T)
        pvir = np.ascontiguousarray((psi[N:N + M, lo] * psi[N:N + M, hi]).T)
        tol = self.degenerate_tol
        if tol is None:
            tol = DEGENERATE_TOL * max(1.0, abs(e[N - 1]))
        f, n_deg = _backend.pair_sum(pocc, pvir, np.ascontiguousarray(e[:N]),
                                     np.ascontiguousarray(e[N:N + M]), tol,
                                     self.open_shell == "exclude")
        if n_deg and self.open_shell == "raise":
            raise DegenerateDenominator(
                f"{n_deg} particle-hole pair(s) with eps_m - eps_n < {tol:.3g} (open shell)")
        self.n_excluded = int(n_deg)
        return np.asarray(f)

    def _remainder(self, lo, hi, chunk=256):
        """Exact sum over all states above the explicit window."""
        op = self.basis.operator
        N, K = self.n_fermions, self.n_fermions + self.n_virtual
        h = self.grid.step
        P = self.grid.n_points
        wall = (lo == 0) | (hi == P - 1) | (lo == P - 1) | (hi == 0)
        # interior index = full index - 1
        u = self.basis.wavefunctions[:K, 1:-1].T * math.sqrt(h)  # unit l2 columns
        e = self.basis.energies
        psi = self.basis.wavefunctions
        srcs, inv = np.unique(lo, return_inverse=True)
        out = np.zeros(lo.size)
        proj_tol = 1e-4 * max(1.0, abs(e[K - 1]))
        for s0 in range(0, srcs.size, chunk):
            sel = slice(s0, min(s0 + chunk, srcs.size))
            cols = srcs[sel] - 1
            ok = (cols >= 0) & (cols < P - 2)
            rhs = -u @ u[np.clip(cols, 0, P - 3)].T
            rhs[np.clip(cols, 0, P - 3), np.arange(cols.size)] += 1.0
            rhs[:, ~ok] = 0.0
            rhs = np.asfortranarray(rhs)
            mask = (inv >= s0) & (inv < sel.stop)
            rows_b = hi[mask] - 1
            col_k = inv[mask] - s0
            acc = np.zeros(mask.sum())
            for n in range(N):
                x = _gtsv(op.offdiag, op.diag - e[n], rhs)
                near = np.nonzero(np.abs(e[:K] - e[n]) < proj_tol)[0]
                if near.size:
                    x -= u[:, near] @ (u[:, near].T @ x)
                vals = x[np.clip(rows_b, 0, P - 3), col_k]
                acc += psi[n, lo[mask]] * psi[n, hi[mask]] * vals
            out[mask] = -acc / h
        out[wall] = 0.0
        return out


def _gtsv(off, diag, rhs):
    b = rhs.copy(order="F")
    _, _, _, x, info = lapack.dgtsv(off.copy(), diag.copy(), off.copy(), b,
                                    overwrite_b=True)
    if info != 0:
        # exactly singular pivot; fall back on a tiny shift
        _, _, _, x, info = lapack.dgtsv(off.copy(), diag + 1e-13 * np.abs(diag).max(),
                                        off.copy(), np.array(rhs, order="F", copy=True))
    return x


def mediated_kernel_1d(basis: SpectralBasis, n_fermions: int, n_virtual: int | None = None,
                       closure: bool = True, open_shell: str = "raise",
                       degenerate_tol: float | None = None) -> MediatedKernel1D:
    """Second-order mediated kernel of a 1D basis (see ``MediatedKernel1D``)."""
    return MediatedKernel1D(basis, n_fermions, n_virtual, closure, open_shell, degenerate_tol)


def _centered_pairs(c, m):
    """Index pairs straddling centre c at separation m grid steps."""
    m = np.asarray(m)
    return c - m // 2, c + (m - m // 2)


def radial_profile(kernel, k_f: float, kfr_max: float = 45.0,
                   offsets=(1.0, 2.5, 5.0), residual_kfr_max: float = 10.0,
                   grid: GridSpec | None = None, placement: str = "centered") -> RadialKernel:
    """Sample F along r and measure translation invariance.

    ``kernel`` is a ``MediatedKernel1D`` or a dense (P, P) array on ``grid``.
    Separations are integer multiples m of the grid step.

    ``placement="centered"`` samples F(-r/2, r/2); odd m cannot be centred
    exactly, so they average the two pairs offset by +-h/2.
    ``placement="anchored"`` samples F(0, r). In a trap with a band gap the
    centred pair moves both points outward together and picks up the
    states at the band edge; the anchored pair keeps one point in the
    insulating core.

    The residual is max over the offsets delta (rounded to the grid) of
    |F(pair + delta) - F(pair)| / max|F| for k_F r <= ``residual_kfr_max``.
    """
    if placement not in ("centered", "anchored"):
        raise DomainError("placement must be 'centered' or 'anchored'")
    if isinstance(kernel, np.ndarray):
        if grid is None:
            raise DomainError("grid is required with a dense kernel")
        dense = kernel
        evaluate = lambda a, b: dense[a, b]  # noqa: E731
    else:
        grid = kernel.grid
        evaluate = kernel.evaluate
    P = grid.n_points
    h = grid.step
    c = (P - 1) // 2
    m_max = int(math.floor(kfr_max / (k_f * h) + 1e-9))
    if placement == "centered":
        m_max = min(m_max, 2 * c - 2)
        pairs = _centered_pairs
    else:
        m_max = min(m_max, P - 2 - c)
        pairs = lambda c0, mm: (np.full(np.shape(mm), c0), c0 + np.asarray(mm))  # noqa: E731
    m = np.arange(m_max + 1)
    a1, b1 = pairs(c, m)
    if placement == "centered":
        odd = m % 2 == 1
    else:
        odd = np.zeros(m.size, dtype=bool)
    a2, b2 = a1 - odd, b1 - odd
    ia = [a1, a2[odd]]
    ib = [b1, b2[odd]]
    shifts = []
    if offsets:
        m_res = m[(~odd) & (m * h * k_f <= residual_kfr_max)]
        for d in offsets:
            s = int(round(d / h))
            ar, br = pairs(c, m_res)
            if s == 0 or br.max() + s > P - 2 or ar.min() + s < 1:
                continue
            shifts.append((s, m_res))
            ia.append(ar + s)
            ib.append(br + s)
    vals = evaluate(np.concatenate(ia), np.concatenate(ib))
    f = vals[:m.size].copy()
    pos = m.size
    n_odd = int(odd.sum())
    f[odd] = 0.5 * (f[odd] + vals[pos:pos + n_odd])
    pos += n_odd
    residual = None
    scale = np.max(np.abs(f)) if f.size else 0.0
    for s, m_res in shifts:
        shifted = vals[pos:pos + m_res.size]
        pos += m_res.size
        dev = np.max(np.abs(shifted - f[m_res])) / scale if scale > 0 else 0.0
        residual = dev if residual is None else max(residual, dev)
    meta = {"grid_step": h, "n_points": P, "placement": placement}
    if hasattr(kernel, "n_fermions"):
        meta.update(n_fermions=kernel.n_fermions, n_virtual=kernel.n_virtual,
                    closure=kernel.closure)
    return RadialKernel(m * h * k_f, f, float(k_f), meta, residual)


def asymptotic_f1d(kfr):
    """-(1/x)[cos 2x + sin 2x / (2x)], the large-distance 1D form."""
    x = np.asarray(kfr, dtype=float)
    if np.any(x <= 0):
        raise DomainError("kfr must be > 0")
    v = -(np.cos(2 * x) + np.sin(2 * x) / (2 * x)) / x
    return float(v) if v.ndim == 0 else v


def asymptotic_f2d(kfr):
    """-(1/x^2)[sin 2x - cos 2x / (4x)], the large-distance 2D form."""
    x = np.asarray(kfr, dtype=float)
    if np.any(x <= 0):
        raise DomainError("kfr must be > 0")
    v = -(np.sin(2 * x) - np.cos(2 * x) / (4 * x)) / (x * x)
    return float(v) if v.ndim == 0 else v


def _envelope(kfr, dim):
    x = np.asarray(kfr, dtype=float)
    if dim == 1:
        return np.sqrt(1.0 + 1.0 / (4 * x * x)) / x
    return np.sqrt(1.0 + 1.0 / (16 * x * x)) / (x * x)


def _extrema(r, f, sign=1.0):
    g = sign * np.asarray(f)
    out = []
    for i in range(1, len(g) - 1):
        if g[i] > g[i - 1] and g[i] > g[i + 1]:
            denom = g[i - 1] - 2 * g[i] + g[i + 1]
            t = 0.5 * (g[i - 1] - g[i + 1]) / denom if denom != 0 else 0.0
            dr = r[i + 1] - r[i]
            x = r[i] + t * dr
            val = g[i] - 0.25 * (g[i - 1] - g[i + 1]) * t
            out.append((float(x), float(sign * val)))
    return out


def extract_maxima(radial: RadialKernel):
    """Strict local maxima of F(r), quadratically refined; r = 0 excluded."""
    if len(radial.r_values) < 3:
        raise DomainError("need at least 3 samples")
    return _extrema(np.asarray(radial.r_values), np.asarray(radial.f_values), 1.0)


def extract_extrema(radial: RadialKernel):
    """Maxima and minima of F(r) merged by position."""
    r, f = np.asarray(radial.r_values), np.asarray(radial.f_values)
    return sorted(_extrema(r, f, 1.0) + _extrema(r, f, -1.0))


def envelope_error(radial: RadialKernel, dim: int, kfr_min: float, kfr_max: float):
    """Relative mismatch of the oscillation envelope against the asymptotic form.

    The extrema of F in the window are compared with the envelope of the
    asymptotic shape, sqrt(1 + 1/(4x^2))/x in 1D and sqrt(1 + 1/(16x^2))/x^2
    in 2D. One global scale (the geometric mean of the ratios) is allowed.

    Returns
    -------
    error : float
        max_i |ratio_i / scale - 1|.
    scale : float
    n_extrema : int
    """
    ext = [(x, v) for x, v in extract_extrema(radial) if kfr_min < x < kfr_max]
    if len(ext) < 2:
        raise FitFailure("fewer than two extrema in the window")
    x = np.array([p[0] for p in ext])
    v = np.abs([p[1] for p in ext])
    ratio = v / _envelope(x, dim)
    scale = float(np.exp(np.mean(np.log(ratio))))
    return float(np.max(np.abs(ratio / scale - 1.0))), scale, len(ext)


def fit_yukawa(maxima, k_f: float) -> DecayFit:
    """Fit |F_i| = A exp(-k_F r_i / (pi ell)) / r_i at the given maxima.

    ``maxima`` are (k_F r, F) pairs; r_i = (k_F r_i) / k_F in x_zp. A
    non-decaying envelope gives ``ell = inf``. The residual is the RMS of
    the log-envelope misfit (a relative error).
    """
    pts = [(x, v) for x, v in maxima if v != 0]
    if len(pts) < 3:
        raise FitFailure("at least 3 nonzero maxima are required")
    x = np.array([p[0] for p in pts])
    if x.max() - x.min() < 2 * math.pi:
        raise FitFailure("maxima span fewer than two oscillations")
    y = np.log(np.abs([p[1] for p in pts])) + np.log(x / k_f)
    A = np.vstack([np.ones_like(x), x]).T
    (c0, c1), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (c0 + c1 * x)
    ell = -1.0 / (math.pi * c1) if c1 < 0 else math.inf
    return DecayFit(float(ell), float(math.exp(c0)), float(np.sqrt(np.mean(resid ** 2))))


# --- 2D -------------------------------------------------------------------

def _log_sinh(t):
    t = np.asarray(t, dtype=float)
    return t + np.log1p(-np.exp(-2 * t)) - math.log(2.0)


def _log_mehler_x(xa, xb, tau):
    """log of the propagator exp(-tau H) of -d^2 + xi^2/4 between xa and xb."""
    ya, yb = xa / math.sqrt(2.0), xb / math.sqrt(2.0)
    ls = _log_sinh(tau)
    coth = 1.0 / np.tanh(tau)
    csch = np.exp(-ls)
    return (-0.5 * (math.log(2 * math.pi) + ls)
            - 0.5 * ((ya * ya + yb * yb) * coth - 2 * ya * yb * csch)
            - 0.5 * math.log(2.0))


def _log_mehler_z00(a, tau):
    """log of the transverse propagator at z = z' = 0 for frequency ratio a."""
    return 0.5 * math.log(a / 2.0) - 0.5 * math.log(2 * math.pi) - 0.5 * _log_sinh(a * tau)


def mediated_kernel_2d(basis2d: SpectralBasis, n_fermions: int, kfr, k_f: float | None = None,
                       closure: bool = True, open_shell: str = "raise",
                       n_quad: int = 96, depth: float = 15.0,
                       placement: str = "centered") -> RadialKernel:
    """Kernel between two points a distance r apart on the weak axis.

    Parameters
    ----------
    basis2d : SpectralBasis
        From ``build_2d_basis``; its cutoff sets the explicit window.
    n_fermions : int
    kfr : array
        Ascending k_F r values starting at 0.
    k_f : float, optional
        Defaults to ``fermi_level(basis2d, n_fermions).k_f``.
    closure : bool
        With ``True`` (default) all states above the cutoff are included
        exactly; with ``False`` the bare sum over the basis is returned.
    open_shell : {"raise", "exclude"}
    n_quad, depth : quadrature order and imaginary-time depth (in units of
        1/(eps_F - eps_0)).
    placement : {"centered", "anchored"}
        ``"centered"`` puts the points at (-r/2, 0) and (r/2, 0);
        ``"anchored"`` at (0, 0) and (r, 0). In an isotropic trap every
        orbit through x refocuses at -x, so centred pairs pick up a
        refocusing contribution on top of the homogeneous-gas form.

    Notes
    -----
    Write Delta = eps_m - eps_n. For each occupied n the sum over
    Delta > 0 follows from the propagator identity

        sum_m psi psi (1 - exp(-Delta tau1)) / Delta = int_0^tau1 exp(eps_n tau) K(tau) dtau

    after removing the Delta <= 0 terms and restoring
    sum_{eps_m <= cutoff} psi psi exp(-Delta tau1) / Delta; states above the
    cutoff enter only through exp(-Delta tau1) and are dropped. The 2D
    propagator diverges logarithmically at coincident points, so the r = 0
    sample integrates from tau = 1/cutoff instead of zero.
    """
    _check_policy(open_shell)
    if not basis2d.is_2d:
        raise DomainError("a 2D basis is required")
    kfr = np.asarray(kfr, dtype=float)
    if kfr.ndim != 1 or kfr.size == 0 or kfr[0] != 0 or np.any(np.diff(kfr) <= 0):
        raise DomainError("kfr must be ascending and start at 0")
    a = basis2d.anisotropy
    if n_fermions == 0:
        return RadialKernel(kfr, np.zeros(kfr.size), float(k_f or 1.0),
                            {"n_fermions": 0, "anisotropy": a})
    if basis2d.n_states <= n_fermions:
        raise InsufficientBasis("basis must hold more than n_fermions states")
    lev = fermi_level(basis2d, n_fermions)
    if k_f is None:
        k_f = lev.k_f
    labels = basis2d.quantum_labels
    keep = labels[:, 1] % 2 == 0
    occ_all = np.arange(basis2d.n_states) < n_fermions
    eps = basis2d.energies[keep]
    occ = occ_all[keep]
    nx = labels[keep, 0]
    nz = labels[keep, 1]
    r = kfr / k_f
    if placement == "centered":
        xa, xb = -r / 2.0, r / 2.0
    elif placement == "anchored":
        xa, xb = np.zeros_like(r), r
    else:
        raise DomainError("placement must be 'centered' or 'anchored'")
    ha = hermite_functions(int(nx.max()), xa)
    hb = hermite_functions(int(nx.max()), xb)
    chi = a ** 0.25 * hermite_functions(int(nz.max()), np.array([0.0]))[:, 0]
    pab = ha[nx] * hb[nx] * (chi[nz] ** 2)[:, None]
    e_f = float(basis2d.energies[n_fermions - 1])
    tol = DEGENERATE_TOL * max(1.0, abs(e_f))
    e_cut = float(basis2d.energies[-1])
    unocc = ~occ
    n_deg = 0
    for n in np.nonzero(occ)[0]:
        n_deg += int(np.sum(np.abs(eps[unocc] - eps[n]) < tol))
    if n_deg and open_shell == "raise":
        raise DegenerateDenominator(
            f"{n_deg} particle-hole pair(s) with vanishing denominator (open shell)")
    meta = {"n_fermions": n_fermions, "anisotropy": a, "e_cut": e_cut,
            "closure": closure, "n_excluded": n_deg, "placement": placement}
    F = np.zeros(r.size)
    if not closure:
        for n in np.nonzero(occ)[0]:
            up = unocc & (eps - eps[n] >= tol)
            F -= pab[n] * ((1.0 / (eps[up] - eps[n])) @ pab[up])
        return RadialKernel(kfr, F, float(k_f), meta)
    e0 = float(basis2d.energies[0])
    tau1 = depth / (e_f - e0) if e_f > e0 else depth
    tail = (e_cut - e_f) * tau1
    if tail < 30.0:
        raise InsufficientVirtualStates(
            f"cutoff {e_cut:.6g} too low: tail exponent {tail:.3g} < 30")
    meta.update(tau1=tau1, tail_exponent=tail)
    xg, wg = np.polynomial.legendre.leggauss(n_quad)
    lo = np.where(r > 0, np.log(np.maximum(r * r / 240.0, 1e-300)), math.log(1.0 / e_cut))
    lo = np.minimum(lo, math.log(tau1) - 1.0)
    hi = math.log(tau1)
    u = (hi - lo)[:, None] / 2 * xg[None, :] + (hi + lo)[:, None] / 2
    wq = (hi - lo)[:, None] / 2 * wg[None, :]
    tau = np.exp(u)
    log_k = _log_mehler_x(xa[:, None], xb[:, None], tau) + _log_mehler_z00(a, tau)
    for n in np.nonzero(occ)[0]:
        en = eps[n]
        integral = np.sum(np.exp(log_k + en * tau) * tau * wq, axis=1)
        d = eps - en
        below = d < tol
        dn = -d[below]
        fac = np.where(dn > tol, np.expm1(np.minimum(dn * tau1, 700.0)) / np.where(dn > tol, dn, 1.0),
                       tau1)
        integral -= fac @ pab[below]
        above = ~below
        integral += (np.exp(-d[above] * tau1) / d[above]) @ pab[above]
        occ_above = above & occ
        integral -= (1.0 / d[occ_above]) @ pab[occ_above]
        F -= pab[n] * integral
    return RadialKernel(kfr, F, float(k_f), meta)


def cosine_transform(radial: RadialKernel, r_min: float = 1.0, r_max: float | None = None,
                     n_k: int = 301, k_max: float = 3.0) -> SpectrumSamples:
    """Trapezoid cosine transform of F(r) on [r_min, r_max] (k_F units), unwindowed."""
    r = np.asarray(radial.r_values)
    f = np.asarray(radial.f_values)
    if r_max is None:
        r_max = float(r[-1])
    if not (r[0] <= r_min < r_max <= r[-1] + 1e-12):
        raise DomainError(f"bad window [{r_min}, {r_max}] for samples on [{r[0]}, {r[-1]}]")
    if n_k < 300:
        raise DomainError("at least 300 k points are required")
    w = (r >= r_min - 1e-12) & (r <= r_max + 1e-12)
    rw, fw = r[w], f[w]
    k = np.linspace(0.0, k_max, n_k)
    amp = np.trapezoid(fw[None, :] * np.cos(k[:, None] * rw[None, :]), rw, axis=1)
    return SpectrumSamples(k, amp)


def predicted_beat_frequencies(k_f: float, anisotropy: float, n_fermions: int, n_max: int):
    """k_n = 2 k_F (1 - n anisotropy / N) for n = 0..n_max, positive values only."""
    if n_max < 0:
        raise DomainError("n_max must be >= 0")
    out = []
    for n in range(n_max + 1):
        k = 2.0 * k_f * (1.0 - n * anisotropy / n_fermions)
        if k > 0:
            out.append(k)
    return out


# --- pipelines --------------------------------------------------------------

def harmonic_k_f(n_fermions: int) -> float:
    """k_F x_zp of N fermions in the bare harmonic trap."""
    return math.sqrt(n_fermions - 0.5)


def kernel_1d(trap: TrapSpec1D, n_virtual: int | None = None, kfr_max: float = 45.0,
              points_per_wavelength: int = 12, k_ref: str = "harmonic",
              closure: bool = True, open_shell: str = "raise", offsets=(1.0, 2.5, 5.0),
              grid: GridSpec | None = None, degenerate_tol: float | None = None,
              placement: str = "anchored"):
    """Full 1D pipeline: grid, eigenbasis, kernel and radial profile.

    ``k_ref`` selects the k_F used for the distance axis: ``"harmonic"``
    (sqrt(N - 1/2), common to every vp_ratio) or ``"fermi"`` (from the
    computed Fermi level). ``placement`` is passed to ``radial_profile``;
    see ``kernel_2d`` for the default.

    Returns
    -------
    radial : RadialKernel
    basis : SpectralBasis
    """
    N = trap.n_fermions
    M = 4 * N if n_virtual is None else n_virtual
    n_states = N + M
    if grid is None:
        grid = GridSpec.default(trap, n_states, points_per_wavelength)
    op = build_1d_hamiltonian(trap, grid)
    basis = solve_eigenbasis(op, n_states)
    lev = fermi_level(basis, N)
    if k_ref == "harmonic":
        k_f = harmonic_k_f(N)
    elif k_ref == "fermi":
        k_f = lev.k_f
    else:
        raise DomainError("k_ref must be 'harmonic' or 'fermi'")
    ker = mediated_kernel_1d(basis, N, M, closure, open_shell, degenerate_tol)
    radial = radial_profile(ker, k_f, kfr_max, offsets, placement=placement)
    radial.meta.update(vp_ratio=trap.vp_ratio, kp_xzp=trap.kp_xzp, e_fermi=lev.energy,
                       open_shell=lev.open_shell, n_excluded=ker.n_excluded, k_ref=k_ref)
    return radial, basis


def kernel_2d(trap: TrapSpec2D, kfr, e_max_factor: float = 3.0, closure: bool = True,
              open_shell: str = "raise", n_quad: int = 96, placement: str = "anchored"):
    """2D pipeline: basis with cutoff ``e_max_factor * eps_F`` and the kernel.

    The pipelines default to ``placement="anchored"``: with one point at the
    trap centre the profile follows the homogeneous-gas forms, while the
    centred pair also sees refocusing (2D) and band-edge states (1D with a
    lattice).
    """
    N = trap.n_fermions
    a = trap.anisotropy
    # smallest cutoff holding N states, then the excitation window
    e_probe = 0.5 + 0.5 * a + 1.0
    while True:
        try:
            probe = build_2d_basis(trap, e_probe)
            if probe.n_states > N:
                break
        except CutoffTooSmall:
            pass
        e_probe *= 1.5
    e_f = float(probe.energies[N - 1])
    basis = build_2d_basis(trap, e_max_factor * e_f)
    return mediated_kernel_2d(basis, N, kfr, closure=closure, open_shell=open_shell,
                              n_quad=n_quad, placement=placement)
