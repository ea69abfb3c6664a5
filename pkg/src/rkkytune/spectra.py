"""Single-particle eigenproblems of the fermionic mediator.

Units throughout: hbar = omega_x = 1 and lengths in x_zp, so the 1D
Hamiltonian reads ``-d^2/dxi^2 + xi^2/4 + (vp_ratio/4) sin^2(kp_xzp xi)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, eigh_tridiagonal

from .errors import (BoxTooSmall, ConvergenceFailure, CutoffTooSmall,
                     DomainError, InsufficientBasis, OpenShellWarning)

# energies closer than this straddling the Fermi level mark an open shell
OPEN_SHELL_TOL = 1e-10


@dataclass(frozen=True)
class TrapSpec1D:
    """Harmonic trap plus optional periodic potential.

    Parameters
    ----------
    n_fermions : int
        Number of fermions N.
    vp_ratio : float
        Periodic-potential depth in units of V_h = hbar omega_x / 4.
    kp_xzp : float, optional
        Wavenumber of the periodic potential times x_zp. Defaults to sqrt(N).
    """

    n_fermions: int
    vp_ratio: float = 0.0
    kp_xzp: float | None = None

    def __post_init__(self):
        if int(self.n_fermions) != self.n_fermions or self.n_fermions < 1:
            raise DomainError(f"n_fermions must be a positive integer, got {self.n_fermions}")
        if not self.vp_ratio >= 0:
            raise DomainError(f"vp_ratio must be >= 0, got {self.vp_ratio}")
        if self.kp_xzp is None:
            object.__setattr__(self, "kp_xzp", math.sqrt(self.n_fermions))
        if not self.kp_xzp > 0:
            raise DomainError(f"kp_xzp must be > 0, got {self.kp_xzp}")
        object.__setattr__(self, "n_fermions", int(self.n_fermions))
        object.__setattr__(self, "vp_ratio", float(self.vp_ratio))
        object.__setattr__(self, "kp_xzp", float(self.kp_xzp))

    def potential(self, xi):
        xi = np.asarray(xi, dtype=float)
        return xi * xi / 4.0 + (self.vp_ratio / 4.0) * np.sin(self.kp_xzp * xi) ** 2


@dataclass(frozen=True)
class TrapSpec2D:
    """Anisotropic 2D harmonic trap; ``anisotropy`` is omega_z / omega_x."""

    n_fermions: int
    anisotropy: float = 1.0

    def __post_init__(self):
        if int(self.n_fermions) != self.n_fermions or self.n_fermions < 1:
            raise DomainError(f"n_fermions must be a positive integer, got {self.n_fermions}")
        if not self.anisotropy > 0:
            raise DomainError(f"anisotropy must be > 0, got {self.anisotropy}")
        object.__setattr__(self, "n_fermions", int(self.n_fermions))
        object.__setattr__(self, "anisotropy", float(self.anisotropy))


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on [-half_width, half_width] with hard walls at the ends."""

    half_width: float
    n_points: int

    def __post_init__(self):
        if not self.half_width > 0:
            raise DomainError("half_width must be > 0")
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise DomainError("n_points must be an integer >= 2")
        object.__setattr__(self, "n_points", int(self.n_points))

    @property
    def step(self) -> float:
        return 2.0 * self.half_width / (self.n_points - 1)

    @property
    def points(self) -> np.ndarray:
        # built from the centre out so the grid is exactly mirror symmetric
        j = np.arange(self.n_points) - (self.n_points - 1) / 2.0
        return j * self.step

    def refined(self, factor: int = 2) -> "GridSpec":
        """Same box with the step divided by ``factor``."""
        return GridSpec(self.half_width, factor * (self.n_points - 1) + 1)

    @classmethod
    def default(cls, trap: TrapSpec1D, n_states: int, points_per_wavelength: int = 12):
        """Grid resolving the highest retained state and the lattice period.

        The box extends to 1.5 times the classical turning point of the
        harmonic level ``n_states``; the step resolves the shortest local
        wavelength at the top of the spectrum and the period pi/kp_xzp by at
        least ``points_per_wavelength`` samples. ``n_points`` is always odd.
        """
        e_top = n_states + trap.vp_ratio / 4.0
        half_width = 1.5 * 2.0 * math.sqrt(n_states)
        h = min(2.0 * math.pi / math.sqrt(e_top), math.pi / trap.kp_xzp) / points_per_wavelength
        half = int(math.ceil(half_width / h))
        return cls(half_width, 2 * half + 1)


@dataclass(frozen=True)
class TridiagonalOperator:
    """Finite-difference Hamiltonian on the interior grid points.

    The end points of ``grid`` are the hard walls; the operator acts on the
    ``n_points - 2`` interior samples.
    """

    diag: np.ndarray
    offdiag: np.ndarray
    grid: GridSpec
    trap: TrapSpec1D

    @property
    def interior(self) -> np.ndarray:
        return self.grid.points[1:-1]

    def to_sparse(self):
        from scipy.sparse import diags
        return diags([self.offdiag, self.diag, self.offdiag], [-1, 0, 1], format="csr")

    def matvec(self, v):
        v = np.asarray(v, dtype=float)
        out = self.diag * v
        out[:-1] += self.offdiag * v[1:]
        out[1:] += self.offdiag * v[:-1]
        return out


@dataclass(frozen=True)
class SpectralBasis:
    """Ordered single-particle eigenpairs.

    Attributes
    ----------
    energies : ndarray
        Ascending energies in units of hbar omega_x.
    wavefunctions : ndarray or None
        Shape (n_states, n_points) grid samples. For 2D bases these are the
        values along the weak axis through the trap centre, psi(xi, 0), and
        may be omitted (``None``) for large cutoffs.
    grid : GridSpec or None
    quantum_labels : ndarray
        1D: state index n. 2D: rows of (n_x, n_z).
    anisotropy : float or None
        Set for 2D bases.
    """

    energies: np.ndarray
    wavefunctions: np.ndarray | None
    grid: GridSpec | None
    quantum_labels: np.ndarray
    anisotropy: float | None = None
    operator: TridiagonalOperator | None = field(default=None, repr=False, compare=False)

    @property
    def n_states(self) -> int:
        return len(self.energies)

    @property
    def is_2d(self) -> bool:
        return self.anisotropy is not None

    def transverse_zero(self) -> np.ndarray:
        """Transverse factor chi_{n_z}(0) of each 2D state."""
        if not self.is_2d:
            raise DomainError("transverse factor only exists for 2D bases")
        a = self.anisotropy
        nz = self.quantum_labels[:, 1]
        table = hermite_functions(int(nz.max()), np.array([0.0]))[:, 0]
        return a ** 0.25 * table[nz]


def build_1d_hamiltonian(trap: TrapSpec1D, grid: GridSpec) -> TridiagonalOperator:
    """Second-order central-difference Hamiltonian with hard walls."""
    h = grid.step
    xi = grid.points[1:-1]
    diag = 2.0 / h ** 2 + trap.potential(xi)
    off = np.full(len(xi) - 1, -1.0 / h ** 2)
    return TridiagonalOperator(diag, off, grid, trap)


def _tridiag_lowest(d, e, k, driver):
    try:
        return eigh_tridiagonal(d, e, select="i", select_range=(0, k - 1),
                                lapack_driver=driver, check_finite=False)
    except (LinAlgError, ValueError) as exc:
        raise ConvergenceFailure(f"tridiagonal eigensolver failed: {exc}") from exc


def _fix_sign(psi, rel=1e-8):
    """Flip columns so the first significant sample from the left is positive."""
    scale = np.abs(psi).max(axis=0)
    sig = np.abs(psi) > rel * scale
    first = np.argmax(sig, axis=0)
    s = np.sign(psi[first, np.arange(psi.shape[1])])
    s[s == 0] = 1.0
    return psi * s


def solve_eigenbasis(operator: TridiagonalOperator, n_states: int) -> SpectralBasis:
    """Lowest eigenpairs of a 1D operator.

    The potential is mirror symmetric, so for grids with an odd number of
    points the problem is split into even and odd halves, each solved with
    the MRRR driver. Wavefunctions are trapezoid-normalised on the full grid
    (zero at the walls) and signed so the first significant sample from the
    left is positive.

    Raises
    ------
    BoxTooSmall
        If the box does not exceed 1.5 times the turning point of the
        harmonic level ``n_states``.
    ConvergenceFailure
        If LAPACK reports failure.
    """
    grid = operator.grid
    n_int = len(operator.diag)
    if n_states < 1 or n_states > n_int:
        raise DomainError(f"n_states must be in [1, {n_int}], got {n_states}")
    turning = 2.0 * math.sqrt(n_states - 0.5)
    if not grid.half_width > 1.5 * turning:
        raise BoxTooSmall(
            f"half_width {grid.half_width:.6g} must exceed 1.5 x turning point {turning:.6g}")
    h = grid.step
    d, off = operator.diag, operator.offdiag
    P = grid.n_points
    if n_int % 2 == 1:
        c = n_int // 2
        k_even = min(n_int - c, (n_states + 1) // 2 + 1)
        k_odd = min(n_int - c - 1, n_states // 2 + 1)
        off_e = off[c:].copy()
        off_e[0] *= math.sqrt(2.0)
        ee, ve = _tridiag_lowest(d[c:], off_e, k_even, "stemr")
        if k_odd > 0:
            eo, vo = _tridiag_lowest(d[c + 1:], off[c + 1:], k_odd, "stemr")
        else:
            eo, vo = np.zeros(0), np.zeros((n_int - c - 1, 0))
        energies = np.concatenate([ee, eo])
        order = np.argsort(energies, kind="stable")[:n_states]
        psi = np.zeros((P, n_states))
        mid = c + 1  # index of xi = 0 on the full grid
        for j, i in enumerate(order):
            col = np.zeros(P)
            if i < k_even:
                u = ve[:, i]
                col[mid] = u[0]
                col[mid + 1:P - 1] = u[1:] / math.sqrt(2.0)
                col[1:mid] = col[mid + 1:P - 1][::-1]
            else:
                u = vo[:, i - k_even]
                col[mid + 1:P - 1] = u / math.sqrt(2.0)
                col[1:mid] = -col[mid + 1:P - 1][::-1]
            psi[:, j] = col
        energies = energies[order]
    else:
        energies, v = _tridiag_lowest(d, off, n_states, "stebz")
        psi = np.zeros((P, n_states))
        psi[1:-1] = v
    psi = _fix_sign(psi) / math.sqrt(h)
    return SpectralBasis(energies=np.ascontiguousarray(energies),
                         wavefunctions=np.ascontiguousarray(psi.T),
                         grid=grid,
                         quantum_labels=np.arange(n_states),
                         operator=operator)


_LOG_BIG = 300.0 * math.log(2.0)


def hermite_functions(n_max: int, xi) -> np.ndarray:
    """Table of the first ``n_max + 1`` oscillator eigenfunctions.

    Evaluates psi_n(xi) = 2^{-1/4} phi_n(xi / sqrt(2)) with phi_n the
    normalised Hermite functions, by the three-term recurrence
    phi_{n+1} = sqrt(2/(n+1)) y phi_n - sqrt(n/(n+1)) phi_{n-1}. The
    Gaussian factor is carried as a running log scale so neither underflow
    at large |xi| nor growth at large n can occur.

    Returns
    -------
    ndarray of shape (n_max + 1, len(xi))
    """
    if n_max < 0:
        raise DomainError("n_max must be >= 0")
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    y = xi / math.sqrt(2.0)
    out = np.empty((n_max + 1, y.size))
    log_scale = -0.5 * y * y
    prev = np.zeros_like(y)
    cur = np.full_like(y, math.pi ** -0.25)
    out[0] = cur * np.exp(log_scale)
    big = math.exp(_LOG_BIG)
    for n in range(n_max):
        nxt = math.sqrt(2.0 / (n + 1)) * y * cur - math.sqrt(n / (n + 1)) * prev
        prev, cur = cur, nxt
        over = np.abs(cur) > big
        if over.any():
            cur[over] /= big
            prev[over] /= big
            log_scale[over] += _LOG_BIG
        out[n + 1] = cur * np.exp(log_scale)
    return out * 2.0 ** -0.25


def harmonic_eigenfunction(n: int, xi):
    """Eigenfunction n of -d^2/dxi^2 + xi^2/4 at ``xi`` (scalar or array)."""
    if n < 0:
        raise DomainError("n must be >= 0")
    vals = hermite_functions(int(n), xi)[n]
    return float(vals[0]) if np.ndim(xi) == 0 else vals


def build_2d_basis(trap: TrapSpec2D, e_max: float, grid: GridSpec | None = None) -> SpectralBasis:
    """All product states with energy at most ``e_max``.

    States are psi_{n_x}(xi_x) a^{1/4} psi_{n_z}(sqrt(a) xi_z) with
    energy (n_x + 1/2) + a (n_z + 1/2), ordered by energy and then by
    (n_x, n_z). Energies within 1e-10 count as tied. When ``grid`` is given
    the wavefunctions are sampled along the weak axis at xi_z = 0.
    """
    a = trap.anisotropy
    nz_max = int(math.floor((e_max - 0.5) / a - 0.5 + 1e-12)) if e_max >= 0.5 + 0.5 * a else -1
    labels = []
    for nz in range(nz_max + 1):
        nx_max = int(math.floor(e_max - a * (nz + 0.5) - 0.5 + 1e-12))
        for nx in range(nx_max + 1):
            labels.append((nx, nz))
    if len(labels) < trap.n_fermions:
        raise CutoffTooSmall(
            f"only {len(labels)} states below e_max={e_max:.6g}; need {trap.n_fermions}")
    labels = np.array(labels, dtype=np.int64)
    energies = (labels[:, 0] + 0.5) + a * (labels[:, 1] + 0.5)
    key = np.round(energies / OPEN_SHELL_TOL) * OPEN_SHELL_TOL
    order = np.lexsort((labels[:, 1], labels[:, 0], key))
    labels = labels[order]
    energies = energies[order]
    psi = None
    if grid is not None:
        hx = hermite_functions(int(labels[:, 0].max()), grid.points)
        chi = a ** 0.25 * hermite_functions(int(labels[:, 1].max()), np.array([0.0]))[:, 0]
        psi = hx[labels[:, 0]] * chi[labels[:, 1]][:, None]
    return SpectralBasis(energies=energies, wavefunctions=psi, grid=grid,
                         quantum_labels=labels, anisotropy=a)


@dataclass(frozen=True)
class FermiLevel:
    energy: float
    k_f: float
    open_shell: bool


def fermi_level(basis: SpectralBasis, n_fermions: int) -> FermiLevel:
    """Fermi energy (energy of state N) and Fermi wavenumber k_F x_zp.

    In 1D eps_F is the energy of state N and k_F x_zp = sqrt(eps_F). In 2D
    eps_F is measured from the transverse zero-point energy a/2, so k_F
    refers to motion along the weak axis in the lowest transverse subband
    and reduces to the 1D value when a/N >> 1.
    An open shell (state N degenerate with state N+1) triggers an
    ``OpenShellWarning``.
    """
    if n_fermions < 1:
        raise DomainError("n_fermions must be >= 1")
    if basis.n_states < n_fermions:
        raise InsufficientBasis(f"basis holds {basis.n_states} states, need {n_fermions}")
    e_f = float(basis.energies[n_fermions - 1])
    open_shell = (basis.n_states > n_fermions
                  and basis.energies[n_fermions] - e_f < OPEN_SHELL_TOL * max(1.0, abs(e_f)))
    if open_shell:
        warnings.warn(f"open shell: level {n_fermions} is degenerate with level "
                      f"{n_fermions + 1}; tie broken by ordering", OpenShellWarning,
                      stacklevel=2)
    kinetic = e_f - (0.5 * basis.anisotropy if basis.is_2d else 0.0)
    if kinetic <= 0:
        raise DomainError("Fermi level lies below the bottom of the lowest subband")
    return FermiLevel(kinetic, math.sqrt(kinetic), bool(open_shell))
