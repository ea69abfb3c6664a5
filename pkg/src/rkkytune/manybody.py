"""Exact diagonalisation of hardcore-boson chains with long-range couplings.

Sites are bits of an integer word: site j is bit j. The basis of a fixed
particle number n holds every L-bit word with n set bits in increasing
numeric order, so the position of a word is its colexicographic rank.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from math import comb

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh, eigh_tridiagonal
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from . import _backend
from .errors import (ConvergenceFailure, CouplingRangeWarning, DegeneracyError,
                     DomainError, RkkyError, SizeError)

MAX_SITES = 24
DEGENERATE_GAP = 1e-10
BERRY_GAP = 1e-8
DENSE_LIMIT = 2500


@dataclass(frozen=True)
class OccupationBasis:
    length: int
    n_particles: int
    states: np.ndarray
    binom: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.states.size)

    def rank(self, words) -> np.ndarray:
        w = np.ascontiguousarray(np.atleast_1d(words), dtype=np.uint64)
        return np.asarray(_backend.rank_states(w, self.binom))

    def unrank(self, index):
        return self.states[index]

    def occupations(self) -> np.ndarray:
        """(dim, L) array of site occupations."""
        j = np.arange(self.length, dtype=np.uint64)
        return ((self.states[:, None] >> j[None, :]) & np.uint64(1)).astype(np.float64)


def _binom_table(L):
    t = np.zeros((L + 1, L + 2), dtype=np.int64)
    for p in range(L + 1):
        for k in range(L + 2):
            t[p, k] = comb(p, k)
    return t


def build_basis(L: int, n_bosons: int) -> OccupationBasis:
    """Fixed-number occupation basis in increasing binary order."""
    if L > MAX_SITES:
        raise SizeError(f"L = {L} exceeds the limit {MAX_SITES}")
    if L < 1 or not 0 <= n_bosons <= L:
        raise DomainError("need L >= 1 and 0 <= n_bosons <= L")
    states = np.asarray(_backend.enumerate_states(int(L), int(n_bosons)), dtype=np.uint64)
    return OccupationBasis(int(L), int(n_bosons), states, _binom_table(L))


def rescale_couplings(values, v0: float = 4.0, zero_tol: float = 0.1) -> np.ndarray:
    """Scale couplings by the positive factor v0 / |v_ref|.

    v_ref is v_1 unless |v_1| < ``zero_tol`` * max|v_s|, in which case the
    entry of largest magnitude is used. Signs are preserved.
    """
    v = np.asarray(values, dtype=float)
    m = np.max(np.abs(v)) if v.size else 0.0
    if m == 0:
        return v.copy()
    ref = abs(v[0]) if abs(v[0]) >= zero_tol * m else m
    return v * (v0 / ref)


@dataclass(frozen=True)
class ChainModel:
    """Hardcore-boson chain.

    Parameters
    ----------
    length : int
    n_bosons : int
    couplings : array
        v_1..v_R, in units where ``hopping`` sets the scale.
    hopping : float
        t_b > 0.
    boundary : {"open", "periodic"}
    twist : float
        Phase on the boundary bond for periodic chains; reduced mod 2 pi.
    """

    length: int
    n_bosons: int
    couplings: tuple = ()
    hopping: float = 1.0
    boundary: str = "open"
    twist: float = 0.0

    def __post_init__(self):
        c = tuple(float(x) for x in np.atleast_1d(np.asarray(self.couplings, dtype=float)))
        object.__setattr__(self, "couplings", c)
        if self.boundary not in ("open", "periodic"):
            raise DomainError("boundary must be 'open' or 'periodic'")
        if not 0 <= self.n_bosons <= self.length:
            raise DomainError("need 0 <= n_bosons <= length")
        if not self.hopping > 0:
            raise DomainError("hopping must be > 0")
        if self.length > MAX_SITES:
            raise SizeError(f"L = {self.length} exceeds the limit {MAX_SITES}")
        if self.boundary == "periodic" and len(c) and not len(c) < self.length / 2:
            raise DomainError("periodic chains need range R < L/2")
        if self.boundary == "open" and len(c) >= self.length:
            raise DomainError("range must be below L")
        object.__setattr__(self, "twist", float(self.twist) % (2 * math.pi))

    @property
    def density(self) -> float:
        return self.n_bosons / self.length

    def with_twist(self, theta: float) -> "ChainModel":
        return ChainModel(self.length, self.n_bosons, self.couplings, self.hopping,
                          self.boundary, theta)


def build_hamiltonian(model: ChainModel, basis: OccupationBasis | None = None):
    """Sparse Hamiltonian -t sum (b+_j b_{j+1} + h.c.) + sum v_s n_j n_{j+s}.

    Under periodic boundaries the bond (L-1, 0) carries e^{i theta} for a
    particle hopping from site 0 to site L-1. The matrix is real unless the
    twist is nonzero.
    """
    if basis is None:
        basis = build_basis(model.length, model.n_bosons)
    L = model.length
    periodic = model.boundary == "periodic"
    coup = np.ascontiguousarray(model.couplings, dtype=np.float64)
    diag = np.asarray(_backend.diagonal_energies(basis.states, L, coup, periodic))
    D = basis.dim
    if L < 2:
        return sp.csr_matrix(sp.diags(diag))
    rows, cols, kind = (np.asarray(x) for x in _backend.hopping_entries(
        basis.states, L, periodic, basis.binom))
    theta = model.twist
    t = model.hopping
    if periodic and theta != 0.0:
        vals = np.full(rows.size, -t, dtype=np.complex128)
        vals[kind == 1] = -t * np.exp(1j * theta)
        vals[kind == 2] = -t * np.exp(-1j * theta)
        dtype = np.complex128
    else:
        vals = np.full(rows.size, -t)
        dtype = np.float64
    idx = np.arange(D)
    H = sp.csr_matrix((np.concatenate([vals, diag.astype(dtype)]),
                       (np.concatenate([rows, idx]), np.concatenate([cols, idx]))),
                      shape=(D, D))
    H.sum_duplicates()
    return H


@dataclass(frozen=True)
class GroundStateResult:
    energy: float
    amplitudes: np.ndarray
    basis_dim: int
    residual: float
    degenerate: bool = False
    gap: float = math.inf
    iterations: int = 0


def ground_state(H, v0=None, seed: int | None = None, tol: float = 1e-12,
                 max_iter: int = 1000) -> GroundStateResult:
    """Lowest eigenpair by Lanczos with full reorthogonalisation.

    The start vector is uniform over the basis unless ``v0`` is given or a
    ``seed`` requests a reproducible random start. ``degenerate`` is set
    when the two lowest converged Ritz values differ by less than 1e-10;
    states orthogonal to the Krylov space cannot be seen.

    Raises
    ------
    ConvergenceFailure
        If the residual does not drop below 1e-8 within ``max_iter`` steps.
    """
    D = H.shape[0]
    cplx = np.iscomplexobj(H.data) if sp.issparse(H) else np.iscomplexobj(H)
    dtype = np.complex128 if cplx else np.float64
    if D == 1:
        e = float(np.real(H[0, 0]))
        return GroundStateResult(e, np.ones(1, dtype=dtype), 1, 0.0)
    if v0 is not None:
        v = np.asarray(v0, dtype=dtype).copy()
    elif seed is not None:
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(D).astype(dtype)
    else:
        v = np.ones(D, dtype=dtype)
    v /= np.linalg.norm(v)
    n_max = min(max_iter, D)
    V = np.zeros((min(n_max, 64), D), dtype=dtype)
    alpha = np.zeros(n_max)
    beta = np.zeros(n_max)
    V[0] = v
    k = 0
    ritz, vec, res = None, None, math.inf
    for k in range(n_max):
        if k + 1 >= V.shape[0] and V.shape[0] < n_max:
            V = np.concatenate([V, np.zeros((min(V.shape[0], n_max - V.shape[0]), D),
                                            dtype=dtype)])
        w = H @ V[k]
        alpha[k] = float(np.real(np.vdot(V[k], w)))
        for _ in range(2):
            w -= V[:k + 1].T @ (V[:k + 1].conj() @ w)
        b = float(np.linalg.norm(w))
        beta[k] = b
        done = b < 1e-14 * max(1.0, abs(alpha[k])) or k + 1 == n_max
        if k >= 1 and (k % 5 == 0 or done):
            ritz, vec = eigh_tridiagonal(alpha[:k + 1], beta[:k])
            res = abs(b * vec[-1, 0])
            if res < tol * max(1.0, abs(ritz[0])) or done:
                break
        elif k == 0 and done:
            ritz, vec = np.array([alpha[0]]), np.ones((1, 1))
            break
        V[k + 1] = w / b
    m = k + 1
    if ritz is None:
        ritz, vec = eigh_tridiagonal(alpha[:m], beta[:m - 1])
    psi = vec[:m, 0] @ V[:m]
    psi /= np.linalg.norm(psi)
    energy = float(ritz[0])
    residual = float(np.linalg.norm(H @ psi - energy * psi))
    if residual > 1e-8:
        raise ConvergenceFailure(f"Lanczos residual {residual:.3g} after {m} steps")
    gap = float(ritz[1] - ritz[0]) if ritz.size > 1 else math.inf
    return GroundStateResult(energy, psi, D, residual, gap < DEGENERATE_GAP, gap, m)


def lowest_states(H, k: int):
    """The k lowest eigenpairs; dense for small bases, ARPACK otherwise."""
    D = H.shape[0]
    if D <= DENSE_LIMIT or k >= D - 1:
        A = H.toarray() if sp.issparse(H) else H
        top = min(k, D - 1)
        e, v = eigh(A, subset_by_index=[0, top], driver="evr")
        return e, v[:, :k]
    v0 = np.ones(D) / math.sqrt(D)
    e, v = eigsh(H, k=k + 1, which="SA", v0=v0, tol=1e-13)
    order = np.argsort(e)
    return e[order], v[:, order[:k]]


def structure_factor(amplitudes, basis: OccupationBasis):
    """S(q) at q = 2 pi m / L and its peak over q != 0.

    Returns
    -------
    s_of_q : ndarray of length L
    q0 : float
        Peak position; ties are broken toward smaller q.
    s_max : float
    """
    L = basis.length
    p = np.abs(np.asarray(amplitudes)) ** 2
    dn = basis.occupations() - basis.n_particles / L
    q = 2 * math.pi * np.arange(L) / L
    phase = np.exp(1j * np.outer(np.arange(L), q))
    A = dn @ phase
    s = (p @ (A.real ** 2 + A.imag ** 2)) / L ** 2
    if L == 1:
        return s, 0.0, 0.0
    m = 1 + int(np.argmax(s[1:] > s[1:].max() - 1e-12 * max(1.0, s[1:].max())))
    return s, float(q[m]), float(s[m])


def _bond_apply(psi, basis: OccupationBasis, j: int):
    """(b+_j b_{j+1} + h.c.) psi for bond (j, j+1 mod L)."""
    L = basis.length
    a, b = j, (j + 1) % L
    x = basis.states
    hit = ((x >> np.uint64(a)) & np.uint64(1)) != ((x >> np.uint64(b)) & np.uint64(1))
    tgt = basis.rank(x[hit] ^ np.uint64((1 << a) | (1 << b)))
    out = np.zeros_like(psi)
    out[tgt] = psi[hit]
    return out


def bond_observables(amplitudes, basis: OccupationBasis, model: ChainModel):
    """Staggered bond order B and the connected staggered bond correlator.

    B = (1/L) sum_j (-1)^j <B_j> with B_j = b+_j b_{j+1} + h.c.;
    C_B = (1/L) sum_j (-1)^j (<B_j B_{j0}> - <B_j><B_{j0}>), j0 = L/2.
    The sums run over the L-1 bonds of an open chain or the L bonds of a
    ring (the ring bond measured without the twist phase).
    """
    psi = np.asarray(amplitudes)
    L = basis.length
    nb = L if model.boundary == "periodic" else L - 1
    if nb < 1:
        return 0.0, 0.0
    bonds = [float(np.real(np.vdot(psi, _bond_apply(psi, basis, j)))) for j in range(nb)]
    j0 = min(L // 2, nb - 1)
    phi = _bond_apply(psi, basis, j0)
    corr = 0.0
    for j in range(nb):
        bb = float(np.real(np.vdot(psi, _bond_apply(phi, basis, j))))
        corr += (-1) ** j * (bb - bonds[j] * bonds[j0])
    B = sum((-1) ** j * bonds[j] for j in range(nb)) / L
    return float(B), float(corr / L)


def edge_profile(amplitudes, basis: OccupationBasis) -> np.ndarray:
    """Site densities <n_j>."""
    p = np.abs(np.asarray(amplitudes)) ** 2
    return p @ basis.occupations()


def berry_phase_from_frames(frames) -> float:
    """-arg prod_i det(Psi_i^H Psi_{i+1}) mod 2 pi over a closed loop.

    ``frames`` holds one (dim, k) matrix of states per twist point; the loop
    closes on the first frame. Any per-frame unitary change of basis leaves
    the result unchanged.
    """
    frames = [np.atleast_2d(np.asarray(f).T).T for f in frames]
    total = 0.0
    for i in range(len(frames)):
        a, b = frames[i], frames[(i + 1) % len(frames)]
        det = np.linalg.det(a.conj().T @ b)
        total += math.atan2(det.imag, det.real)
    return (-total) % (2 * math.pi)


@dataclass(frozen=True)
class BerryResult:
    gamma: float
    multiplet: int
    min_gap: float


def berry_phase(model: ChainModel, n_twist_steps: int = 16, n_states="auto") -> BerryResult:
    """Twisted-boundary Berry phase of the ground state (or lowest multiplet).

    The twist theta runs over 2 pi i / n on the boundary bond. With
    ``n_states=1`` the ground state must stay gapped (gap >= 1e-8) at every
    twist point. With ``"auto"`` the smallest multiplet (up to 4 states)
    separated from the rest of the spectrum at every twist point is used;
    at half filling on a ring the twist pumps the ground state into the
    first excited state, so a two-state multiplet is the generic choice.
    """
    if model.boundary != "periodic":
        raise DomainError("Berry phase needs a periodic chain")
    if n_twist_steps < 8:
        raise DomainError("n_twist_steps must be >= 8")
    basis = build_basis(model.length, model.n_bosons)
    k_max = 1 if n_states == "auto" else int(n_states)
    k_try = 4 if n_states == "auto" else k_max
    k_try = min(k_try, basis.dim - 1) if basis.dim > 1 else 1
    energies, vectors = [], []
    for i in range(n_twist_steps):
        H = build_hamiltonian(model.with_twist(2 * math.pi * i / n_twist_steps), basis)
        if basis.dim == 1:
            e, v = np.array([np.real(H[0, 0]), math.inf]), np.ones((1, 1), dtype=complex)
        else:
            e, v = lowest_states(H, k_try)
        energies.append(e)
        vectors.append(v)
    candidates = range(1, k_try + 1) if n_states == "auto" else [k_max]
    for k in candidates:
        gaps = [float(e[k] - e[k - 1]) if len(e) > k else math.inf for e in energies]
        g = min(gaps)
        if g >= BERRY_GAP:
            gamma = berry_phase_from_frames([v[:, :k] for v in vectors])
            return BerryResult(gamma, k, g)
    raise DegeneracyError("no gapped multiplet along the twist loop")


def phase_distance(a: float, b: float) -> float:
    """Distance between two angles on the circle."""
    d = (a - b) % (2 * math.pi)
    return min(d, 2 * math.pi - d)


def truncate_couplings(values, L: int, max_range: int = 5, warn_tol: float = 0.05):
    """Keep v_1..v_R with R = min(max_range, L/2 - 1); warn if the rest is not small."""
    v = np.asarray(values, dtype=float)
    R = min(max_range, L // 2 - 1)
    tail = v[R:]
    if tail.size and v[0] != 0 and np.max(np.abs(tail / v[0])) >= warn_tol:
        warnings.warn(f"couplings beyond range {R} reach "
                      f"{np.max(np.abs(tail / v[0])):.3g} of v1", CouplingRangeWarning,
                      stacklevel=2)
    return v[:R]


@dataclass(frozen=True)
class PhaseRow:
    vp_ratio: float
    kf_d: float
    q0: float
    s_max: float
    bond: float
    gamma: float
    error: str = ""


def phase_cell(couplings, L: int, n_bosons: int, boundary: str = "periodic",
               v0: float = 4.0, berry_steps: int = 16):
    """Observables of one scan cell: (q0, s_max, bond, gamma).

    ``couplings`` are raw kernel couplings; they are rescaled to strength
    v0 and truncated at R = min(5, L/2 - 1). ``bond`` is B for open chains
    and C_B for rings; gamma is NaN for open chains or ``berry_steps=0``.
    """
    v = rescale_couplings(truncate_couplings(couplings, L), v0)
    model = ChainModel(L, n_bosons, v, 1.0, boundary)
    basis = build_basis(L, n_bosons)
    gs = ground_state(build_hamiltonian(model, basis))
    _, q0, s_max = structure_factor(gs.amplitudes, basis)
    B, C = bond_observables(gs.amplitudes, basis, model)
    bond = B if boundary == "open" else C
    gamma = math.nan
    if boundary == "periodic" and berry_steps:
        gamma = berry_phase(model, berry_steps).gamma
    return q0, s_max, bond, gamma


def phase_scan(tables, L: int, n_bosons: int, boundary: str = "periodic", v0: float = 4.0,
               berry_steps: int = 16):
    """Observables over a dict (vp_ratio, k_F d) -> coupling array.

    Per-cell failures are recorded in ``PhaseRow.error``; the scan goes on.
    """
    if not tables:
        raise DomainError("scan grid must be nonempty")
    if L > MAX_SITES:
        raise SizeError(f"L = {L} exceeds the limit {MAX_SITES}")
    rows = []
    for key in sorted(tables):
        try:
            q0, s_max, bond, gamma = phase_cell(tables[key], L, n_bosons, boundary, v0,
                                                berry_steps)
            rows.append(PhaseRow(key[0], key[1], q0, s_max, bond, gamma))
        except (RkkyError, np.linalg.LinAlgError, ArpackNoConvergence) as exc:
            rows.append(PhaseRow(key[0], key[1], math.nan, math.nan, math.nan, math.nan,
                                 f"{type(exc).__name__}: {exc}"))
    return rows
