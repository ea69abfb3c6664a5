"""Lattice couplings from radial kernels.

Site densities are Gaussians of width sigma = width_ratio * d. The double
overlap integral of the kernel with two such densities equals a single
convolution of F with a Gaussian of variance 2 sigma^2 (per axis in 2D).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import i0e

from .errors import DomainError, RangeError, ResolutionError
from .kernel import RadialKernel

# number of convolution standard deviations kept on each side
_CUT = 8.0
# minimum samples across +-3 standard deviations
_MIN_SAMPLES = 6


@dataclass(frozen=True)
class WannierSpec:
    """Gaussian site density: ``width_ratio`` = x_width / d, ``spacing_kf`` = k_F d."""

    width_ratio: float = 0.17
    spacing_kf: float = 1.0

    def __post_init__(self):
        if not 0 < self.width_ratio < 0.5:
            raise DomainError("width_ratio must lie in (0, 0.5)")
        if not self.spacing_kf > 0:
            raise DomainError("spacing_kf must be > 0")

    @property
    def sigma(self) -> float:
        """Gaussian width in k_F units."""
        return self.width_ratio * self.spacing_kf

    def with_spacing(self, spacing_kf: float) -> "WannierSpec":
        return WannierSpec(self.width_ratio, spacing_kf)


@dataclass(frozen=True)
class CouplingTable:
    couplings: np.ndarray
    spacing_kf: float
    max_range: int

    def __post_init__(self):
        c = np.asarray(self.couplings, dtype=float)
        if c.ndim != 1 or c.size < 1 or c.size != self.max_range:
            raise DomainError("couplings must hold max_range >= 1 entries")
        if not np.all(np.isfinite(c)):
            raise DomainError("couplings must be finite")


@dataclass(frozen=True)
class KagomeCouplings:
    v1: float
    v2: float
    v3: float


class SmearedKernel:
    """Gaussian-smeared radial kernel, callable on k_F r values.

    Parameters
    ----------
    radial : RadialKernel
    wannier : WannierSpec
    dim : {1, 2}
        1: convolution along a line, F extended evenly about r = 0.
        2: isotropic convolution in the plane, reduced to a radial integral.
    """

    def __init__(self, radial: RadialKernel, wannier: WannierSpec, dim: int = 1):
        if dim not in (1, 2):
            raise DomainError("dim must be 1 or 2")
        r = np.asarray(radial.r_values, dtype=float)
        f = np.asarray(radial.f_values, dtype=float)
        self.s = math.sqrt(2.0) * wannier.sigma
        self.dim = dim
        self.r_max = float(r[-1])
        if dim == 1:
            self._x = np.concatenate([-r[:0:-1], r])
            self._f = np.concatenate([f[:0:-1], f])
        else:
            self._x, self._f = r, f
        self._w = _trapezoid_weights(self._x)
        spacing = float(np.max(np.diff(r))) if r.size > 1 else math.inf
        if 6.0 * self.s < _MIN_SAMPLES * spacing:
            raise ResolutionError(
                f"Gaussian of std {self.s:.4g} spans fewer than {_MIN_SAMPLES} samples "
                f"(spacing {spacing:.4g})")

    def __call__(self, kfr):
        x = np.atleast_1d(np.asarray(kfr, dtype=float))
        if np.any(x < 0):
            raise DomainError("distances must be >= 0")
        if np.any(x + _CUT / 2 * self.s > self.r_max):
            raise RangeError(
                f"smearing at k_F r = {x.max():.4g} needs samples up to "
                f"{x.max() + _CUT / 2 * self.s:.4g}; kernel ends at {self.r_max:.4g}")
        out = np.empty(x.size)
        s = self.s
        for i, xi in enumerate(x):
            sel = np.abs(self._x - xi) <= _CUT * s
            y = self._x[sel]
            if self.dim == 1:
                g = np.exp(-0.5 * ((xi - y) / s) ** 2)
            else:
                g = (y / (s * s)) * np.exp(-0.5 * ((xi - y) / s) ** 2) * i0e(xi * y / (s * s))
            w = self._w[sel] * g
            out[i] = np.dot(w, self._f[sel]) / w.sum()
        return out if np.ndim(kfr) else float(out[0])


def _trapezoid_weights(x):
    w = np.zeros(x.size)
    if x.size > 1:
        dx = np.diff(x)
        w[:-1] += dx / 2
        w[1:] += dx / 2
    else:
        w[:] = 1.0
    return w


def smear_kernel(radial: RadialKernel, wannier: WannierSpec, dim: int = 1) -> SmearedKernel:
    """Convolve F with the Gaussian of variance 2 sigma^2 (see ``SmearedKernel``)."""
    return SmearedKernel(radial, wannier, dim)


def coupling_table(radial: RadialKernel, wannier: WannierSpec, max_range: int) -> CouplingTable:
    """Couplings v_s = smeared F(s d) for s = 1..max_range."""
    if max_range < 1:
        raise DomainError("max_range must be >= 1")
    d = wannier.spacing_kf
    if max_range * d > radial.r_values[-1]:
        raise RangeError(f"R d = {max_range * d:.4g} exceeds kernel range "
                         f"{radial.r_values[-1]:.4g}")
    sm = smear_kernel(radial, wannier)
    v = sm(d * np.arange(1, max_range + 1))
    return CouplingTable(v, d, max_range)


UNDEFINED = "v1_zero"


@dataclass
class RatioScan:
    """Result of ``ratio_scan``.

    ``cells`` maps (vp_ratio, spacing_kf) to a dict with keys v1, v2, v3,
    v2_over_v1, v3_over_v1 (NaN when undefined) and flags.
    """

    cells: dict = field(default_factory=dict)
    bow_target: tuple | None = None

    def rows(self):
        for key in sorted(self.cells):
            yield key, self.cells[key]


def ratio_cell(radial: RadialKernel, wannier: WannierSpec):
    """Coupling ratios of one scan cell."""
    table = coupling_table(radial, wannier, 3)
    v1, v2, v3 = (float(x) for x in table.couplings)
    fmax = float(np.max(np.abs(radial.f_values)))
    if abs(v1) <= 1e-12 * fmax:
        return {"v1": v1, "v2": v2, "v3": v3, "v2_over_v1": math.nan,
                "v3_over_v1": math.nan, "flags": UNDEFINED}
    return {"v1": v1, "v2": v2, "v3": v3, "v2_over_v1": v2 / v1,
            "v3_over_v1": v3 / v1, "flags": ""}


def bow_target(cells: dict, tol3: float = 0.1):
    """Cell minimising |v2/v1 - 0.5| among those with |v3/v1| < tol3."""
    best, best_key = math.inf, None
    for key in sorted(cells):
        c = cells[key]
        if c["flags"] or not abs(c["v3_over_v1"]) < tol3:
            continue
        score = abs(c["v2_over_v1"] - 0.5)
        if score < best:
            best, best_key = score, key
    return best_key


def ratio_scan(traps, spacings, wannier: WannierSpec, kernels=None, **kernel_kwargs) -> RatioScan:
    """Map (vp_ratio, k_F d) to (v2/v1, v3/v1).

    One kernel is solved per trap and reused across spacings. ``kernels``
    may supply precomputed radial kernels keyed by vp_ratio; other keyword
    arguments go to ``kernel.kernel_1d``.
    """
    from .kernel import kernel_1d

    traps = list(traps)
    spacings = list(spacings)
    if not traps or not spacings:
        raise DomainError("scan grids must be nonempty")
    out = RatioScan()
    for trap in sorted(traps, key=lambda t: t.vp_ratio):
        if kernels is not None and trap.vp_ratio in kernels:
            radial = kernels[trap.vp_ratio]
        else:
            radial, _ = kernel_1d(trap, **kernel_kwargs)
        for d in sorted(spacings):
            out.cells[(trap.vp_ratio, float(d))] = ratio_cell(radial, wannier.with_spacing(d))
    out.bow_target = bow_target(out.cells)
    return out


def kagome_distances(d: float):
    """Bond length d, second neighbour sqrt(3) d, third neighbour 2 d."""
    if not d > 0:
        raise DomainError("d must be > 0")
    return (d, math.sqrt(3.0) * d, 2.0 * d)


def kagome_couplings(radial2d: RadialKernel, d_kf: float, wannier: WannierSpec) -> KagomeCouplings:
    """Smeared 2D kernel at the three kagome neighbour distances."""
    w = wannier.with_spacing(d_kf)
    dist = kagome_distances(d_kf)
    if dist[2] > radial2d.r_values[-1]:
        raise RangeError("2D kernel does not reach 2d")
    sm = smear_kernel(radial2d, w, dim=2)
    v = sm(np.array(dist))
    return KagomeCouplings(float(v[0]), float(v[1]), float(v[2]))


def frustration_search(scan, tol_v1: float = 0.1, tol_23: float = 0.2):
    """Cells with v1 ~ 0 and v2 ~ v3, best first.

    ``scan`` maps a cell key to ``KagomeCouplings``. The score is
    (|v1| + |v2 - v3|) / max(|v2|, |v3|).
    """
    out = []
    for key in sorted(scan):
        c = scan[key]
        m = max(abs(c.v2), abs(c.v3))
        if m == 0:
            continue
        a, b = abs(c.v1) / m, abs(c.v2 - c.v3) / m
        if a < tol_v1 and b < tol_23:
            out.append((a + b, key, c))
    out.sort(key=lambda t: (t[0], t[1]))
    return [(key, c, score) for score, key, c in out]


def sign_change_cells(grid_x, grid_y, values):
    """Cells of a 2D grid whose value changes sign against a grid neighbour.

    ``values`` has shape (len(grid_x), len(grid_y)). Returns a boolean mask.
    """
    v = np.asarray(values, dtype=float)
    s = np.sign(v)
    mask = np.zeros(v.shape, dtype=bool)
    flip_x = s[1:, :] * s[:-1, :] < 0
    flip_y = s[:, 1:] * s[:, :-1] < 0
    mask[1:, :] |= flip_x
    mask[:-1, :] |= flip_x
    mask[:, 1:] |= flip_y
    mask[:, :-1] |= flip_y
    mask |= v == 0
    return mask


def kagome_scan(n_fermions: int, anis_over_n, spacings, wannier: WannierSpec,
                kfr_step: float = 0.05, kernels=None, **kernel_kwargs):
    """Kagome couplings over (anisotropy/N, k_F d); one 2D kernel per anisotropy.

    Returns a dict keyed by (anisotropy/N, k_F d) holding ``KagomeCouplings``.
    """
    from .kernel import kernel_2d
    from .spectra import TrapSpec2D

    anis_over_n = sorted(float(a) for a in anis_over_n)
    spacings = sorted(float(d) for d in spacings)
    if not anis_over_n or not spacings:
        raise DomainError("scan grids must be nonempty")
    d_max = spacings[-1]
    s_max = math.sqrt(2.0) * wannier.width_ratio * d_max
    kfr_max = 2.0 * d_max + _CUT / 2 * s_max + kfr_step
    kfr = np.arange(0.0, kfr_max + kfr_step / 2, kfr_step)
    out = {}
    for ratio in anis_over_n:
        if kernels is not None and ratio in kernels:
            radial = kernels[ratio]
        else:
            radial = kernel_2d(TrapSpec2D(n_fermions, ratio * n_fermions), kfr, **kernel_kwargs)
        for d in spacings:
            out[(ratio, d)] = kagome_couplings(radial, d, wannier)
    return out
