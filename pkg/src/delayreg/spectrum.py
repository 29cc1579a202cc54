"""Roots of quasipolynomials in a rectangle of the complex plane.

The search follows the mapping approach: evaluate the function on a
rectangular grid, trace the zero-level contours of its real and imaginary
parts with marching squares, take the intersections of the two contour
families as seeds and polish them with Newton's method.  An independent
argument-principle counter checks completeness.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .quasipoly import Quasipolynomial, qp_derivative

__all__ = [
    "GridTooCoarse",
    "ClusteredRoots",
    "ZeroFunction",
    "BoundaryRoot",
    "RegionSpec",
    "Root",
    "RootSet",
    "SensitivitySpectrum",
    "default_grid_step",
    "find_roots",
    "count_roots_argument_principle",
    "sensitivity_spectrum",
    "spectrum_to_csv",
]

COINCIDENT_TOL = 1e-6
# grid origin offset in cells, so roots at round coordinates avoid grid nodes
GRID_OFFSET = 1.0 / math.pi


class GridTooCoarse(UserWarning):
    """Roots may have been missed or merged; halve ``grid_step``."""


class ClusteredRoots(UserWarning):
    """A multiple root was found as a cluster and reported once."""


class ZeroFunction(ValueError):
    pass


class BoundaryRoot(ValueError):
    pass


def default_grid_step(qp: Quasipolynomial) -> float:
    # e^{-s theta} oscillates with period 2 pi / theta along the imaginary axis
    return min(0.1, math.pi / (8.0 * (1.0 + qp.max_delay)))


@dataclass(frozen=True)
class RegionSpec:
    re_min: float
    re_max: float
    im_min: float
    im_max: float
    grid_step: Optional[float] = None
    newton_tol: float = 1e-12
    max_newton_iters: int = 50

    def __post_init__(self):
        if not self.re_min < self.re_max:
            raise ValueError("re_min must be below re_max")
        if self.im_min > self.im_max:
            raise ValueError("im_min must not exceed im_max")
        if self.grid_step is not None and not self.grid_step > 0:
            raise ValueError("grid_step must be positive")

    @property
    def is_empty(self) -> bool:
        return self.im_min == self.im_max

    def step_for(self, qp: Quasipolynomial) -> float:
        return self.grid_step if self.grid_step is not None else default_grid_step(qp)

    def contains(self, s: complex, margin: float = 0.0) -> bool:
        return (
            self.re_min - margin <= s.real <= self.re_max + margin
            and self.im_min - margin <= s.imag <= self.im_max + margin
        )

    def mirrored(self) -> "RegionSpec":
        return replace(self, im_min=-self.im_max, im_max=-self.im_min)


@dataclass(frozen=True)
class Root:
    s: complex
    residual: float
    spread: float = 0.0
    multiplicity: int = 1


@dataclass(frozen=True)
class RootSet:
    roots: tuple
    region: RegionSpec
    grid_step: float = 0.0

    def __len__(self):
        return len(self.roots)

    def __iter__(self):
        return iter(self.roots)

    @property
    def values(self) -> np.ndarray:
        return np.array([r.s for r in self.roots], dtype=complex)

    def inside(self, strict: bool = True) -> "RootSet":
        """Roots within the region proper (dropping the search margin)."""
        reg = self.region
        keep = tuple(
            r
            for r in self.roots
            if (reg.re_min < r.s.real < reg.re_max and reg.im_min < r.s.imag < reg.im_max)
            or (not strict and reg.contains(r.s))
        )
        return replace(self, roots=keep)

    def mirrored(self) -> "RootSet":
        """Complex conjugates, for display of real-coefficient spectra."""
        roots = tuple(replace(r, s=r.s.conjugate()) for r in self.roots)
        return RootSet(roots, self.region.mirrored(), self.grid_step)

    def nearest(self, s: complex) -> Optional[Root]:
        if not self.roots:
            return None
        return min(self.roots, key=lambda r: abs(r.s - s))


# --- marching squares ---------------------------------------------------------

# corners in counterclockwise order: (0,0), (1,0), (1,1), (0,1) in (x, y) cell units
_EDGES = ((0, 1), (1, 2), (2, 3), (3, 0))
_CORNER_XY = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def _cell_segments(v: Sequence[float]) -> list:
    """Zero-level segments of the bilinear interpolant of ``v`` in a unit cell."""
    pos = [x > 0 for x in v]
    pts = {}
    for k, (a, b) in enumerate(_EDGES):
        if pos[a] != pos[b]:
            t = v[a] / (v[a] - v[b])
            pts[k] = _CORNER_XY[a] + t * (_CORNER_XY[b] - _CORNER_XY[a])
    if len(pts) == 2:
        a, b = pts.values()
        return [(a, b)]
    if len(pts) == 4:
        center_pos = (sum(v) / 4.0) > 0
        if center_pos == pos[0]:
            # corners 1 and 3 are cut off
            return [(pts[0], pts[1]), (pts[2], pts[3])]
        return [(pts[3], pts[0]), (pts[1], pts[2])]
    return []


def _intersect(p, p2, q, q2, eps=1e-9):
    r = p2 - p
    w = q2 - q
    den = r[0] * w[1] - r[1] * w[0]
    if den == 0:
        return None
    d = q - p
    t = (d[0] * w[1] - d[1] * w[0]) / den
    u = (d[0] * r[1] - d[1] * r[0]) / den
    if -eps <= t <= 1 + eps and -eps <= u <= 1 + eps:
        return p + t * r
    return None


def _seeds(values: np.ndarray, x0: float, y0: float, h: float) -> np.ndarray:
    re_pos = values.real > 0
    im_pos = values.imag > 0

    def mixed(b):
        c = b[:-1, :-1].astype(int) + b[1:, :-1] + b[:-1, 1:] + b[1:, 1:]
        return (c > 0) & (c < 4)

    rows, cols = np.nonzero(mixed(re_pos) & mixed(im_pos))
    seeds = []
    for i, j in zip(rows, cols):
        # grid index (i, j) is (imag, real)
        vr = [values.real[i, j], values.real[i, j + 1], values.real[i + 1, j + 1], values.real[i + 1, j]]
        vi = [values.imag[i, j], values.imag[i, j + 1], values.imag[i + 1, j + 1], values.imag[i + 1, j]]
        for a, b in _cell_segments(vr):
            for c, d in _cell_segments(vi):
                hit = _intersect(a, b, c, d)
                if hit is not None:
                    seeds.append(complex(x0 + (j + hit[0]) * h, y0 + (i + hit[1]) * h))
    return np.array(seeds, dtype=complex)


# --- Newton polishing -----------------------------------------------------------


def _newton(qp, dqp, z: np.ndarray, iters: int):
    z = z.copy()
    active = np.ones(z.shape, dtype=bool)
    for _ in range(iters):
        if not active.any():
            break
        za = z[active]
        f = qp(za)
        df = dqp(za)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(df != 0, f / df, 0.0)
        step = np.where(np.isfinite(step), step, 0.0)
        z[active] = za - step
        done = (np.abs(step) <= 4e-16 * np.maximum(1.0, np.abs(za))) | (f == 0)
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return z


def _refine_multiple(qp: Quasipolynomial, center: complex, order: int, iters: int) -> complex:
    """Newton on the ``order``-th derivative, which has a simple root at a root of that multiplicity."""
    g = qp
    for _ in range(order):
        g = qp_derivative(g)
    dg = qp_derivative(g)
    z = _newton(g, dg, np.array([center]), iters)[0]
    return complex(z)


def find_roots(qp: Quasipolynomial, region: RegionSpec, check: bool = True) -> RootSet:
    """All roots of ``qp`` in ``region`` (plus a margin of one grid step).

    With ``check``, the located roots are counted against the argument
    principle on the region grown by half a step; a mismatch raises the
    :class:`GridTooCoarse` warning.
    """
    if qp.is_zero():
        raise ZeroFunction("cannot locate roots of the zero quasipolynomial")
    h = region.step_for(qp)
    if region.is_empty:
        return RootSet((), region, h)

    pad = (2 + GRID_OFFSET) * h
    x0, y0 = region.re_min - pad, region.im_min - pad
    nx = int(math.ceil((region.re_max + pad - x0) / h)) + 1
    ny = int(math.ceil((region.im_max + pad - y0) / h)) + 1
    xs = x0 + h * np.arange(nx)
    ys = y0 + h * np.arange(ny)
    grid = xs[None, :] + 1j * ys[:, None]
    values = qp(grid)
    values = np.where(np.isfinite(values), values, 0.0)

    seeds = _seeds(values, x0, y0, h)
    roots = []
    if seeds.size:
        dqp = qp_derivative(qp)
        # diverging seeds may overflow; they are dropped below
        with np.errstate(over="ignore", invalid="ignore"):
            polished = _newton(qp, dqp, seeds, region.max_newton_iters)
            res = np.abs(qp(polished))
            scale = qp.magnitude_scale(polished)
        ok = np.isfinite(polished) & np.isfinite(res) & (res <= region.newton_tol * (1.0 + scale))
        ok &= np.array([region.contains(z, h) for z in polished], dtype=bool)
        roots = _cluster(qp, polished[ok], region)

    if check:
        _check_completeness(qp, region, roots, h)

    cells = {}
    for r in roots:
        key = (int((r.s.real - x0) // h), int((r.s.imag - y0) // h))
        cells[key] = cells.get(key, 0) + 1
    if any(n > 1 for n in cells.values()):
        warnings.warn(
            f"more than one root in a grid cell of size {h:g}; consider halving grid_step",
            GridTooCoarse,
            stacklevel=2,
        )
    return RootSet(tuple(roots), region, h)


def _cluster(qp: Quasipolynomial, zs: np.ndarray, region: RegionSpec) -> list:
    order = np.argsort(zs.real + 1e-3 * zs.imag)
    zs = zs[order]
    groups: list[list[complex]] = []
    for z in zs:
        for g in groups:
            c = g[0]
            near = abs(z - c) <= 1e-6 * max(1.0, abs(c))
            if not near and abs(z - c) <= 1e-3 * max(1.0, abs(c)):
                # same multiple root if the function is flat in between
                mid = 0.5 * (z + c)
                near = abs(qp(mid)) <= region.newton_tol * (1.0 + qp.magnitude_scale(mid))
            if near:
                g.append(complex(z))
                break
        else:
            groups.append([complex(z)])

    out = []
    for g in groups:
        pts = np.array(g)
        center = complex(pts.mean())
        spread = float(np.max(np.abs(pts - center)))
        if spread > 1e-9 * max(1.0, abs(center)):
            mult = _estimate_multiplicity(qp, center, spread)
            if mult > 1:
                refined = _refine_multiple(qp, center, mult - 1, region.max_newton_iters)
                if abs(refined - center) <= 10 * spread + 1e-12:
                    center = refined
                warnings.warn(
                    f"root near {center:.6g} looks like multiplicity {mult}; reported once",
                    ClusteredRoots,
                    stacklevel=3,
                )
        else:
            mult = _estimate_multiplicity(qp, center, 0.0)
            if mult > 1:
                warnings.warn(
                    f"root near {center:.6g} looks like multiplicity {mult}; reported once",
                    ClusteredRoots,
                    stacklevel=3,
                )
        out.append(Root(center, float(abs(qp(center))), spread, mult))
    out.sort(key=lambda r: (r.s.imag, r.s.real))
    return out


def _estimate_multiplicity(qp: Quasipolynomial, center: complex, spread: float) -> int:
    d1 = qp_derivative(qp)
    if abs(d1(center)) > 1e-3 * max(d1.magnitude_scale(center), 1e-300):
        return 1
    # flat derivative: count roots in a small square around the center
    r = max(100.0 * spread, 1e-3 * max(1.0, abs(center)))
    for _ in range(4):
        box = RegionSpec(center.real - r, center.real + r, center.imag - r, center.imag + r)
        try:
            return max(1, count_roots_argument_principle(qp, box, boundary_samples=256))
        except BoundaryRoot:
            r *= 1.7
    return 1


def _check_completeness(qp: Quasipolynomial, region: RegionSpec, roots: list, h: float) -> None:
    grown = replace(
        region,
        re_min=region.re_min - h / 2,
        re_max=region.re_max + h / 2,
        im_min=region.im_min - h / 2,
        im_max=region.im_max + h / 2,
    )
    try:
        expected = count_roots_argument_principle(qp, grown)
    except BoundaryRoot:
        return
    located = sum(r.multiplicity for r in roots if grown.contains(r.s))
    if located != expected:
        warnings.warn(
            f"located {located} root(s) but the argument principle counts {expected}; "
            f"consider halving grid_step (now {h:g})",
            GridTooCoarse,
            stacklevel=3,
        )


# --- argument principle -------------------------------------------------------------


def _boundary_distance(z: np.ndarray, region: RegionSpec) -> np.ndarray:
    x, y = z.real, z.imag
    inside = np.minimum.reduce(
        [x - region.re_min, region.re_max - x, y - region.im_min, region.im_max - y]
    )
    dx = np.maximum.reduce([region.re_min - x, np.zeros_like(x), x - region.re_max])
    dy = np.maximum.reduce([region.im_min - y, np.zeros_like(y), y - region.im_max])
    return np.where(inside >= 0, inside, np.hypot(dx, dy))


def _probe_boundary(qp, dqp, z: np.ndarray, f: np.ndarray, region: RegionSpec, tol: float) -> None:
    """Raise :class:`BoundaryRoot` if Newton from a near-zero sample lands on the boundary."""
    spacing = np.abs(np.diff(z, append=z[:1]))
    df = np.abs(dqp(z))
    near = np.flatnonzero(np.abs(f) <= 4.0 * spacing * df)
    if near.size == 0:
        return
    near = near[np.argsort(np.abs(f[near]))[:64]]
    with np.errstate(over="ignore", invalid="ignore"):
        polished = _newton(qp, dqp, z[near], 50)
        res = np.abs(qp(polished))
    conv = res <= 1e-10 * (1.0 + qp.magnitude_scale(polished))
    close = conv & (_boundary_distance(polished, region) <= tol)
    if close.any():
        hit = polished[np.flatnonzero(close)[0]]
        raise BoundaryRoot(f"root at {hit:.6g} lies on the region boundary")


def _boundary(region: RegionSpec, n: int) -> np.ndarray:
    a = complex(region.re_min, region.im_min)
    b = complex(region.re_max, region.im_min)
    c = complex(region.re_max, region.im_max)
    d = complex(region.re_min, region.im_max)
    t = np.linspace(0.0, 1.0, n, endpoint=False)
    edges = [p + t * (q - p) for p, q in ((a, b), (b, c), (c, d), (d, a))]
    pts = np.concatenate(edges)
    return np.append(pts, a)


def count_roots_argument_principle(
    qp: Quasipolynomial, region: RegionSpec, boundary_samples: int = 2000, max_samples: int = 2**20
) -> int:
    """Winding number of ``qp`` around the boundary of ``region``.

    The boundary is refined until consecutive samples differ by less than
    ``pi/4`` in argument.  Roots are counted with multiplicity.
    """
    if qp.is_zero():
        raise ZeroFunction("cannot count roots of the zero quasipolynomial")
    if region.is_empty:
        return 0
    n = boundary_samples
    dqp = qp_derivative(qp)
    size = max(region.re_max - region.re_min, region.im_max - region.im_min)
    probe_tol = 4.0 * size / max_samples
    while True:
        z = _boundary(region, n)
        f = qp(z)
        mag = np.abs(f)
        if mag.min() <= 1e-8 * mag.max():
            k = int(np.argmin(mag))
            raise BoundaryRoot(f"quasipolynomial (nearly) vanishes on the boundary near {z[k]:.6g}")
        _probe_boundary(qp, dqp, z[:-1], f[:-1], region, probe_tol)
        dphi = np.angle(f[1:] / f[:-1])
        if np.max(np.abs(dphi)) < math.pi / 4 or n >= max_samples:
            break
        n *= 2
    return int(round(dphi.sum() / (2 * math.pi)))


# --- sensitivity spectra -------------------------------------------------------------


@dataclass(frozen=True)
class SensitivitySpectrum:
    zeros: RootSet
    poles: RootSet
    coincident: tuple = field(default=())
    _members: frozenset = field(default=frozenset(), repr=False)

    def is_coincident(self, s: complex) -> bool:
        return s in self._members


def _coincident(zeros: RootSet, poles: RootSet, tol: float = COINCIDENT_TOL):
    mids, members = [], set()
    for z in zeros:
        for p in poles:
            if abs(z.s - p.s) <= max(tol, z.spread + p.spread):
                mids.append(0.5 * (z.s + p.s))
                members.update((z.s, p.s))
    return tuple(mids), frozenset(members)


def sensitivity_spectrum(plant_f, ctrl_f, qm, region: RegionSpec) -> SensitivitySpectrum:
    """Zeros and poles of the (uncancelled) sensitivity in ``region``.

    Pole/zero pairs within ``1e-6`` of each other are listed in
    ``coincident``; they come from the shared stable factors of the
    factorizations and are not part of the closed-loop spectrum.
    """
    from .factorization import assemble_sensitivity

    sens = assemble_sensitivity(plant_f, ctrl_f, qm)
    zeros = find_roots(sens.num, region)
    poles = find_roots(sens.den, region)
    mids, members = _coincident(zeros, poles)
    return SensitivitySpectrum(zeros, poles, mids, members)


def _fmt(x: float) -> str:
    return format(x, ".17g")


def spectrum_to_csv(spectrum: SensitivitySpectrum, kind: str = "both") -> str:
    """CSV with columns ``re,im,residual,kind,coincident``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["re", "im", "residual", "kind", "coincident"])
    sets: Iterable = []
    if kind in ("zeros", "both"):
        sets = [("zero", spectrum.zeros)]
    if kind in ("poles", "both"):
        sets = list(sets) + [("pole", spectrum.poles)]
    for label, rs in sets:
        for r in rs:
            flag = int(spectrum.is_coincident(r.s))
            w.writerow([_fmt(r.s.real), _fmt(r.s.imag), _fmt(r.residual), label, flag])
    return buf.getvalue()
