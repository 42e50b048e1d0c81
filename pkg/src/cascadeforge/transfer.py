"""Density-based transfer of cost-curve settings between datasets.

A cost curve on ``[d^0, d^K]`` normalised by its integral is a density; the
mass it places on each of its ``K`` regions, divided by the mass of the first
region, gives a vector of likelihood ratios ``beta``. Transfer keeps that
vector (to within a symmetric-KL tolerance) while moving the curve onto a new
time interval: the target ratios are found by gradient descent on the
symmetrised KL divergence and the target's internal boundaries by
root-finding on the region-mass equations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .rewards import CostCurve

LN10 = math.log(10.0)
BETA_MIN = 1e-12


class TransferError(ValueError):
    pass


class NoRootError(TransferError):
    pass


class NonConvergenceError(TransferError):
    def __init__(self, message: str, last_value: float):
        super().__init__(f"{message} (last value {last_value:.6g})")
        self.last_value = last_value


# ---------------------------------------------------------------------------
# Quadrature

def adaptive_simpson(f: Callable[[float], float], a: float, b: float,
                     tol: float = 1e-10, max_depth: int = 60) -> float:
    if b == a:
        return 0.0

    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        delta = left + right - whole
        if depth <= 0 or abs(delta) <= 15.0 * tol:
            return left + right + delta / 15.0
        return (recurse(a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + recurse(m, b, fm, frm, fb, right, tol / 2.0, depth - 1))

    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    return recurse(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, max_depth)


def _segment_integral(seg, a: float, b: float, tol: float) -> float:
    if b <= a:
        return 0.0
    if getattr(seg, "antiderivative", None) is not None:
        return seg.antiderivative(b) - seg.antiderivative(a)
    return adaptive_simpson(lambda t: float(seg(t)), a, b, tol)


def integrate_segment(curve: CostCurve, a: float, b: float, tol: float = 1e-10) -> float:
    """Integral of ``curve`` over ``[a, b]`` inside its domain."""
    slack = 1e-12 * max(1.0, abs(curve.end))
    if not (curve.start - slack <= a <= b <= curve.end + slack):
        raise TransferError(f"interval [{a}, {b}] outside curve domain [{curve.start}, {curve.end}]")
    a = max(a, curve.start)
    b = min(b, curve.end)
    total = 0.0
    bounds = curve.boundaries
    for i, seg in enumerate(curve.segments):
        lo, hi = max(a, bounds[i]), min(b, bounds[i + 1])
        if hi > lo:
            total += _segment_integral(seg, lo, hi, tol)
    return total


def region_areas(curve: CostCurve) -> np.ndarray:
    b = curve.boundaries
    return np.array([_segment_integral(seg, b[i], b[i + 1], 1e-10)
                     for i, seg in enumerate(curve.segments)])


# ---------------------------------------------------------------------------
# Densities and divergences

@dataclass(frozen=True)
class DensityModel:
    curve: CostCurve
    normalizer: float
    probabilities: np.ndarray
    betas: np.ndarray

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t >= self.curve.start) & (t <= self.curve.end)
        vals = self.curve(np.clip(t, self.curve.start, self.curve.end)) / self.normalizer
        return np.where(inside, vals, 0.0)


def likelihood_ratios(curve: CostCurve) -> DensityModel:
    areas = region_areas(curve)
    if not areas[0] > 0:
        raise TransferError("first region has non-positive area; ratios undefined")
    k = float(areas.sum())
    return DensityModel(curve, k, areas / k, areas / areas[0])


def as_beta_vector(beta) -> np.ndarray:
    """Scalars mean the two-region vector ``(1, beta)``."""
    arr = np.atleast_1d(np.asarray(beta, dtype=float))
    if arr.ndim != 1:
        raise TransferError("beta must be a scalar or a vector")
    if arr.size == 1 and np.ndim(beta) == 0:
        arr = np.array([1.0, float(beta)])
    return arr


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Base-10 KL divergence of two categoricals with positive entries."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return float(np.sum(p * (np.log(p) - np.log(q))) / LN10)


def sym_kl(beta_a, beta_b) -> float:
    """Mean of both directed KL divergences between ``beta/sum(beta)``."""
    a, b = as_beta_vector(beta_a), as_beta_vector(beta_b)
    if a.shape != b.shape:
        raise TransferError("beta vectors differ in length")
    if (a <= 0).any() or (b <= 0).any():
        raise TransferError("beta entries must be > 0")
    pa, pb = a / a.sum(), b / b.sum()
    return 0.5 * (kl_divergence(pa, pb) + kl_divergence(pb, pa))


def kl_two_region(beta_1: float, beta_2: float) -> float:
    """Closed form of KL(Y1 || Y2) for two-region curves in terms of betas."""
    return (math.log10((beta_2 + 1.0) / (beta_1 + 1.0))
            + beta_1 / (beta_1 + 1.0) * math.log10(beta_1 / beta_2))


def sym_kl_grad(theta: np.ndarray, beta_source: np.ndarray) -> np.ndarray:
    """Gradient of ``sym_kl(beta_source, (1, theta))`` with respect to ``theta``."""
    psi = np.concatenate([[1.0], theta])
    s = psi.sum()
    pd = psi / s
    ps = beta_source / beta_source.sum()
    # dh/dP_D; the +1 from d(p ln p) cancels after projecting onto the simplex
    g = 0.5 * (-ps / pd + np.log(pd) - np.log(ps)) / LN10
    grad_psi = (g - np.dot(pd, g)) / s
    return grad_psi[1:]


# ---------------------------------------------------------------------------
# Target ratios

@dataclass(frozen=True)
class BetaSolution:
    psi: np.ndarray
    divergence: float
    iterations: int
    learning_rate: float


def _hessian_scale(theta: np.ndarray, beta_source: np.ndarray) -> float:
    k = len(theta)
    h = np.empty((k, k))
    for j in range(k):
        step = 1e-6 * max(1.0, abs(theta[j]))
        tp, tm = theta.copy(), theta.copy()
        tp[j] += step
        tm[j] -= step
        h[:, j] = (sym_kl_grad(tp, beta_source) - sym_kl_grad(tm, beta_source)) / (2 * step)
    h = 0.5 * (h + h.T)
    return float(np.max(np.abs(np.linalg.eigvalsh(h))))


def solve_beta(beta_source, epsilon: float, alpha: float | None = None, seed: int = 0,
               max_iter: int = 1_000_000, theta0: Sequence[float] | None = None) -> BetaSolution:
    """Descend on the symmetric KL until it first drops below ``epsilon``.

    ``theta`` starts at a seeded draw within [0.8, 1.25] of the source ratios
    unless ``theta0`` is given. When ``alpha`` is None the step is set from
    the curvature (largest Hessian eigenvalue at the start and at the
    optimum). A step that would raise the divergence is retried at half the
    rate. An exact zero divergence is nudged off by a relative 1e-10 so that
    the result is strictly positive.
    """
    if not epsilon > 0:
        raise TransferError("epsilon must be > 0")
    bs = as_beta_vector(beta_source)
    if (bs <= 0).any():
        raise TransferError("source betas must be > 0")
    bs = bs / bs[0]
    if len(bs) < 2:
        raise TransferError("need at least two regions")
    if theta0 is None:
        rng = np.random.default_rng(seed)
        theta = bs[1:] * rng.uniform(0.8, 1.25, len(bs) - 1)
    else:
        theta = np.maximum(np.asarray(theta0, dtype=float).copy(), BETA_MIN)
        if theta.shape != bs[1:].shape:
            raise TransferError("theta0 has the wrong length")

    def h_of(th):
        return sym_kl(bs, np.concatenate([[1.0], th]))

    if alpha is None:
        scale = max(_hessian_scale(theta, bs), _hessian_scale(bs[1:].copy(), bs))
        alpha = 1.0 / scale
    if not alpha > 0:
        raise TransferError("learning rate must be > 0")
    lr = alpha
    h = h_of(theta)
    it = 0
    while h >= epsilon:
        if it >= max_iter:
            raise NonConvergenceError("beta descent did not reach tolerance", h)
        it += 1
        grad = sym_kl_grad(theta, bs)
        while True:
            cand = np.maximum(theta - lr * grad, BETA_MIN)
            h_new = h_of(cand)
            if h_new <= h or lr < 1e-300:
                break
            lr *= 0.5
        theta, h = cand, h_new
    if h == 0.0:
        theta = theta * (1.0 + 1e-10)
        h = h_of(theta)
        if not 0.0 < h < epsilon:
            raise NonConvergenceError("could not move off the exact source ratios", h)
    return BetaSolution(np.concatenate([[1.0], theta]), h, it, alpha)


def verify_ratios(beta_source, beta_target, epsilon: float) -> bool:
    """True iff ``0 < sym_kl < epsilon``."""
    h = sym_kl(beta_source, beta_target)
    return 0.0 < h < epsilon


# ---------------------------------------------------------------------------
# Target boundaries

@dataclass(frozen=True)
class TransferProblem:
    source: CostCurve
    target_start: float
    target_end: float
    epsilon: float = 1e-8
    alpha: float | None = None
    boundary_tol: float = 1e-4
    residual_tol: float = 1e-9
    max_sweeps: int = 200
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise TransferError("epsilon must be > 0")
        if not self.target_end > self.target_start:
            raise TransferError("target endpoints must be increasing")
        if self.alpha is not None and not self.alpha > 0:
            raise TransferError("learning rate must be > 0")


@dataclass(frozen=True)
class TransferSolution:
    source_beta: np.ndarray
    beta_target: np.ndarray
    boundaries: tuple[float, ...]
    curve: CostCurve
    divergence: float
    achieved_beta: np.ndarray
    beta_iterations: int = 0
    sweeps: int = 0

    @property
    def internal_boundaries(self) -> tuple[float, ...]:
        return self.boundaries[1:-1]


def compose_target_curve(source: CostCurve, boundaries: Sequence[float]) -> CostCurve:
    """Pull every source segment back through the affine map of its region.

    Region ``i`` of the target maps linearly onto region ``i`` of the source,
    so the composed curve is continuous wherever the source is.
    """
    bd = tuple(float(x) for x in boundaries)
    bs = source.boundaries
    if len(bd) != len(bs):
        raise TransferError("target must have the same number of regions as the source")
    segs = []
    for i, seg in enumerate(source.segments):
        scale = (bs[i + 1] - bs[i]) / (bd[i + 1] - bd[i])
        shift = bs[i] - scale * bd[i]
        segs.append(seg.compose(scale, shift))
    return CostCurve(bd, tuple(segs))


def _tail_ratio(source_areas: np.ndarray, source_widths: np.ndarray, bounds: list[float], m: int) -> float:
    # region i of the target is source region i stretched by its width ratio,
    # so its area is the source area times that ratio
    areas = source_areas * np.diff(bounds) / source_widths
    return float(areas[m:].sum() / areas[0])


def _bisect_decreasing(fn: Callable[[float], float], target: float, lo: float, hi: float,
                       tol: float, rtol: float) -> float:
    f_lo, f_hi = fn(lo) - target, fn(hi) - target
    if f_lo < 0 or f_hi > 0:
        raise NoRootError(f"no root in interval [{lo:.6g}, {hi:.6g}]: ratio spans "
                          f"[{f_hi + target:.6g}, {f_lo + target:.6g}], need {target:.6g}")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        f_mid = fn(mid) - target
        if hi - lo < tol and abs(f_mid) <= rtol * abs(target):
            return mid
        if f_mid > 0:
            lo = mid
        else:
            hi = mid
        if not lo < 0.5 * (lo + hi) < hi:
            return 0.5 * (lo + hi)
    return 0.5 * (lo + hi)


def solve_boundaries(problem: TransferProblem, beta_target) -> TransferSolution:
    """Place the target's internal boundaries so its ratios equal ``beta_target``.

    Boundary ``m`` solves ``sum(beta[m:]) = area(d^m, d^K) / area(region 1)``,
    which decreases strictly in ``d^m``. Roots are searched at least
    ``boundary_tol`` away from the neighbouring boundaries. With more than two
    regions the equations are coupled and are swept from ``m = K-1`` down to
    ``1`` until no boundary moves by more than ``boundary_tol``.
    """
    source = problem.source
    psi = as_beta_vector(beta_target)
    K = source.K
    if K < 2:
        raise TransferError("transfer needs at least two regions")
    if len(psi) != K:
        raise TransferError(f"beta_target has {len(psi)} entries, curve has {K} regions")
    if (psi <= 0).any():
        raise TransferError("beta_target entries must be > 0")
    psi = psi / psi[0]
    tol = problem.boundary_tol
    a, b = problem.target_start, problem.target_end
    bs = np.array(source.boundaries)
    bounds = [float(x) for x in a + (bs - bs[0]) * (b - a) / (bs[-1] - bs[0])]
    bounds[0], bounds[-1] = float(a), float(b)
    tails = [float(psi[m:].sum()) for m in range(K)]
    src_areas = region_areas(source)
    src_widths = np.diff(bs)

    sweeps = 0
    for sweeps in range(1, problem.max_sweeps + 1):
        moved = 0.0
        for m in range(K - 1, 0, -1):
            lo, hi = bounds[m - 1] + tol, bounds[m + 1] - tol
            if not lo < hi:
                raise NoRootError(f"interval for boundary {m} narrower than tolerance")

            def ratio(d, m=m):
                trial = list(bounds)
                trial[m] = d
                return _tail_ratio(src_areas, src_widths, trial, m)

            if lo <= bounds[m] <= hi and \
                    abs(ratio(bounds[m]) - tails[m]) <= problem.residual_tol * tails[m]:
                new = bounds[m]
            else:
                new = _bisect_decreasing(ratio, tails[m], lo, hi, tol, problem.residual_tol)
            moved = max(moved, abs(new - bounds[m]))
            bounds[m] = float(new)
        if K == 2:
            break
        if moved < tol:
            worst = max(abs(_tail_ratio(src_areas, src_widths, bounds, m) - tails[m]) / tails[m]
                        for m in range(1, K))
            if worst <= 10 * problem.residual_tol:
                break
    else:
        raise NonConvergenceError("boundary sweep did not settle", moved)

    curve = compose_target_curve(source, bounds)
    achieved = likelihood_ratios(curve).betas
    src_beta = likelihood_ratios(source).betas
    return TransferSolution(src_beta, psi, tuple(bounds), curve,
                            sym_kl(src_beta, psi), achieved, sweeps=sweeps)


def transfer(problem: TransferProblem) -> TransferSolution:
    source_density = likelihood_ratios(problem.source)
    sol = solve_beta(source_density.betas, problem.epsilon, problem.alpha, problem.seed)
    out = solve_boundaries(problem, sol.psi)
    return TransferSolution(out.source_beta, out.beta_target, out.boundaries, out.curve,
                            sol.divergence, out.achieved_beta, sol.iterations, out.sweeps)


def two_region_parameters(solution: TransferSolution) -> dict[str, float]:
    """``d`` and cap of a two-region solution, for the reward config keys."""
    if len(solution.boundaries) != 3:
        raise TransferError("two-region parameters need exactly one internal boundary")
    return {"reward.d": solution.boundaries[1], "reward.t_cap": solution.boundaries[2]}
