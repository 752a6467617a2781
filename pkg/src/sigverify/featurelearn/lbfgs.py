"""Limited-memory BFGS with a strong-Wolfe line search (bracket + zoom)."""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class LbfgsResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    n_iter: int
    n_evals: int
    trace: list = field(default_factory=list)
    status: str = "max_iter"  # max_iter | converged | no_progress | line_search_failed

    @property
    def success(self) -> bool:
        return self.status != "line_search_failed"


def _cubic_min(t1, f1, g1, t2, f2, g2, lo, hi):
    """Minimiser of the cubic through two (point, value, slope) triples, clipped to [lo, hi]."""
    if t1 == t2:
        return min(max(t1, lo), hi)
    d1 = g1 + g2 - 3.0 * (f1 - f2) / (t1 - t2)
    disc = d1 * d1 - g1 * g2
    if disc < 0 or not math.isfinite(disc):
        return 0.5 * (lo + hi)
    d2 = math.copysign(math.sqrt(disc), t2 - t1)
    denom = g2 - g1 + 2.0 * d2
    if denom == 0:
        return 0.5 * (lo + hi)
    t = t2 - (t2 - t1) * (g2 + d2 - d1) / denom
    if not math.isfinite(t):
        return 0.5 * (lo + hi)
    return min(max(t, lo), hi)


def strong_wolfe(fun, x, t, d, f0, g0, c1=1e-4, c2=0.9, max_evals=25, tol_change=1e-12):
    """Find a step satisfying the strong Wolfe conditions along ``d``.

    Returns ``(t, f, g, n_evals, ok)``. When no Wolfe point is found but some
    trial step gave sufficient decrease, the best such step is returned with
    ``ok=True``; ``ok=False`` means no trial step decreased the objective.
    """
    gtd0 = float(g0 @ d)
    dmax = float(np.max(np.abs(d)))
    n = 0
    best = None  # (f, t, g) with Armijo decrease

    def evaluate(step):
        nonlocal n, best
        f, g = fun(x + step * d)
        n += 1
        gtd = float(g @ d)
        if math.isfinite(f) and f <= f0 + c1 * step * gtd0 and (best is None or f < best[0]):
            best = (f, step, g)
        return f, g, gtd

    t_prev, f_prev, g_prev, gtd_prev = 0.0, f0, g0, gtd0
    bracket = None
    while n < max_evals:
        f, g, gtd = evaluate(t)
        if not math.isfinite(f):
            bracket = [(t_prev, f_prev, g_prev, gtd_prev), (t, math.inf, g, math.nan)]
            break
        if f > f0 + c1 * t * gtd0 or (n > 1 and f >= f_prev):
            bracket = [(t_prev, f_prev, g_prev, gtd_prev), (t, f, g, gtd)]
            break
        if abs(gtd) <= -c2 * gtd0:
            return t, f, g, n, True
        if gtd >= 0:
            bracket = [(t_prev, f_prev, g_prev, gtd_prev), (t, f, g, gtd)]
            break
        t_next = _cubic_min(t_prev, f_prev, gtd_prev, t, f, gtd,
                            t + 0.01 * (t - t_prev), 10.0 * t)
        t_prev, f_prev, g_prev, gtd_prev = t, f, g, gtd
        t = t_next

    if bracket is not None:
        # zoom: bracket[0] is always the low (best Armijo) end
        lo, hi = bracket
        if hi[1] < lo[1]:
            lo, hi = hi, lo
        while n < max_evals:
            if abs(hi[0] - lo[0]) * dmax < tol_change:
                break
            a, b = sorted((lo[0], hi[0]))
            if math.isfinite(hi[1]) and math.isfinite(hi[3]):
                t = _cubic_min(lo[0], lo[1], lo[3], hi[0], hi[1], hi[3], a, b)
            else:
                t = 0.5 * (a + b)
            # keep the trial away from the bracket ends
            w = b - a
            if min(t - a, b - t) < 0.1 * w:
                t = a + 0.1 * w if abs(t - a) < abs(b - t) else b - 0.1 * w
            f, g, gtd = evaluate(t)
            if not math.isfinite(f) or f > f0 + c1 * t * gtd0 or f >= lo[1]:
                hi = (t, f if math.isfinite(f) else math.inf, g, gtd)
            else:
                if abs(gtd) <= -c2 * gtd0:
                    return t, f, g, n, True
                if gtd * (hi[0] - lo[0]) >= 0:
                    hi = lo
                lo = (t, f, g, gtd)

    if best is not None and best[0] < f0:
        return best[1], best[0], best[2], n, True
    return 0.0, f0, g0, n, False


def minimize_lbfgs(fun: Callable, x0: np.ndarray, max_iter: int = 700, history: int = 20,
                   gtol: float = 1e-8, c1: float = 1e-4, c2: float = 0.9, max_ls: int = 25,
                   callback: Optional[Callable] = None) -> LbfgsResult:
    """Minimise ``fun(x) -> (f, grad)`` with L-BFGS.

    ``trace`` holds the objective at the start point and after every accepted
    iterate, so it is non-increasing. ``callback(it, x, f)`` runs after each
    accepted iterate.
    """
    x = np.array(x0, dtype=np.float64)
    f, g = fun(x)
    n_evals = 1
    trace = [float(f)]
    S: deque = deque(maxlen=history)
    Y: deque = deque(maxlen=history)
    RHO: deque = deque(maxlen=history)
    status = "max_iter"
    it = 0

    if np.max(np.abs(g)) <= gtol:
        return LbfgsResult(x, float(f), g, 0, n_evals, trace, "converged")

    while it < max_iter:
        # two-loop recursion
        q = -g
        alphas = []
        for s, y, rho in zip(reversed(S), reversed(Y), reversed(RHO)):
            a = rho * float(s @ q)
            alphas.append(a)
            q = q - a * y
        if S:
            q = q * (float(S[-1] @ Y[-1]) / float(Y[-1] @ Y[-1]))
        for (s, y, rho), a in zip(zip(S, Y, RHO), reversed(alphas)):
            b = rho * float(y @ q)
            q = q + (a - b) * s
        d = q
        gtd = float(g @ d)
        if not gtd < 0:
            S.clear(), Y.clear(), RHO.clear()
            d = -g
            gtd = float(g @ d)

        t0 = 1.0 if S else min(1.0, 1.0 / float(np.sum(np.abs(g))))
        t, f_new, g_new, nls, ok = strong_wolfe(fun, x, t0, d, f, g, c1, c2, max_ls)
        n_evals += nls
        if not ok:
            status = "line_search_failed"
            log.warning("line search failed at iteration %d; keeping last iterate", it + 1)
            break

        s = t * d
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-10 * float(s @ s) ** 0.5 * float(y @ y) ** 0.5:
            S.append(s)
            Y.append(y)
            RHO.append(1.0 / sy)
        x = x + s
        it += 1
        f_old, f, g = f, float(f_new), g_new
        trace.append(f)
        if callback is not None:
            callback(it, x, f)
        if np.max(np.abs(g)) <= gtol:
            status = "converged"
            break
        if f == f_old or not np.any(s):
            status = "no_progress"
            break

    return LbfgsResult(x, float(f), g, it, n_evals, trace, status)
