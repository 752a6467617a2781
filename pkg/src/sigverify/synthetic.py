"""Parametric synthetic signatures for tests and desk-scale experiments.

Each template integer fixes a family of pen strokes built from a few
sinusoidal harmonics. ``jitter`` scales every random perturbation, so
``jitter=0`` reproduces the template exactly whatever the seed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .signatures import GENUINE, SKILLED_FORGERY, DatasetLayout, RawSignature, serialize_svc2004

N_POINTS = 240
GAP_POINTS = 6
SAMPLE_MS = 10.0
FORGERY_TEMPLATE_OFFSET = 10_000
CORPUS_TEMPLATE_OFFSET = 50_000
_TEMPLATE_STREAM = 0x5EED


def _template(template: int):
    rng = np.random.default_rng([_TEMPLATE_STREAM, int(template)])
    n_strokes = int(rng.integers(1, 4))
    weights = rng.uniform(0.6, 1.4, n_strokes)
    budget = N_POINTS - GAP_POINTS * (n_strokes - 1)
    counts = np.floor(weights / weights.sum() * budget).astype(int)
    counts[-1] += budget - counts.sum()
    strokes = []
    for n in counts:
        strokes.append(dict(
            n=int(n),
            width=rng.uniform(1500, 3500),
            base=rng.uniform(-400, 400),
            ax=rng.uniform(100, 600, 3), fx=rng.integers(1, 6, 3) + rng.uniform(0, 1, 3),
            px=rng.uniform(0, 2 * np.pi, 3),
            ay=rng.uniform(200, 1200, 3), fy=rng.integers(1, 6, 3) + rng.uniform(0, 1, 3),
            py=rng.uniform(0, 2 * np.pi, 3),
            gap=rng.uniform(200, 600),
            p0=rng.uniform(250, 450), p1=rng.uniform(150, 400),
            pa=rng.uniform(20, 120), pf=rng.uniform(1, 4), pp=rng.uniform(0, 2 * np.pi),
        ))
    return strokes


def generate_synthetic_signature(seed: int, user_template: int, jitter: float,
                                 user_id: str = "", label: str = GENUINE) -> RawSignature:
    """Deterministic synthetic signature for ``(seed, user_template, jitter)``."""
    if not 0.0 <= jitter <= 1.0:
        raise ValueError("jitter must lie in [0, 1]")
    strokes = _template(user_template)
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, int(user_template) & 0xFFFFFFFF])

    xs, ys, ps, downs = [], [], [], []
    x0 = 0.0
    for j, st in enumerate(strokes):
        s = np.linspace(0.0, 1.0, st["n"])
        ax = st["ax"] * (1 + jitter * rng.standard_normal(3))
        ay = st["ay"] * (1 + jitter * rng.standard_normal(3))
        px = st["px"] + 0.5 * jitter * rng.standard_normal(3)
        py = st["py"] + 0.5 * jitter * rng.standard_normal(3)
        width = st["width"] * (1 + 0.5 * jitter * rng.standard_normal())
        x = x0 + width * s + (ax[:, None] * np.sin(2 * np.pi * st["fx"][:, None] * s + px[:, None])).sum(0)
        y = st["base"] + (ay[:, None] * np.sin(2 * np.pi * st["fy"][:, None] * s + py[:, None])).sum(0)
        p = st["p0"] + st["p1"] * np.sqrt(np.sin(np.pi * s)) + st["pa"] * np.sin(2 * np.pi * st["pf"] * s + st["pp"])
        p = p * (1 + jitter * rng.standard_normal())

        if j > 0:
            # pen-up travel from the previous stroke end to this stroke start
            lam = np.linspace(0, 1, GAP_POINTS + 2)[1:-1]
            xs.append(xs[-1][-1] + lam * (x[0] - xs[-1][-1]))
            ys.append(ys[-1][-1] + lam * (y[0] - ys[-1][-1]))
            ps.append(np.zeros(GAP_POINTS))
            downs.append(np.zeros(GAP_POINTS, bool))
        xs.append(x)
        ys.append(y)
        ps.append(p)
        downs.append(np.ones(st["n"], bool))
        x0 = x[-1] + st["gap"]

    x = np.concatenate(xs)
    y = np.concatenate(ys)
    p = np.concatenate(ps)
    down = np.concatenate(downs)
    n = len(x)

    # global slant / scale distortion about the centroid
    ang = 0.3 * jitter * rng.standard_normal()
    sx, sy = 1 + 0.5 * jitter * rng.standard_normal(2)
    shear = 0.2 * jitter * rng.standard_normal()
    cx, cy = x.mean(), y.mean()
    u, v = (x - cx) * sx, (y - cy) * sy
    u = u + shear * v
    c, s_ = np.cos(ang), np.sin(ang)
    x = cx + c * u - s_ * v
    y = cy + s_ * u + c * v
    x = x + 30 * jitter * rng.standard_normal(n)
    y = y + 30 * jitter * rng.standard_normal(n)

    speed = 1 + jitter * rng.standard_normal()
    dt = SAMPLE_MS * max(speed, 0.2) * np.maximum(1 + 0.5 * jitter * rng.standard_normal(n - 1), 0.1)
    t = np.concatenate([[0.0], np.cumsum(dt)])
    p = np.where(down, np.maximum(p + 40 * jitter * rng.standard_normal(n), 1.0), 0.0)

    x = np.round(x + 5000)
    y = np.round(y + 5000)
    t = np.round(t)
    p = np.round(p)
    p[down] = np.maximum(p[down], 1.0)
    return RawSignature(x=x, y=y, t=t, pen_down=down, pressure=p,
                        azimuth=np.zeros(n), altitude=np.zeros(n),
                        user_id=user_id, label=label)


def _sample_seed(seed, *parts) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, parts)]).generate_state(1)[0])


def testkit_layout(n_genuine: int, n_forgery: int) -> DatasetLayout:
    return DatasetLayout(genuine_per_user=n_genuine, forgery_per_user=n_forgery)


def make_testkit(n_users=10, n_genuine=16, n_forgery=16, jitter=0.05, seed=0,
                 template_offset=0) -> dict:
    """In-memory testkit: ``{user_id: (genuine list, forgery list)}``.

    User ``u`` signs with template ``template_offset + u``; its forgeries are
    drawn from a different template so every forgery is structurally distinct.
    """
    out = {}
    for u in range(1, n_users + 1):
        tmpl = template_offset + u
        gen = [generate_synthetic_signature(_sample_seed(seed, tmpl, k, 0), tmpl, jitter,
                                            user_id=str(u), label=GENUINE)
               for k in range(n_genuine)]
        ftmpl = FORGERY_TEMPLATE_OFFSET + tmpl
        forg = [generate_synthetic_signature(_sample_seed(seed, tmpl, k, 1), ftmpl, jitter,
                                             user_id=str(u), label=SKILLED_FORGERY)
                for k in range(n_forgery)]
        out[str(u)] = (gen, forg)
    return out


def write_testkit(root, n_users=10, n_genuine=16, n_forgery=16, jitter=0.05, seed=0,
                  template_offset=0) -> DatasetLayout:
    """Write a testkit tree in svc2004 format (``U{u}S{k}.TXT``) and return its layout."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    kit = make_testkit(n_users, n_genuine, n_forgery, jitter, seed, template_offset)
    for u, (gen, forg) in kit.items():
        for k, sig in enumerate(gen + forg, start=1):
            (root / f"U{u}S{k}.TXT").write_text(serialize_svc2004(sig))
    return testkit_layout(n_genuine, n_forgery)


def write_corpus(root, n_templates=20, per_template=10, jitter=0.05, seed=0) -> DatasetLayout:
    """Unlabeled feature-learning corpus from templates disjoint from the testkit users."""
    return write_testkit(root, n_users=n_templates, n_genuine=per_template, n_forgery=0,
                         jitter=jitter, seed=seed, template_offset=CORPUS_TEMPLATE_OFFSET)
