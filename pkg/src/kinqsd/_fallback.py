"""Pure numpy propagation kernels.

Operation-for-operation mirror of the compiled module, vectorised over
particles instead of looping. For Langevin-form models both backends produce
the same trajectories up to floating point contraction differences; for
general models (arbitrary drift/diffusion callables) only this backend is
available.
"""
from __future__ import annotations

import numpy as np

from . import rng

GUARD = 1e12


def noise(plan, streams, k):
    """Standard normals consumed by one step of each particle in the batch."""
    count = 2 * plan.dim if plan.scheme_code == 0 else plan.dim
    return rng.normals(plan.seed, streams, k, count)


def apply_step(plan, q, p, z):
    """One scheme update for a batch given its normals.

    Returns ``(q_new, p_new, p_frozen)`` where ``p_frozen`` is the momentum
    that transported the position over the step (used for exit location).
    """
    d = plan.dim
    if plan.scheme_code == 0:
        f0 = plan.force
        h = 0.5 * plan.dt
        pf = plan.c_half * p + plan.ou * z[:, :d]
        pf = pf + h * f0(q)
        qn = q + plan.dt * pf
        pn = pf + h * f0(qn)
        pn = plan.c_half * pn + plan.ou * z[:, d:]
        return qn, pn, pf
    qn = q + plan.dt * p
    if plan.force is not None:
        pn = p + plan.dt * (plan.force(q) - plan.gamma * p) + plan.em_noise * z
    else:
        F = np.asarray(plan.model.drift(q, p), dtype=float)
        S = np.asarray(plan.model.diffusion(q, p), dtype=float)
        pn = p + plan.dt * F + plan.sqrt_dt * np.einsum("nij,nj->ni", S, z)
    return qn, pn, p.copy()


def _track(track, x0, q, p, rows):
    d = q.shape[1]
    v = (np.linalg.norm(q, axis=1) + np.linalg.norm(p, axis=1)) ** 2
    track[rows, 0] = np.maximum(track[rows, 0], v)
    disp = (np.linalg.norm(q - x0[rows, :d], axis=1)
            + np.linalg.norm(p - x0[rows, d:], axis=1))
    track[rows, 1] = np.maximum(track[rows, 1], disp)


def propagate(plan, q, p, streams, k_start, k_end, status, etime, outgoing, substep,
              track=None, x0=None, nthreads=1):
    """Advance every particle with ``status == 0`` over steps [k_start, k_end)."""
    region = plan.region
    bounded = plan.dom_code != 0
    idx = np.flatnonzero(status == 0)
    for k in range(k_start, k_end):
        if idx.size == 0:
            break
        qa, pa = q[idx], p[idx]
        with np.errstate(all="ignore"):
            qn, pn, pf = apply_step(plan, qa, pa, noise(plan, streams[idx], k))
            bad = ~(np.all(np.isfinite(qn) & np.isfinite(pn), axis=1)
                    & np.all(np.abs(qn) <= GUARD, axis=1)
                    & np.all(np.abs(pn) <= GUARD, axis=1))
        if bad.any():
            status[idx[bad]] = 2
        ok = ~bad
        if bounded:
            out = ok.copy()
            out[ok] = ~region.contains(qn[ok])
        else:
            out = np.zeros_like(ok)
        if out.any():
            rows = idx[out]
            q0, q1 = qa[out], qn[out]
            if plan.crossing_code == 0:
                s = region.crossing_fraction(q0, q1)
                qe = q0 + s[:, None] * (q1 - q0)
                substep[rows] = 1
            else:
                s = np.ones(len(rows))
                qe = q1
                substep[rows] = 0
            qb, nrm = region.project_with_normal(qe)
            pe = pf[out]
            q[rows] = qb
            p[rows] = pe
            pdotn = np.sum(pe * nrm, axis=1)
            outgoing[rows] = pdotn > plan.threshold * (1.0 + np.linalg.norm(pe, axis=1))
            etime[rows] = (k + s) * plan.dt
            status[rows] = 1
            if track is not None:
                _track(track, x0, qb, pe, rows)
        stay = ok & ~out
        rows = idx[stay]
        q[rows] = qn[stay]
        p[rows] = pn[stay]
        if track is not None:
            _track(track, x0, q[rows], p[rows], rows)
        idx = rows


def bin_index(q, p, lo, hi, nb):
    """Flat bin index per particle, -1 when outside the window."""
    x = np.concatenate([q, p], axis=1)
    inside = np.all((x >= lo) & (x < hi), axis=1)
    b = np.floor((x - lo) / (hi - lo) * nb).astype(np.int64)
    b = np.minimum(b, nb - 1)
    flat = np.zeros(len(x), dtype=np.int64)
    for a in range(x.shape[1]):
        flat = flat * nb[a] + b[:, a]
    return np.where(inside, flat, -1)


def histogram(q, p, lo, hi, nb, counts):
    b = bin_index(q, p, lo, hi, nb)
    b = np.where(b >= 0, b, len(counts) - 1)
    counts += np.bincount(b, minlength=len(counts)).astype(counts.dtype)


def fv_run(plan, q, p, streams, k_start, n_steps, record_block, lo, hi, nb, counts, kills,
           nthreads=1):
    """Fleming-Viot epochs; same contract as the compiled version."""
    n = q.shape[0]
    status = np.zeros(n, dtype=np.int8)
    outg = np.zeros(n, dtype=np.int8)
    sub = np.zeros(n, dtype=np.int8)
    et = np.zeros(n)
    for e in range(n_steps):
        k = k_start + e
        status[:] = 0
        propagate(plan, q, p, streams, k, k + 1, status, et, outg, sub)
        blown = np.flatnonzero(status == 2)
        if blown.size:
            return 2, e, int(blown[0])
        surv = np.flatnonzero(status == 0)
        dead = np.flatnonzero(status == 1)
        kills[e] = dead.size
        if surv.size == 0:
            return 1, e, -1
        if dead.size:
            u = rng.uniforms(plan.seed, np.arange(dead.size, dtype=np.uint64), k,
                             tag=rng.TAG_RESAMPLE)
            j = surv[(u * surv.size).astype(np.int64)]
            q[dead] = q[j]
            p[dead] = p[j]
        blk = record_block[e]
        if blk >= 0:
            histogram(q, p, lo, hi, nb, counts[blk])
    return 0, n_steps, -1

