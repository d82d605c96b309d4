"""Hot inner loops.

Every kernel exists twice: a numba ``@njit`` version and a pure-numpy
version with the same signature and semantics.  The numba path is used when
numba imports and the environment variable ``CONDEXP_NUMBA`` is not set to a
false value (``0``, ``false``, ``no``, ``off``).  The choice is made once, at
import time; both implementations stay reachable through :data:`BACKENDS`
for benchmarking and cross-checking.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None


def _flag_enabled(name, default="1"):
    return os.environ.get(name, default).strip().lower() not in ("0", "false", "no", "off", "")


USE_NUMBA = HAVE_NUMBA and _flag_enabled("CONDEXP_NUMBA")

# Column order of the norm tracks written by ``iterate``.
NORM_ORDERS = (1.0, 2.0, 4.0, np.inf)


# --------------------------------------------------------------------------
# numpy implementations
# --------------------------------------------------------------------------

def _np_block_average(x, w, labels, nblocks):
    s = np.bincount(labels, weights=w * x, minlength=nblocks)
    m = np.bincount(labels, weights=w, minlength=nblocks)
    avg = np.zeros(nblocks)
    np.divide(s, m, out=avg, where=m > 0)
    return avg[labels]


def _np_iterate(x0, w, pos, labels, inv_mass, ks, need, pred, has_pred, eps, window,
                stop_early, d1, d2, dinf, dist, norms, m4, out_iter):
    x = x0.copy()
    wp = w[pos]
    nb = inv_mass.shape[1]
    store = out_iter.shape[0] > 0

    def record(row, v):
        a = np.abs(v[pos])
        norms[row, 0] = wp @ a
        norms[row, 1] = np.sqrt(wp @ (a * a))
        m4[row] = wp @ (a ** 4)
        norms[row, 2] = m4[row] ** 0.25
        norms[row, 3] = a.max() if a.size else 0.0

    record(0, x)
    if store:
        out_iter[0] = x
    run = 0
    converged_at = -1
    n_done = 0
    last = np.full(labels.shape[0], -1)
    for n in range(ks.shape[0]):
        k = ks[n]
        last[k] = n
        lab = labels[k]
        s = np.bincount(lab, weights=w * x, minlength=nb)
        new = s[lab] * inv_mass[k, lab]
        diff = np.abs(new - x)[pos]
        d1[n] = wp @ diff
        d2[n] = np.sqrt(wp @ (diff * diff))
        dinf[n] = diff.max() if diff.size else 0.0
        x = new
        if has_pred:
            dist[n] = np.abs(x - pred)[pos].max() if diff.size else 0.0
        record(n + 1, x)
        if store:
            out_iter[n + 1] = x
        n_done = n + 1
        run = run + 1 if dinf[n] <= eps else 0
        if converged_at < 0 and run >= window and np.all(last[need] > n - run):
            converged_at = n + 1
            if stop_early:
                break
    return n_done, converged_at, x


def _np_components(labels, n):
    """Connected components of 'same block in some field' via min-label propagation."""
    comp = np.arange(n)
    if labels.shape[0] == 0:
        return comp
    while True:
        before = comp
        for lab in labels:
            m = np.full(lab.max() + 1, n, dtype=np.int64)
            np.minimum.at(m, lab, comp)
            comp = m[lab]
        if np.array_equal(comp, before):
            return comp


def _np_extract_channel(words, nbits_total, k):
    step = 1 << (k - 1)
    positions = np.arange(step, nbits_total + 1, 2 * step, dtype=np.uint64)
    nb = positions.shape[0]
    out = np.zeros(words.shape[0], dtype=np.uint64)
    for i, pos in enumerate(positions):
        bit = (words >> np.uint64(nbits_total - int(pos))) & np.uint64(1)
        out |= bit << np.uint64(nb - 1 - i)
    return out


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _nb_block_average(x, w, labels, nblocks):
        s = np.zeros(nblocks)
        m = np.zeros(nblocks)
        for i in range(x.shape[0]):
            s[labels[i]] += w[i] * x[i]
            m[labels[i]] += w[i]
        out = np.empty(x.shape[0])
        for i in range(x.shape[0]):
            b = labels[i]
            out[i] = s[b] / m[b] if m[b] > 0.0 else 0.0
        return out

    @numba.njit(cache=True)
    def _nb_record(row, x, w, pos, norms, m4):
        s1 = 0.0
        s2 = 0.0
        s4 = 0.0
        mx = 0.0
        for i in range(x.shape[0]):
            if pos[i]:
                a = abs(x[i])
                s1 += w[i] * a
                s2 += w[i] * a * a
                s4 += w[i] * a * a * a * a
                if a > mx:
                    mx = a
        norms[row, 0] = s1
        norms[row, 1] = np.sqrt(s2)
        norms[row, 2] = s4 ** 0.25
        norms[row, 3] = mx
        m4[row] = s4

    @numba.njit(cache=True)
    def _nb_iterate(x0, w, pos, labels, inv_mass, ks, need, pred, has_pred, eps, window,
                    stop_early, d1, d2, dinf, dist, norms, m4, out_iter):
        n_atoms = x0.shape[0]
        x = x0.copy()
        new = np.empty(n_atoms)
        s = np.zeros(inv_mass.shape[1])
        store = out_iter.shape[0] > 0
        _nb_record(0, x, w, pos, norms, m4)
        if store:
            out_iter[0, :] = x
        run = 0
        converged_at = -1
        n_done = 0
        last = np.full(labels.shape[0], -1)
        for n in range(ks.shape[0]):
            k = ks[n]
            last[k] = n
            s[:] = 0.0
            for i in range(n_atoms):
                s[labels[k, i]] += w[i] * x[i]
            a1 = 0.0
            a2 = 0.0
            am = 0.0
            dm = 0.0
            for i in range(n_atoms):
                b = labels[k, i]
                v = s[b] * inv_mass[k, b]
                new[i] = v
                if pos[i]:
                    dd = abs(v - x[i])
                    a1 += w[i] * dd
                    a2 += w[i] * dd * dd
                    if dd > am:
                        am = dd
                    if has_pred:
                        e = abs(v - pred[i])
                        if e > dm:
                            dm = e
            for i in range(n_atoms):
                x[i] = new[i]
            d1[n] = a1
            d2[n] = np.sqrt(a2)
            dinf[n] = am
            if has_pred:
                dist[n] = dm
            _nb_record(n + 1, x, w, pos, norms, m4)
            if store:
                out_iter[n + 1, :] = x
            n_done = n + 1
            if am <= eps:
                run += 1
            else:
                run = 0
            covered = True
            for j in range(need.shape[0]):
                if need[j] and last[j] <= n - run:
                    covered = False
            if converged_at < 0 and run >= window and covered:
                converged_at = n + 1
                if stop_early:
                    break
        return n_done, converged_at, x

    @numba.njit(cache=True)
    def _nb_find(parent, i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            nxt = parent[i]
            parent[i] = root
            i = nxt
        return root

    @numba.njit(cache=True)
    def _nb_components(labels, n):
        parent = np.arange(n)
        for f in range(labels.shape[0]):
            first = np.full(n, -1, dtype=np.int64)
            for i in range(n):
                b = labels[f, i]
                if first[b] < 0:
                    first[b] = i
                else:
                    ra = _nb_find(parent, first[b])
                    rb = _nb_find(parent, i)
                    if ra != rb:
                        # smaller index becomes the root
                        if ra < rb:
                            parent[rb] = ra
                        else:
                            parent[ra] = rb
        out = np.empty(n, dtype=np.int64)
        for i in range(n):
            out[i] = _nb_find(parent, i)
        return out

    @numba.njit(cache=True)
    def _nb_extract_channel(words, nbits_total, k):
        step = 1 << (k - 1)
        nb = 0
        for p in range(step, nbits_total + 1, 2 * step):
            nb += 1
        out = np.zeros(words.shape[0], dtype=np.uint64)
        one = np.uint64(1)
        for j in range(words.shape[0]):
            w = words[j]
            acc = np.uint64(0)
            for p in range(step, nbits_total + 1, 2 * step):
                acc = (acc << one) | ((w >> np.uint64(nbits_total - p)) & one)
            out[j] = acc
        return out


BACKENDS = {
    "numpy": SimpleNamespace(
        block_average=_np_block_average,
        iterate=_np_iterate,
        components=_np_components,
        extract_channel=_np_extract_channel,
    ),
}
if HAVE_NUMBA:
    BACKENDS["numba"] = SimpleNamespace(
        block_average=_nb_block_average,
        iterate=_nb_iterate,
        components=_nb_components,
        extract_channel=_nb_extract_channel,
    )

BACKEND = "numba" if USE_NUMBA else "numpy"
_active = BACKENDS[BACKEND]

block_average = _active.block_average
iterate = _active.iterate
components = _active.components
extract_channel = _active.extract_channel
