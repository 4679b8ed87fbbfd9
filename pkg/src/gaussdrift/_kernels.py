"""Hot loops: Dormand-Prince stepping, the experiment right-hand side and pairwise
Hilbert-Schmidt products.

Every kernel exists twice: a numba ``@njit`` version and a pure-numpy version.
Set ``GAUSSDRIFT_DISABLE_NUMBA=1`` to force the numpy path (numba is also
skipped when it cannot be imported).  Both paths are tested against each other.
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

NUMBA_ENABLED = numba is not None and os.environ.get("GAUSSDRIFT_DISABLE_NUMBA", "0") in ("", "0")

STATUS_OK = 0
STATUS_UNDERFLOW = 1
STATUS_NONFINITE = 2

# Dormand-Prince 5(4)
C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = np.array([
    [0, 0, 0, 0, 0, 0],
    [1 / 5, 0, 0, 0, 0, 0],
    [3 / 40, 9 / 40, 0, 0, 0, 0],
    [44 / 45, -56 / 15, 32 / 9, 0, 0, 0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0, 0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
])
B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
E = np.array([71 / 57600, 0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0


def state_length(dim: int, has_ledger: bool) -> int:
    return 2 * dim + dim * (dim + 1) + 2 + (2 * dim if has_ledger else 0)


def _err_norm(err, y0, y1, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    return np.max(np.abs(err) / scale)


def dopri_numpy(f, y, t0, t1, rtol, atol, hmax, h):
    """Advance ``y' = f(y)`` from t0 to t1 (autonomous).  Returns (y, h, steps, status)."""
    y = np.array(y, dtype=float)
    t = t0
    if t1 <= t0:
        return y, h, 0, STATUS_OK
    h = min(h, hmax)
    k = np.empty((7, y.size))
    k[0] = f(y)
    steps = 0
    while t < t1:
        # h is the controller's proposal; a final step clipped to land on t1 may be
        # shorter (even tiny) without counting as underflow
        hmin = 1e-12 * max(1.0, abs(t))
        if h < hmin:
            return y, h, steps, STATUS_UNDERFLOW
        last = t + h >= t1
        hs = t1 - t if last else h
        for s in range(1, 7):
            k[s] = f(y + hs * (A[s, :s] @ k[:s]))
        y_new = y + hs * (B[:6] @ k[:6])
        err = hs * (E @ k)
        en = _err_norm(err, y, y_new, rtol, atol)
        if not np.isfinite(en):
            h = hs * MIN_FACTOR
            if h < hmin:
                return y, h, steps, STATUS_NONFINITE
            continue
        if en <= 1.0:
            t = t1 if last else t + hs
            y = y_new
            k[0] = k[6]
            steps += 1
            fac = MAX_FACTOR if en == 0 else min(MAX_FACTOR, max(MIN_FACTOR, SAFETY * en ** -0.2))
            if not last:
                h = min(hs * fac, hmax)
            elif fac < 1:
                h = min(h, hs * fac)
        else:
            h = hs * max(MIN_FACTOR, SAFETY * en ** -0.2)
    return y, h, steps, STATUS_OK


# ---------------------------------------------------------------------------
# experiment right-hand side, numba version

def _exp_local(x, dim, eps, w, m_env, g, hh):
    """Value, gradient (into g) and half-Hessian (into hh) of the experiment model."""
    nb = dim // 6 - 1
    hh[:, :] = 0.0
    val = 0.0
    for a in range(3):
        r = x[2 * a]
        p = x[2 * a + 1]
        val += 0.5 * (r * r + p * p)
        g[2 * a] = r
        g[2 * a + 1] = p
        hh[2 * a, 2 * a] = 0.5
        hh[2 * a + 1, 2 * a + 1] = 0.5
    w2 = w * w
    sep = np.empty(3)
    for j in range(nb):
        o = 6 * (j + 1)
        s2 = 0.0
        for a in range(3):
            sep[a] = x[2 * a] - x[o + 2 * a]
            s2 += sep[a] * sep[a]
        pot = eps * np.exp(-s2 / (2.0 * w2))
        val += pot
        for a in range(3):
            p = x[o + 2 * a + 1]
            val += 0.5 * p * p / m_env
            f = -pot * sep[a] / w2
            g[2 * a] += f
            g[o + 2 * a] = -f
            g[o + 2 * a + 1] = p / m_env
            hh[o + 2 * a + 1, o + 2 * a + 1] = 0.5 / m_env
            for b in range(3):
                c = pot * sep[a] * sep[b] / (w2 * w2)
                if a == b:
                    c -= pot / w2
                c *= 0.5
                hh[2 * a, 2 * b] += c
                hh[o + 2 * a, o + 2 * b] += c
                hh[2 * a, o + 2 * b] -= c
                hh[o + 2 * a, 2 * b] -= c
    return val


def _sym_left(m, out):
    # out = S @ m
    n = m.shape[0] // 2
    for i in range(n):
        out[2 * i, :] = m[2 * i + 1, :]
        out[2 * i + 1, :] = -m[2 * i, :]


def _experiment_rhs_nb(y, dim, has_ledger, eps, w, m_env, hbar, iu, ju, dy):
    nt = iu.size
    xa = y[0:dim]
    xb = y[dim:2 * dim]
    sig = np.empty((dim, dim), dtype=np.complex128)
    for q in range(nt):
        v = y[2 * dim + q] + 1j * y[2 * dim + nt + q]
        sig[iu[q], ju[q]] = v
        sig[ju[q], iu[q]] = v
    ga = np.empty(dim)
    gb = np.empty(dim)
    ha = np.empty((dim, dim))
    hb = np.empty((dim, dim))
    va = _exp_local(xa, dim, eps, w, m_env, ga, ha)
    vb = _exp_local(xb, dim, eps, w, m_env, gb, hb)
    la = -va
    lb = -vb
    for i in range(dim // 2):
        la += xa[2 * i + 1] * ga[2 * i + 1]
        lb += xb[2 * i + 1] * gb[2 * i + 1]
    hp = 0.5 * (ha + hb)
    hm = ha - hb
    for i in range(dim // 2):
        dy[2 * i] = ga[2 * i + 1]
        dy[2 * i + 1] = -ga[2 * i]
        dy[dim + 2 * i] = gb[2 * i + 1]
        dy[dim + 2 * i + 1] = -gb[2 * i]
    hs = np.dot(hp.astype(np.complex128), sig)
    amat = np.empty((dim, dim), dtype=np.complex128)
    _sym_left(hs, amat)
    hms = np.dot(hm.astype(np.complex128), sig)
    shm = np.dot(sig, hms)
    # shs = S (S hm)^T = -S hm S
    hmT = np.empty((dim, dim))
    _sym_left(hm, hmT)
    shs = np.empty((dim, dim))
    _sym_left(hmT.T.copy(), shs)
    tr = 0.0 + 0.0j
    for i in range(dim):
        tr += hms[i, i]
    for q in range(nt):
        i = iu[q]
        j = ju[q]
        v = 2.0 * (amat[i, j] + amat[j, i]) - (2j / hbar) * shm[i, j] + (0.5j * hbar) * shs[i, j]
        dy[2 * dim + q] = v.real
        dy[2 * dim + nt + q] = v.imag
    base = 2 * dim + 2 * nt
    dphi = (la - lb - tr) / hbar
    dy[base] = dphi.real
    dy[base + 1] = -dphi.imag
    if has_ledger:
        o = np.empty(dim, dtype=np.complex128)
        for i in range(dim):
            o[i] = y[base + 2 + i] + 1j * y[base + 2 + dim + i]
        d = xa - xb
        sd = np.empty(dim)
        for i in range(dim // 2):
            sd[2 * i] = d[2 * i + 1]
            sd[2 * i + 1] = -d[2 * i]
        cf = 0.5 * (xa + xb) + (1j / hbar) * np.dot(sig, sd.astype(np.complex128))
        oc = o.copy()
        ho = np.dot(hp.astype(np.complex128), oc)
        so = np.empty(dim, dtype=np.complex128)
        for i in range(dim // 2):
            so[2 * i] = ho[2 * i + 1]
            so[2 * i + 1] = -ho[2 * i]
        hmo = np.dot(hm.astype(np.complex128), oc)
        do = 2.0 * so - (2j / hbar) * np.dot(sig, hmo)
        ca = cf - xa
        cb = cf - xb
        gd = (ga - gb) + 2.0 * np.dot(ha.astype(np.complex128), ca) - 2.0 * np.dot(hb.astype(np.complex128), cb)
        de = -(1j / hbar) * (np.sum(gd * oc) + np.sum(oc * hmo))
        dy[base] += de.imag
        dy[base + 1] += de.real
        for i in range(dim):
            dy[base + 2 + i] = do[i].real
            dy[base + 2 + dim + i] = do[i].imag


def _dopri_experiment_nb(y, t0, t1, rtol, atol, hmax, h, dim, has_ledger, eps, w, m_env, hbar,
                         iu, ju, A, B, E):
    y = y.copy()
    n = y.size
    t = t0
    if t1 <= t0:
        return y, h, 0, 0
    h = min(h, hmax)
    k = np.empty((7, n))
    _experiment_rhs_nb(y, dim, has_ledger, eps, w, m_env, hbar, iu, ju, k[0])
    ytmp = np.empty(n)
    ynew = np.empty(n)
    steps = 0
    while t < t1:
        hmin = 1e-12 * max(1.0, abs(t))
        if h < hmin:
            return y, h, steps, 1
        last = t + h >= t1
        hs = t1 - t if last else h
        for s in range(1, 7):
            for i in range(n):
                acc = 0.0
                for q in range(s):
                    acc += A[s, q] * k[q, i]
                ytmp[i] = y[i] + hs * acc
            _experiment_rhs_nb(ytmp, dim, has_ledger, eps, w, m_env, hbar, iu, ju, k[s])
        en = 0.0
        finite = True
        for i in range(n):
            acc = 0.0
            ea = 0.0
            for q in range(7):
                acc += B[q] * k[q, i]
                ea += E[q] * k[q, i]
            ynew[i] = y[i] + hs * acc
            sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
            r = abs(hs * ea) / sc
            if not np.isfinite(r):
                finite = False
            elif r > en:
                en = r
        if not finite:
            h = hs * 0.2
            if h < hmin:
                return y, h, steps, 2
            continue
        if en <= 1.0:
            t = t1 if last else t + hs
            y[:] = ynew
            k[0, :] = k[6, :]
            steps += 1
            if en == 0.0:
                fac = 5.0
            else:
                fac = min(5.0, max(0.2, 0.9 * en ** -0.2))
            if not last:
                h = min(hs * fac, hmax)
            elif fac < 1.0:
                h = min(h, hs * fac)
        else:
            h = hs * max(0.2, 0.9 * en ** -0.2)
    return y, h, steps, 0


# ---------------------------------------------------------------------------
# pairwise Hilbert-Schmidt products

def _hs_row_nb(a, lam, lam_c, clc, log_pref, n_dof, hbar, out):
    M = lam.shape[0]
    D = lam.shape[1]
    K = np.empty((D, D), dtype=np.complex128)
    bvec = np.empty(D, dtype=np.complex128)
    c0 = n_dof * np.log(2 * np.pi * hbar) + n_dof * np.log(2 * np.pi)
    for b in range(M):
        for i in range(D):
            bvec[i] = lam_c[a, i] + np.conj(lam_c[b, i])
            for j in range(D):
                K[i, j] = lam[a, i, j] + np.conj(lam[b, i, j])
        # unpivoted LDL^T (complex symmetric), solve K z = bvec
        logdet = 0.0 + 0.0j
        for k in range(D):
            piv = K[k, k]
            logdet += np.log(piv)
            for i in range(k + 1, D):
                f = K[i, k] / piv
                for j in range(k + 1, D):
                    K[i, j] -= f * K[k, j]
                bvec[i] -= f * bvec[k]
        # back substitution on upper triangle, bvec now L^-1 b; quad = b^T K^-1 b
        z = np.empty(D, dtype=np.complex128)
        for i in range(D - 1, -1, -1):
            acc = bvec[i]
            for j in range(i + 1, D):
                acc -= K[i, j] * z[j]
            z[i] = acc / K[i, i]
        quad = 0.0 + 0.0j
        for i in range(D):
            quad += (lam_c[a, i] + np.conj(lam_c[b, i])) * z[i]
        val = (c0 + log_pref[a] + np.conj(log_pref[b]) - 0.5 * logdet + 0.5 * quad
               - 0.5 * (clc[a] + np.conj(clc[b])))
        out[b] = np.exp(val)


def _hs_matrix_nb(lam, lam_c, clc, log_pref, n_dof, hbar):
    M = lam.shape[0]
    out = np.empty((M, M), dtype=np.complex128)
    for a in range(M):
        _hs_row_nb(a, lam, lam_c, clc, log_pref, n_dof, hbar, out[a])
    return out


def hs_matrix_numpy(lam, lam_c, clc, log_pref, n_dof, hbar):
    """Matrix of ``Tr(rho_a rho_b^dagger)``; batched over b with numpy."""
    M, D, _ = lam.shape
    out = np.empty((M, M), dtype=complex)
    c0 = n_dof * np.log(2 * np.pi * hbar) + n_dof * np.log(2 * np.pi)
    lam_cc = lam.conj()
    lam_c_c = lam_c.conj()
    for a in range(M):
        K = lam[a][None] + lam_cc
        bv = lam_c[a][None] + lam_c_c
        z = np.linalg.solve(K, bv[..., None])[..., 0]
        quad = np.einsum("mi,mi->m", bv, z)
        # branch-safe log det: unpivoted elimination, batched
        Kw = K.copy()
        logdet = np.zeros(M, dtype=complex)
        for k in range(D):
            piv = Kw[:, k, k]
            logdet += np.log(piv)
            if k + 1 < D:
                f = Kw[:, k + 1:, k] / piv[:, None]
                Kw[:, k + 1:, k + 1:] -= f[:, :, None] * Kw[:, k, None, k + 1:]
        val = (c0 + log_pref[a] + log_pref.conj() - 0.5 * logdet + 0.5 * quad
               - 0.5 * (clc[a] + clc.conj()))
        out[a] = np.exp(val)
    return out


if NUMBA_ENABLED:
    _jit = numba.njit(cache=True, nogil=True)
    _exp_local = _jit(_exp_local)
    _sym_left = _jit(_sym_left)
    _experiment_rhs_nb = _jit(_experiment_rhs_nb)
    _dopri_experiment_nb = _jit(_dopri_experiment_nb)
    _hs_row_nb = _jit(_hs_row_nb)
    _hs_matrix_nb = _jit(_hs_matrix_nb)


def triangle(dim: int):
    iu, ju = np.triu_indices(dim)
    return iu.astype(np.int64), ju.astype(np.int64)


def experiment_rhs(y, dim, has_ledger, eps, w, m_env, hbar):
    """Numba experiment right-hand side (callable even without numba, slowly)."""
    iu, ju = triangle(dim)
    dy = np.empty_like(y)
    _experiment_rhs_nb(np.asarray(y, dtype=float), dim, has_ledger, eps, w, m_env, hbar, iu, ju, dy)
    return dy


def dopri_experiment(y, t0, t1, rtol, atol, hmax, h, dim, has_ledger, eps, w, m_env, hbar):
    iu, ju = triangle(dim)
    return _dopri_experiment_nb(np.asarray(y, dtype=float), t0, t1, rtol, atol, hmax, h, dim,
                                has_ledger, eps, w, m_env, hbar, iu, ju, A, B, E)


def hs_matrix(lam, lam_c, clc, log_pref, n_dof, hbar, use_numba=None):
    if use_numba is None:
        use_numba = NUMBA_ENABLED
    if use_numba:
        return _hs_matrix_nb(np.ascontiguousarray(lam, dtype=np.complex128),
                             np.ascontiguousarray(lam_c, dtype=np.complex128),
                             np.ascontiguousarray(clc, dtype=np.complex128),
                             np.ascontiguousarray(log_pref, dtype=np.complex128), n_dof, hbar)
    return hs_matrix_numpy(lam, lam_c, clc, log_pref, n_dof, hbar)
