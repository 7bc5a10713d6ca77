"""Compiled scalar and batch kernels.

Every routine takes the map as ``(a, L, tp)`` where ``tp`` packs the
trigonometric profile as ``[offset, K, cos_1..cos_K, sin_1..sin_K]``.
Marked points are passed as a sorted array ``mp`` with kind codes ``mk``
(0 critical, 1 singular).

Positions are lift coordinates.  Refinement works in "image coordinates":
an element is tracked through its current image, and points of the base
interval are reached through inverse branches, because base widths drop
far below double resolution after a handful of iterates.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi
_SPLIT = 134217729.0
_LOG_TINY = -700.0


# ---------------------------------------------------------------------------
# trigonometric polynomials with exact argument reduction in turns


@njit(cache=True)
def _prod_err(a, b, p):
    t = _SPLIT * a
    ah = t - (t - a)
    al = a - ah
    t = _SPLIT * b
    bh = t - (t - b)
    bl = b - bh
    return ((ah * bh - p) + ah * bl + al * bh) + al * bl


@njit(cache=True)
def sincos_turns(x, k):
    """Return sin and cos of 2*pi*k*x, reducing k*x modulo quarter turns exactly."""
    p = k * x
    e = _prod_err(k, x, p)
    r = p - math.floor(p + 0.5)
    r += e
    q = math.floor(4.0 * r + 0.5)
    t = r - 0.25 * q
    s = math.sin(TWO_PI * t)
    c = math.cos(TWO_PI * t)
    qi = int(q) % 4
    if qi == 0:
        return s, c
    if qi == 1:
        return c, -s
    if qi == 2:
        return -s, -c
    return -c, s


@njit(cache=True)
def trig3(tp, x):
    """Value and first two derivatives of the packed trigonometric polynomial."""
    xr = x - math.floor(x)
    K = int(tp[1])
    v = tp[0]
    d1 = 0.0
    d2 = 0.0
    for k in range(1, K + 1):
        ck = tp[1 + k]
        sk = tp[1 + K + k]
        if ck == 0.0 and sk == 0.0:
            continue
        s, c = sincos_turns(xr, float(k))
        w = TWO_PI * k
        v += ck * c + sk * s
        d1 += w * (sk * c - ck * s)
        d2 -= w * w * (ck * c + sk * s)
    return v, d1, d2


@njit(cache=True)
def trig_value(tp, x):
    xr = x - math.floor(x)
    K = int(tp[1])
    v = tp[0]
    for k in range(1, K + 1):
        ck = tp[1 + k]
        sk = tp[1 + K + k]
        if ck == 0.0 and sk == 0.0:
            continue
        s, c = sincos_turns(xr, float(k))
        v += ck * c + sk * s
    return v


@njit(cache=True)
def trig_diff(tp, x, d):
    """Accurate increments of the polynomial and its derivative over [x, x+d]."""
    xr = x - math.floor(x)
    xm = xr + 0.5 * d
    K = int(tp[1])
    dv = 0.0
    dd1 = 0.0
    for k in range(1, K + 1):
        ck = tp[1 + k]
        sk = tp[1 + K + k]
        if ck == 0.0 and sk == 0.0:
            continue
        sm, cm = sincos_turns(xm, float(k))
        sh, _ = sincos_turns(0.5 * d, float(k))
        dcos = -2.0 * sm * sh
        dsin = 2.0 * cm * sh
        dv += ck * dcos + sk * dsin
        dd1 += TWO_PI * k * (sk * dcos - ck * dsin)
    return dv, dd1


# ---------------------------------------------------------------------------
# the map


@njit(cache=True)
def f_lift(a, L, tp, x):
    v = trig_value(tp, x)
    if v == 0.0:
        return -np.inf
    return x + a + L * math.log(abs(v))


@njit(cache=True)
def f_prime(a, L, tp, x):
    v, d1, _ = trig3(tp, x)
    return 1.0 + L * d1 / v


@njit(cache=True)
def f_prime2(a, L, tp, x):
    v, d1, d2 = trig3(tp, x)
    return 1.0 + L * d1 / v, L * (d2 * v - d1 * d1) / (v * v)


@njit(cache=True)
def f_delta(a, L, tp, x, d):
    """f(x + d) - f(x) without cancellation; NaN if [x, x+d] crosses a zero."""
    if d == 0.0:
        return 0.0
    v = trig_value(tp, x)
    dv, _ = trig_diff(tp, x, d)
    r = dv / v
    if not r > -1.0:
        return np.nan
    return d + L * math.log1p(r)


@njit(cache=True)
def fp_delta(a, L, tp, x, d):
    """f'(x + d) - f'(x) without cancellation."""
    v, d1, _ = trig3(tp, x)
    dv, dd1 = trig_diff(tp, x, d)
    return L * (dd1 * v - d1 * dv) / (v * (v + dv))


@njit(cache=True)
def dist_to(x, pts):
    best = 1.0
    for i in range(pts.shape[0]):
        u = x - pts[i]
        u -= math.floor(u + 0.5)
        u = abs(u)
        if u < best:
            best = u
    return best


# ---------------------------------------------------------------------------
# gaps between consecutive marked points


@njit(cache=True)
def gap_of(mp, x):
    fl = math.floor(x)
    r = x - fl
    g = np.searchsorted(mp, r, side="right") - 1
    if g < 0:
        g = mp.shape[0] - 1
        fl -= 1.0
    return g, fl


@njit(cache=True)
def gap_bounds(mp, mk, g, sh):
    K = mp.shape[0]
    lo = mp[g] + sh
    if g + 1 < K:
        hi = mp[g + 1] + sh
        shi = mk[g + 1] == 1
    else:
        hi = mp[0] + 1.0 + sh
        shi = mk[0] == 1
    return lo, hi, mk[g] == 1, shi


@njit(cache=True)
def inv_gap(a, L, tp, lo, hi, slo, shi, w):
    """Solve f(z) = w for z in the monotone gap (lo, hi)."""
    if slo and shi:
        return np.nan
    if slo or shi:
        s = lo if slo else hi
        sgn = 1.0 if slo else -1.0
        other = hi if slo else lo
        g_other = f_lift(a, L, tp, other) - w
        if g_other == 0.0:
            return other
        if not g_other > 0.0:
            return np.nan
        uh = math.log(hi - lo)
        ul = uh - 1.0
        step = 1.0
        while True:
            gv = f_lift(a, L, tp, s + sgn * math.exp(ul)) - w
            if gv < 0.0:
                break
            if gv == 0.0:
                return s + sgn * math.exp(ul)
            uh = ul
            step *= 2.0
            ul -= step
            if ul < -740.0:
                return np.nan
        u = ul + 0.5 * (uh - ul)
        for _ in range(200):
            e = math.exp(u)
            z = s + sgn * e
            gv = f_lift(a, L, tp, z) - w
            if gv == 0.0:
                return z
            if gv < 0.0:
                ul = u
            else:
                uh = u
            der = abs(f_prime(a, L, tp, z)) * e
            un = u - gv / der if der > 0.0 else 0.5 * (ul + uh)
            if not (ul < un < uh):
                un = ul + 0.5 * (uh - ul)
            if abs(un - u) <= 1e-15 * max(1.0, abs(u)) or uh - ul <= 1e-15 * max(1.0, abs(u)):
                u = un
                break
            u = un
        z = s + sgn * math.exp(u)
        return _polish(a, L, tp, lo, hi, z, w)
    flo = f_lift(a, L, tp, lo)
    fhi = f_lift(a, L, tp, hi)
    inc = fhi > flo
    if inc:
        if not (flo <= w <= fhi):
            return np.nan
    else:
        if not (fhi <= w <= flo):
            return np.nan
    zl = lo
    zh = hi
    z = 0.5 * (lo + hi)
    for _ in range(300):
        gv = f_lift(a, L, tp, z) - w
        if gv == 0.0:
            return z
        if (gv < 0.0) == inc:
            zl = z
        else:
            zh = z
        der = f_prime(a, L, tp, z)
        zn = z - gv / der if der != 0.0 else 0.5 * (zl + zh)
        if not (min(zl, zh) < zn < max(zl, zh)):
            zn = 0.5 * (zl + zh)
        if abs(zn - z) <= 4e-16 * max(1.0, abs(z)):
            return zn
        z = zn
    return z


@njit(cache=True)
def _polish(a, L, tp, lo, hi, z, w):
    for _ in range(3):
        gv = f_lift(a, L, tp, z) - w
        der = f_prime(a, L, tp, z)
        if der == 0.0:
            break
        zn = z - gv / der
        if not (lo < zn < hi):
            break
        if abs(f_lift(a, L, tp, zn) - w) >= abs(gv):
            break
        z = zn
    return z


@njit(cache=True)
def solve_delta(a, L, tp, x, D, lo, hi):
    """Find d with f(x+d) - f(x) = D and x + d inside the monotone gap (lo, hi)."""
    if D == 0.0:
        return 0.0
    fp0 = f_prime(a, L, tp, x)
    sgn = 1.0 if D * fp0 > 0.0 else -1.0
    sD = 1.0 if D > 0.0 else -1.0
    bound = (hi - x) if sgn > 0.0 else (x - lo)
    tl = 0.0
    th = bound
    t = abs(D / fp0)
    for _ in range(300):
        if not (tl < t < th):
            t = tl + 0.5 * (th - tl)
        val = f_delta(a, L, tp, x, sgn * t)
        if val != val:
            th = t
            t = tl + 0.5 * (th - tl)
            continue
        h = (val - D) * sD
        if h == 0.0:
            return sgn * t
        if h < 0.0:
            tl = t
        else:
            th = t
        der = abs(fp0 + fp_delta(a, L, tp, x, sgn * t))
        tn = t - h / der if der > 0.0 else tl + 0.5 * (th - tl)
        if not (tl < tn < th):
            tn = tl + 0.5 * (th - tl)
        if abs(tn - t) <= 4e-16 * t:
            return sgn * tn
        t = tn
    return sgn * t


# ---------------------------------------------------------------------------
# contraction radius along a chain x_0..x_{n-1}


@njit(cache=True)
def log_contraction(a, L, tp, cps, sps, chain, n):
    """log D_n(chain[0]) evaluated through the time-(n-1) recursion."""
    Q = 0.0
    slog = 0.0
    for j in range(n):
        if j > 0:
            fp = abs(f_prime(a, L, tp, chain[j - 1]))
            if fp == 0.0:
                return np.nan
            Q /= fp
            slog += math.log(fp)
        dc = dist_to(chain[j], cps)
        ds = dist_to(chain[j], sps)
        if dc <= 0.0 or ds <= 0.0:
            return np.nan
        Q += 1.0 / (dc * ds)
    return -0.5 * math.log(L) - math.log(Q) - slog


@njit(cache=True)
def cut_offsets(a, L, tp, cps, sps, chain, n, base_dir, out):
    """Offsets along the chain produced by a base step of signed length D_n.

    out[j] receives the displacement at time j; returns log D_n (NaN if undefined).
    """
    lD = log_contraction(a, L, tp, cps, sps, chain, n)
    if lD != lD:
        return np.nan
    j0 = 0
    ld = lD
    sg = base_dir
    while ld <= _LOG_TINY and j0 < n - 1:
        fp = f_prime(a, L, tp, chain[j0])
        ld += math.log(abs(fp))
        if fp < 0.0:
            sg = -sg
        out[j0] = 0.0
        j0 += 1
    if ld <= _LOG_TINY:
        return np.nan
    d = sg * math.exp(ld)
    out[j0] = d
    for j in range(j0, n - 1):
        d = f_delta(a, L, tp, chain[j], d)
        if d != d:
            return np.nan
        out[j + 1] = d
    return lD


@njit(cache=True)
def chain_back(a, L, tp, gl, gh, gsl, gsh, kk, n, u, chain):
    chain[n - 1] = u
    for j in range(n - 2, -1, -1):
        z = inv_gap(a, L, tp, gl[j], gh[j], gsl[j] == 1, gsh[j] == 1, chain[j + 1] + kk[j + 1])
        if z != z:
            return False
        chain[j] = z
    return True


@njit(cache=True)
def back_offset(a, L, tp, chain, n, gl, gh, D):
    """Pull an offset at time n-1 back to time 0; returns (sign, log|offset|)."""
    sg = 1.0 if D > 0.0 else -1.0
    if D == 0.0:
        return 0.0, -np.inf
    lg = math.log(abs(D))
    linear = False
    for j in range(n - 2, -1, -1):
        if not linear:
            D = solve_delta(a, L, tp, chain[j], D, gl[j], gh[j])
            if D != D:
                return 0.0, np.nan
            if abs(D) < 1e-290:
                linear = True
                sg = 1.0 if D > 0.0 else -1.0
                lg = math.log(abs(D)) if D != 0.0 else -np.inf
                if D == 0.0:
                    return 0.0, np.nan
        else:
            fp = f_prime(a, L, tp, chain[j])
            lg -= math.log(abs(fp))
            if fp < 0.0:
                sg = -sg
    if not linear:
        sg = 1.0 if D > 0.0 else -1.0
        lg = math.log(abs(D))
    return sg, lg


@njit(cache=True)
def forward_offset(a, L, tp, chain, n, d, out):
    """Push a base offset d forward; out[j] gets the displacement at time j."""
    out[0] = d
    for j in range(n - 1):
        d = f_delta(a, L, tp, chain[j], d)
        if d != d:
            return np.nan
        out[j + 1] = d
    return d


# ---------------------------------------------------------------------------
# refinement: one step of the stopping-time construction


@njit(cache=True)
def _record(out_c0, out_c1, out_lw, out_flag, cnt, c0, c1, lw, flag):
    if cnt < out_c0.shape[0]:
        out_c0[cnt] = c0
        out_c1[cnt] = c1
        out_lw[cnt] = lw
        out_flag[cnt] = flag
    return cnt + 1


@njit(cache=True)
def sweep(a, L, tp, cps, sps, n, chain, pos, far, far_marked, base_dir, tgt, mode,
          sliver, max_cuts, dtmp, chain2, out_c0, out_c1, out_lw, out_flag, cnt):
    """Cut from pos toward far with pieces of base length D_n.

    mode 0 returns only the piece holding tgt; mode 1 records every piece.
    Status: 0 ok, 1 sliver next to a marked point, 2 cut budget, 3 undefined width.
    """
    img_dir = 1.0 if far > pos else -1.0
    have_prev = False
    prev = pos
    for _ in range(max_cuts):
        if far_marked and abs(far - pos) < sliver:
            if mode == 1:
                cnt = _record(out_c0, out_c1, out_lw, out_flag, cnt, pos, far, np.nan, 1)
            return 1, pos, far, cnt
        lD = cut_offsets(a, L, tp, cps, sps, chain, n, base_dir, dtmp)
        if lD != lD:
            if mode == 1:
                cnt = _record(out_c0, out_c1, out_lw, out_flag, cnt, pos, far, np.nan, 3)
            return 3, pos, far, cnt
        nxt = pos + dtmp[n - 1]
        if not img_dir * (far - nxt) > 0.0:
            if far_marked:
                if mode == 1:
                    cnt = _record(out_c0, out_c1, out_lw, out_flag, cnt, pos, far, np.nan, 1)
                return 1, pos, far, cnt
            if have_prev:
                if mode == 1 and cnt - 1 < out_c1.shape[0]:
                    out_c1[cnt - 1] = far
                    out_lw[cnt - 1] = np.nan
                return 0, prev, far, cnt
            if mode == 1:
                cnt = _record(out_c0, out_c1, out_lw, out_flag, cnt, pos, far, np.nan, 0)
            return 0, pos, far, cnt
        if mode == 0 and img_dir * (tgt - nxt) < 0.0:
            if not far_marked:
                for j in range(n - 1):
                    chain2[j] = chain[j] + dtmp[j]
                chain2[n - 1] = nxt
                lD2 = cut_offsets(a, L, tp, cps, sps, chain2, n, base_dir, dtmp)
                if lD2 != lD2 or not img_dir * (far - (nxt + dtmp[n - 1])) > 0.0:
                    return 0, pos, far, cnt
            return 0, pos, nxt, cnt
        if mode == 1:
            cnt = _record(out_c0, out_c1, out_lw, out_flag, cnt, pos, nxt, lD, 0)
        for j in range(n - 1):
            chain[j] += dtmp[j]
        chain[n - 1] = nxt
        have_prev = True
        prev = pos
        pos = nxt
    if mode == 1:
        cnt = _record(out_c0, out_c1, out_lw, out_flag, cnt, pos, far, np.nan, 2)
    return 2, pos, far, cnt


@njit(cache=True)
def _piece(a, L, tp, cps, sps, gl, gh, gsl, gsh, kk, n, pa, pb, a_marked, b_marked, case,
           orient, tgt, mode, sliver, max_cuts, chain, chain2, chain3, dtmp,
           out_c0, out_c1, out_lw, out_flag, cnt):
    if orient > 0.0:
        bl, br, bl_m, br_m = pa, pb, a_marked, b_marked
    else:
        bl, br, bl_m, br_m = pb, pa, b_marked, a_marked
    if not chain_back(a, L, tp, gl, gh, gsl, gsh, kk, n, bl, chain):
        return 3, bl, br, cnt
    if case == 1:
        return sweep(a, L, tp, cps, sps, n, chain, bl, br, False, 1.0, tgt, mode,
                     sliver, max_cuts, dtmp, chain2, out_c0, out_c1, out_lw, out_flag, cnt)
    # Case II: locate the base midpoint of the maximal piece
    if n > 1:
        sg, lB = back_offset(a, L, tp, chain, n, gl, gh, br - bl)
        if lB != lB:
            return 3, bl, br, cnt
        lh = lB - math.log(2.0)
        if lh <= _LOG_TINY:
            # midpoint below resolution: fall back to the linearised half width
            umid = bl + 0.5 * (br - bl)
            if not chain_back(a, L, tp, gl, gh, gsl, gsh, kk, n, umid, chain):
                return 3, bl, br, cnt
        else:
            dm = forward_offset(a, L, tp, chain, n, sg * math.exp(lh), dtmp)
            if dm != dm:
                return 3, bl, br, cnt
            umid = bl + dm
            for j in range(n - 1):
                chain[j] += dtmp[j]
            chain[n - 1] = umid
    else:
        umid = 0.5 * (bl + br)
        chain[0] = umid
    if mode == 0:
        if (tgt - umid) * (br - bl) > 0.0:
            return sweep(a, L, tp, cps, sps, n, chain, umid, br, br_m, 1.0, tgt, mode,
                         sliver, max_cuts, dtmp, chain2, out_c0, out_c1, out_lw, out_flag, cnt)
        return sweep(a, L, tp, cps, sps, n, chain, umid, bl, bl_m, -1.0, tgt, mode,
                     sliver, max_cuts, dtmp, chain2, out_c0, out_c1, out_lw, out_flag, cnt)
    for j in range(n):
        chain3[j] = chain[j]
    st, c0, c1, cnt = sweep(a, L, tp, cps, sps, n, chain, umid, br, br_m, 1.0, tgt, mode,
                            sliver, max_cuts, dtmp, chain2, out_c0, out_c1, out_lw, out_flag, cnt)
    for j in range(n):
        chain[j] = chain3[j]
    st2, c0, c1, cnt = sweep(a, L, tp, cps, sps, n, chain, umid, bl, bl_m, -1.0, tgt, mode,
                             sliver, max_cuts, dtmp, chain2, out_c0, out_c1, out_lw, out_flag, cnt)
    return max(st, st2) if st != 0 or st2 != 0 else 0, c0, c1, cnt


@njit(cache=True)
def refine(a, L, tp, mp, mk, cps, sps, gl, gh, gsl, gsh, kk, n, elo, ehi, orient, tgt, mode,
           sliver, max_cuts, chain, chain2, chain3, dtmp, out_c0, out_c1, out_lw, out_flag,
           out_case):
    """Children of an element whose time-(n-1) image is [elo, ehi].

    Returns (status, c0, c1, case, count).  In mode 0 the child holding tgt
    is returned directly; in mode 1 all children go to the out arrays.
    """
    cnt = 0
    if mode == 0:
        g, sh = gap_of(mp, tgt)
        lo, hi, slo, shi = gap_bounds(mp, mk, g, sh)
        case = 1 if (lo < elo - sliver and hi > ehi + sliver) else 2
        pa = max(lo, elo)
        pb = min(hi, ehi)
        st, c0, c1, cnt = _piece(a, L, tp, cps, sps, gl, gh, gsl, gsh, kk, n, pa, pb,
                                 lo >= elo - sliver, hi <= ehi + sliver, case, orient, tgt, mode, sliver,
                                 max_cuts, chain, chain2, chain3, dtmp,
                                 out_c0, out_c1, out_lw, out_flag, cnt)
        return st, c0, c1, case, cnt
    g, sh = gap_of(mp, elo)
    lo, hi, slo, shi = gap_bounds(mp, mk, g, sh)
    case = 1 if (lo < elo - sliver and hi > ehi + sliver) else 2
    worst = 0
    K = mp.shape[0]
    while True:
        lo, hi, slo, shi = gap_bounds(mp, mk, g, sh)
        pa = max(lo, elo)
        pb = min(hi, ehi)
        if pb > pa:
            start = cnt
            st, c0, c1, cnt = _piece(a, L, tp, cps, sps, gl, gh, gsl, gsh, kk, n, pa, pb,
                                     lo >= elo - sliver, hi <= ehi + sliver, case, orient, tgt, mode, sliver,
                                     max_cuts, chain, chain2, chain3, dtmp,
                                     out_c0, out_c1, out_lw, out_flag, cnt)
            for i in range(start, min(cnt, out_case.shape[0])):
                out_case[i] = case
            if st > worst:
                worst = st
        if hi >= ehi:
            break
        g += 1
        if g == K:
            g = 0
            sh += 1.0
    return worst, np.nan, np.nan, case, cnt


@njit(cache=True)
def push_child(a, L, tp, mp, mk, c0, c1, tgt):
    """Image of the child [c0, c1] and of tgt under one more iterate.

    Returns (y_lo, y_hi, y_tgt, flip, g_lo, g_hi, g_slo, g_shi).
    """
    lo_c = min(c0, c1)
    hi_c = max(c0, c1)
    mid = 0.5 * (lo_c + hi_c)
    g, sh = gap_of(mp, mid)
    glo, ghi, gslo, gshi = gap_bounds(mp, mk, g, sh)
    y0 = f_lift(a, L, tp, lo_c)
    y1 = y0 + f_delta(a, L, tp, lo_c, hi_c - lo_c)
    ty = y0 + f_delta(a, L, tp, lo_c, tgt - lo_c) if tgt == tgt else np.nan
    flip = f_prime(a, L, tp, mid) < 0.0
    ylo = min(y0, y1)
    yhi = max(y0, y1)
    if ty == ty:
        ty = min(max(ty, ylo), yhi)
    return ylo, yhi, ty, flip, glo, ghi, gslo, gshi


@njit(cache=True)
def descend(a, L, tp, mp, mk, cps, sps, blo, bhi, tgt, M0, sqrt_delta, max_steps, sliver,
            max_cuts, gl, gh, gsl, gsh, kk, chain, chain2, chain3, dtmp, tpos, tcase):
    """Follow the stopping-time refinement of [blo, bhi] along the element holding tgt.

    Returns (status, S, elo, ehi, tgt_S, orient, c0, c1) where [c0, c1] is the
    element at time S-1.  Status 0 stopped, 1 sliver, 2 budget, 3 undefined.
    tpos[j] receives the target position at time j and tcase[j-1] the case of step j.
    """
    elo = blo
    ehi = bhi
    orient = 1.0
    tpos[0] = tgt
    dummy_f = np.empty(0)
    dummy_i = np.empty(0, dtype=np.int64)
    kk[0] = 0.0
    c0 = blo
    c1 = bhi
    for n in range(1, max_steps + 1):
        st, c0, c1, case, _ = refine(a, L, tp, mp, mk, cps, sps, gl, gh, gsl, gsh, kk, n,
                                     elo, ehi, orient, tgt, 0, sliver, max_cuts, chain,
                                     chain2, chain3, dtmp, dummy_f, dummy_f, dummy_f,
                                     dummy_i, dummy_i)
        if st != 0:
            return st, n, elo, ehi, tgt, orient, c0, c1
        tcase[n - 1] = case
        ylo, yhi, ty, flip, glo, ghi, gslo, gshi = push_child(a, L, tp, mp, mk, c0, c1, tgt)
        gl[n - 1] = glo
        gh[n - 1] = ghi
        gsl[n - 1] = 1 if gslo else 0
        gsh[n - 1] = 1 if gshi else 0
        if flip:
            orient = -orient
        k = math.floor(ylo)
        kk[n] = k
        elo = ylo - k
        ehi = yhi - k
        tgt = ty - k
        tpos[n] = tgt
        if n >= M0 and ehi - elo >= sqrt_delta:
            return 0, n, elo, ehi, tgt, orient, min(c0, c1), max(c0, c1)
    return 2, max_steps, elo, ehi, tgt, orient, c0, c1


@njit(cache=True)
def element_summary(a, L, tp, gl, gh, gsl, gsh, kk, S, c0, c1, chain):
    """Base endpoints, log base length and endpoint log-derivatives of a stopped element.

    [c0, c1] is the element at time S-1.  Returns
    (base_lo, base_hi, log_len, logd_lo, logd_hi, ok).
    """
    if not chain_back(a, L, tp, gl, gh, gsl, gsh, kk, S, c0, chain):
        return np.nan, np.nan, np.nan, np.nan, np.nan, False
    sg, lB = back_offset(a, L, tp, chain, S, gl, gh, c1 - c0)
    b0 = chain[0]
    ld0 = 0.0
    for j in range(S):
        ld0 += math.log(abs(f_prime(a, L, tp, chain[j])))
    if not chain_back(a, L, tp, gl, gh, gsl, gsh, kk, S, c1, chain):
        return np.nan, np.nan, np.nan, np.nan, np.nan, False
    b1 = chain[0]
    ld1 = 0.0
    for j in range(S):
        ld1 += math.log(abs(f_prime(a, L, tp, chain[j])))
    return min(b0, b1), max(b0, b1), lB, ld0, ld1, lB == lB


# ---------------------------------------------------------------------------
# growth: one-iterate full branches inside the middle third


@njit(cache=True)
def best_full_branch(a, L, tp, mp, mk, A, B, margin, grid):
    """Longest J in the middle third of [A, B] with f(J) one full turn.

    J keeps distance >= margin from every marked point.  Returns (found, j0, j1).
    """
    ell = B - A
    m0 = A + ell / 3.0
    m1 = B - ell / 3.0
    best = 0.0
    bj0 = np.nan
    bj1 = np.nan
    g, sh = gap_of(mp, m0)
    K = mp.shape[0]
    while True:
        lo, hi, slo, shi = gap_bounds(mp, mk, g, sh)
        if lo >= m1:
            break
        G0 = max(m0, lo + margin)
        G1 = min(m1, hi - margin)
        if G1 > G0:
            f0 = f_lift(a, L, tp, G0)
            f1 = f_lift(a, L, tp, G1)
            inc = f1 > f0
            span = abs(f1 - f0)
            if span >= 1.0:
                dirn = 1.0 if inc else -1.0
                for i in range(grid + 1):
                    t = G0 + (G1 - G0) * i / grid
                    if i == grid:
                        t = G1
                    ft = f_lift(a, L, tp, t)
                    if dirn * (f1 - ft) >= 1.0:
                        z = inv_gap(a, L, tp, lo, hi, slo, shi, ft + dirn)
                        if z == z and z - t > best and z <= G1:
                            best = z - t
                            bj0 = t
                            bj1 = z
                    if dirn * (ft - f0) >= 1.0:
                        z = inv_gap(a, L, tp, lo, hi, slo, shi, ft - dirn)
                        if z == z and t - z > best and z >= G0:
                            best = t - z
                            bj0 = z
                            bj1 = t
        if hi >= m1:
            break
        g += 1
        if g == K:
            g = 0
            sh += 1.0
    return best > 0.0, bj0, bj1


# ---------------------------------------------------------------------------
# orbit kernels


@njit(cache=True)
def iterate_block(a, L, tp, cps, sps, x0, n, excl, promo, stop_on_promo, xs, logp, dcs, dss,
                  start):
    """Iterate from xs[start] = x0 filling arrays up to index n.

    Returns (last_index, reason): reason 0 done, 1 exclusion, 2 promotion needed.
    """
    x = x0
    for i in range(start, n + 1):
        xs[i] = x
        dcs[i] = dist_to(x, cps)
        ds = dist_to(x, sps)
        dss[i] = ds
        if i == n:
            return i, 0
        if ds < excl:
            return i, 1
        if stop_on_promo and ds < promo:
            return i, 2
        v, d1, _ = trig3(tp, x)
        logp[i + 1] = logp[i] + math.log(abs(1.0 + L * d1 / v))
        x = x + a + L * math.log(abs(v))
        x -= math.floor(x)
    return n, 0


@njit(cache=True)
def birkhoff_histogram(a, L, tp, sps, x0s, orbit_len, burn_in, bins, excl, counts, lyap):
    """Histogram of post-burn-in points; lyap[k] gets the orbit's sum of ln|f'|.

    Returns per-orbit surviving sample counts (0 if the orbit was truncated).
    """
    m = x0s.shape[0]
    kept = np.zeros(m, dtype=np.int64)
    for k in range(m):
        x = x0s[k]
        s = 0.0
        cnt = 0
        ok = True
        for i in range(orbit_len):
            if dist_to(x, sps) < excl:
                ok = False
                break
            v, d1, _ = trig3(tp, x)
            if i >= burn_in:
                b = int(x * bins)
                if b >= bins:
                    b = bins - 1
                counts[b] += 1
                s += math.log(abs(1.0 + L * d1 / v))
                cnt += 1
            x = x + a + L * math.log(abs(v))
            x -= math.floor(x)
        if ok:
            kept[k] = cnt
            lyap[k] = s
        else:
            kept[k] = -cnt
            lyap[k] = s
    return kept


@njit(cache=True)
def observable_value(op, cob, a, L, tp, x):
    if cob:
        y = f_lift(a, L, tp, x)
        return trig_value(op, y) - trig_value(op, x)
    return trig_value(op, x)


@njit(cache=True)
def correlation_sums(a, L, tp, op, cp, oq, cq, x0s, orbit_len, burn_in, n_max, out):
    """Per-orbit averages of phi(x_{i+n}) * psi(x_i) for n = 0..n_max.

    out has shape (orbits, n_max + 3); the last two columns hold the orbit
    means of phi and psi over the window used.
    """
    m = x0s.shape[0]
    ring = np.empty(n_max + 1)
    used = orbit_len - n_max
    for k in range(m):
        x = x0s[k]
        for _ in range(burn_in):
            x = x + a + L * math.log(abs(trig_value(tp, x)))
            x -= math.floor(x)
        sp = 0.0
        sq = 0.0
        for i in range(orbit_len):
            pv = observable_value(op, cp, a, L, tp, x)
            qv = observable_value(oq, cq, a, L, tp, x)
            ring[i % (n_max + 1)] = qv
            if i < used:
                sp += pv
                sq += qv
            for nn in range(n_max + 1):
                j = i - nn
                if j >= 0 and j < used:
                    out[k, nn] += ring[j % (n_max + 1)] * pv
            x = x + a + L * math.log(abs(trig_value(tp, x)))
            x -= math.floor(x)
        for nn in range(n_max + 1):
            out[k, nn] /= used
        out[k, n_max + 1] = sp / used
        out[k, n_max + 2] = sq / used


@njit(cache=True)
def birkhoff_sums(a, L, tp, op, cob, shift, x0s, burn_in, n_values, out):
    """out[k, j] = sum_{i < n_values[j]} (phi(x_i) - shift) for each start."""
    m = x0s.shape[0]
    nmax = n_values[-1]
    for k in range(m):
        x = x0s[k]
        for _ in range(burn_in):
            x = x + a + L * math.log(abs(trig_value(tp, x)))
            x -= math.floor(x)
        s = 0.0
        j = 0
        for i in range(nmax):
            s += observable_value(op, cob, a, L, tp, x) - shift
            x = x + a + L * math.log(abs(trig_value(tp, x)))
            x -= math.floor(x)
            while j < n_values.shape[0] and n_values[j] == i + 1:
                out[k, j] = s
                j += 1


@njit(cache=True)
def dynamical_ball(a, L, tp, mp, mk, xs, rho, n):
    """Time-0 offsets bounding the connected dynamical ball around the orbit xs.

    The window (-rho[n-1], rho[n-1]) is pulled back one step at a time through
    the monotone gap of each x_i and intersected with (-rho[i], rho[i]).
    Returns (lo0, hi0, lo_last, hi_last, ok).
    """
    lo = -rho[n - 1]
    hi = rho[n - 1]
    for i in range(n - 2, -1, -1):
        g, sh = gap_of(mp, xs[i])
        glo, ghi, _, _ = gap_bounds(mp, mk, g, sh)
        dl = solve_delta(a, L, tp, xs[i], lo, glo, ghi)
        dh = solve_delta(a, L, tp, xs[i], hi, glo, ghi)
        lo = max(min(dl, dh), -rho[i])
        hi = min(max(dl, dh), rho[i])
        if not lo < hi:
            return np.nan, np.nan, np.nan, np.nan, False
    return lo, hi, -rho[n - 1], rho[n - 1], True


@njit(cache=True)
def track_offsets(a, L, tp, xs, rho, n, offs):
    """For each base offset, True iff its orbit stays within rho of xs for n steps."""
    res = np.zeros(offs.shape[0], dtype=np.bool_)
    for k in range(offs.shape[0]):
        d = offs[k]
        ok = abs(d) < rho[0]
        i = 0
        while ok and i < n - 1:
            d = f_delta(a, L, tp, xs[i], d)
            if d != d or not abs(d) < rho[i + 1]:
                ok = False
            i += 1
        res[k] = ok
    return res


@njit(cache=True)
def offset_log_derivs(a, L, tp, xs, n, offs):
    """Push base offsets along the orbit xs for n steps.

    Returns (offsets at time n, log|(f^n)'(x+d)| - log|(f^n)'(x)|) per offset.
    """
    m = offs.shape[0]
    end = np.empty(m)
    dlog = np.empty(m)
    for k in range(m):
        d = offs[k]
        s = 0.0
        for i in range(n):
            fp = f_prime(a, L, tp, xs[i])
            r = fp_delta(a, L, tp, xs[i], d) / fp
            if not r > -1.0:
                s = np.nan
                break
            s += math.log1p(r)
            d = f_delta(a, L, tp, xs[i], d)
        end[k] = d
        dlog[k] = s
    return end, dlog


@njit(cache=True)
def capture_turn(a, L, tp, mp, mk, elo, ehi, t, margin):
    """Cover the middle third of [elo, ehi] by whole turns of f and locate t.

    Inside every monotone gap the integer-aligned full turns form one
    interval; those intervals are the branches offered at this stage.
    Returns (captured, j0, j1, turn, comp_lo, comp_hi): the turn holding t
    when captured, otherwise the leftover component around t.
    """
    ell = ehi - elo
    m0 = elo + ell / 3.0
    m1 = ehi - ell / 3.0
    comp_lo = elo
    comp_hi = ehi
    g, sh = gap_of(mp, m0)
    K = mp.shape[0]
    while True:
        lo, hi, slo, shi = gap_bounds(mp, mk, g, sh)
        if lo >= m1:
            break
        A = max(m0, lo + margin)
        B = min(m1, hi - margin)
        if B > A:
            fA = f_lift(a, L, tp, A)
            fB = f_lift(a, L, tp, B)
            kl = math.ceil(min(fA, fB))
            kh = math.floor(max(fA, fB))
            if kh - kl >= 1.0:
                u0 = inv_gap(a, L, tp, lo, hi, slo, shi, kl)
                u1 = inv_gap(a, L, tp, lo, hi, slo, shi, kh)
                if u0 == u0 and u1 == u1:
                    c_lo = min(u0, u1)
                    c_hi = max(u0, u1)
                    if c_lo <= t <= c_hi:
                        ft = f_lift(a, L, tp, t)
                        k = math.floor(ft)
                        if k >= kh:
                            k = kh - 1.0
                        if k < kl:
                            k = kl
                        z0 = inv_gap(a, L, tp, lo, hi, slo, shi, k)
                        z1 = inv_gap(a, L, tp, lo, hi, slo, shi, k + 1.0)
                        return True, min(z0, z1), max(z0, z1), k, c_lo, c_hi
                    if c_hi < t and c_hi > comp_lo:
                        comp_lo = c_hi
                    if c_lo > t and c_lo < comp_hi:
                        comp_hi = c_lo
        if hi >= m1:
            break
        g += 1
        if g == K:
            g = 0
            sh += 1.0
    return False, np.nan, np.nan, np.nan, comp_lo, comp_hi


@njit(cache=True)
def pull_back_log_deriv(a, L, tp, gl, gh, gsl, gsh, kk, S, u, chain):
    """Pull u from time S back to time 0 of a stage; returns (base point, ln|(f^S)'|)."""
    if not chain_back(a, L, tp, gl, gh, gsl, gsh, kk, S + 1, u, chain):
        return np.nan, np.nan
    s = 0.0
    for j in range(S):
        s += math.log(abs(f_prime(a, L, tp, chain[j])))
    return chain[0], s


@njit(cache=True)
def sum_log_deriv(a, L, tp, xs):
    s = 0.0
    for i in range(xs.shape[0]):
        s += math.log(abs(f_prime(a, L, tp, xs[i])))
    return s


@njit(cache=True)
def turn_certificate(a, L, tp, j0, j1, points):
    """Coverage defect, largest image gap and monotonicity of f on [j0, j1]."""
    y0 = f_lift(a, L, tp, j0)
    prev = y0
    gap = 0.0
    up = 0
    down = 0
    for i in range(1, points):
        t = j0 + (j1 - j0) * i / (points - 1)
        if i == points - 1:
            t = j1
        y = f_lift(a, L, tp, t)
        d = y - prev
        if d > 0.0:
            up += 1
        elif d < 0.0:
            down += 1
        if abs(d) > gap:
            gap = abs(d)
        prev = y
    span = abs(prev - y0)
    defect = abs(span - 1.0)
    if defect > gap:
        gap = defect
    return defect, gap, (up == 0 or down == 0)


@njit(cache=True)
def log_fprime_many(a, L, tp, xs):
    out = np.empty(xs.shape[0])
    for i in range(xs.shape[0]):
        out[i] = math.log(abs(f_prime(a, L, tp, xs[i])))
    return out


@njit(cache=True)
def advance(a, L, tp, x0s, n):
    out = np.empty(x0s.shape[0])
    for k in range(x0s.shape[0]):
        x = x0s[k]
        for _ in range(n):
            x = x + a + L * math.log(abs(trig_value(tp, x)))
            x -= math.floor(x)
        out[k] = x
    return out


@njit(cache=True)
def observable_many(op, cob, a, L, tp, xs):
    out = np.empty(xs.shape[0])
    for i in range(xs.shape[0]):
        out[i] = observable_value(op, cob, a, L, tp, xs[i])
    return out
