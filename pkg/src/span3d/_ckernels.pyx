# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled loss+gradient kernels.

Same arithmetic as the scalar-generic code in ``span3d.losses`` evaluated on
a stack-allocated forward-mode dual (value + 7 partials + tie flag), so the
two backends agree to rounding.
"""

from libc.math cimport sin, cos, fabs

import numpy as np

from span3d.errors import BehindCameraError

cdef enum:
    NP = 7

cdef double TIE_TOL = 1e-12
cdef double DERIV_TOL = 1e-9
cdef double AXIS_DEDUP_TOL = 1e-9

cdef double[8][3] SIGNS = [
    [0.5, 0.5, 0.5],
    [0.5, 0.5, -0.5],
    [-0.5, 0.5, -0.5],
    [-0.5, 0.5, 0.5],
    [0.5, -0.5, 0.5],
    [0.5, -0.5, -0.5],
    [-0.5, -0.5, -0.5],
    [-0.5, -0.5, 0.5],
]

cdef struct D:
    double v
    double d[NP]
    int tie


cdef inline D dconst(double v) noexcept nogil:
    cdef D r
    cdef int i
    r.v = v
    r.tie = 0
    for i in range(NP):
        r.d[i] = 0.0
    return r


cdef inline D dvar(double v, int k) noexcept nogil:
    cdef D r = dconst(v)
    r.d[k] = 1.0
    return r


cdef inline D dadd(D a, D b) noexcept nogil:
    cdef D r
    cdef int i
    r.v = a.v + b.v
    for i in range(NP):
        r.d[i] = a.d[i] + b.d[i]
    r.tie = a.tie | b.tie
    return r


cdef inline D dsub(D a, D b) noexcept nogil:
    cdef D r
    cdef int i
    r.v = a.v - b.v
    for i in range(NP):
        r.d[i] = a.d[i] - b.d[i]
    r.tie = a.tie | b.tie
    return r


cdef inline D dmul(D a, D b) noexcept nogil:
    cdef D r
    cdef int i
    r.v = a.v * b.v
    for i in range(NP):
        r.d[i] = a.v * b.d[i] + b.v * a.d[i]
    r.tie = a.tie | b.tie
    return r


cdef inline D ddiv(D a, D b) noexcept nogil:
    cdef D r
    cdef int i
    cdef double q = a.v / b.v
    r.v = q
    for i in range(NP):
        r.d[i] = (a.d[i] - q * b.d[i]) / b.v
    r.tie = a.tie | b.tie
    return r


cdef inline D dscale(D a, double k) noexcept nogil:
    cdef D r
    cdef int i
    r.v = a.v * k
    for i in range(NP):
        r.d[i] = a.d[i] * k
    r.tie = a.tie
    return r


cdef inline D ddivc(D a, double k) noexcept nogil:
    cdef D r
    cdef int i
    r.v = a.v / k
    for i in range(NP):
        r.d[i] = a.d[i] / k
    r.tie = a.tie
    return r


cdef inline D dshift(D a, double c) noexcept nogil:
    a.v = a.v + c
    return a


cdef inline D dsin(D a) noexcept nogil:
    cdef D r
    cdef int i
    cdef double c = cos(a.v)
    r.v = sin(a.v)
    for i in range(NP):
        r.d[i] = c * a.d[i]
    r.tie = a.tie
    return r


cdef inline D dcos(D a) noexcept nogil:
    cdef D r
    cdef int i
    cdef double s = -sin(a.v)
    r.v = cos(a.v)
    for i in range(NP):
        r.d[i] = s * a.d[i]
    r.tie = a.tie
    return r


cdef inline bint material_tie(D* best, D* cand) noexcept nogil:
    cdef double bv = best.v
    cdef double scale = 1.0
    cdef double m = 0.0
    cdef int i
    if fabs(cand.v - bv) > TIE_TOL * (fabs(bv) if fabs(bv) > 1.0 else 1.0):
        return False
    for i in range(NP):
        if fabs(best.d[i]) > m:
            m = fabs(best.d[i])
    scale += m
    for i in range(NP):
        if fabs(best.d[i] - cand.d[i]) > DERIV_TOL * scale:
            return True
    return False


cdef D dreduce(D* xs, int n, bint want_max) noexcept nogil:
    """min/max with first-candidate tie-breaking and tie detection."""
    cdef int i, b = 0
    cdef int tie = 0
    for i in range(1, n):
        if want_max:
            if xs[i].v > xs[b].v:
                b = i
        else:
            if xs[i].v < xs[b].v:
                b = i
    for i in range(n):
        tie |= xs[i].tie
    if not tie:
        for i in range(n):
            if i != b and material_tie(&xs[b], &xs[i]):
                tie = 1
                break
    cdef D r = xs[b]
    r.tie = tie
    return r


cdef inline D dmin2(D a, D b) noexcept nogil:
    cdef D xs[2]
    xs[0] = a
    xs[1] = b
    return dreduce(xs, 2, False)


cdef inline D dmax2(D a, D b) noexcept nogil:
    cdef D xs[2]
    xs[0] = a
    xs[1] = b
    return dreduce(xs, 2, True)


cdef void corners(D* p, D out[8][3]) noexcept nogil:
    cdef D c = dcos(p[6])
    cdef D s = dsin(p[6])
    cdef D px, py, pz
    cdef int i
    for i in range(8):
        px = dscale(p[3], SIGNS[i][0])
        py = dscale(p[4], SIGNS[i][1])
        pz = dscale(p[5], SIGNS[i][2])
        out[i][0] = dadd(p[0], dadd(dmul(c, px), dmul(s, pz)))
        out[i][1] = dadd(p[1], py)
        out[i][2] = dadd(p[2], dsub(dmul(c, pz), dmul(s, px)))


cdef void normals(D ry, D out[3][3]) noexcept nogil:
    cdef D c = dcos(ry)
    cdef D s = dsin(ry)
    out[0][0] = c
    out[0][1] = dconst(0.0)
    out[0][2] = dscale(s, -1.0)
    out[1][0] = dconst(0.0)
    out[1][1] = dconst(1.0)
    out[1][2] = dconst(0.0)
    out[2][0] = s
    out[2][1] = dconst(0.0)
    out[2][2] = c


cdef void interval(D cs[8][3], D* axis, D* lo, D* hi) noexcept nogil:
    cdef D proj[8]
    cdef int i
    for i in range(8):
        proj[i] = dadd(dadd(dmul(cs[i][0], axis[0]), dmul(cs[i][1], axis[1])),
                       dmul(cs[i][2], axis[2]))
    lo[0] = dreduce(proj, 8, False)
    hi[0] = dreduce(proj, 8, True)


cdef D giou1d(D plo, D phi, D glo, D ghi) noexcept nogil:
    cdef D len_p = dsub(phi, plo)
    cdef D len_g = dsub(ghi, glo)
    cdef D inter = dmax2(dconst(0.0), dsub(dmin2(phi, ghi), dmax2(plo, glo)))
    cdef D hull = dsub(dmax2(phi, ghi), dmin2(plo, glo))
    cdef D union = dsub(dadd(len_p, len_g), inter)
    cdef D iou
    if hull.v == 0.0:
        return dconst(1.0)
    if union.v > 0.0:
        iou = ddiv(inter, union)
    else:
        iou = dconst(0.0)
    return dsub(iou, ddiv(dsub(hull, union), hull))


cdef bint parallel(D* a, D* b) noexcept nogil:
    cdef double same = 0.0, flip = 0.0
    cdef int k
    for k in range(3):
        same = max(same, fabs(a[k].v - b[k].v))
        flip = max(flip, fabs(a[k].v + b[k].v))
    return min(same, flip) <= AXIS_DEDUP_TOL


cdef D spatial(D* p, D* g, int source) noexcept nogil:
    cdef D cp[8][3]
    cdef D cg[8][3]
    cdef D na[3][3]
    cdef D nb[3][3]
    cdef D axes[6][3]
    cdef int naxes = 0
    cdef int i, j, k
    cdef bint dup
    cdef D plo, phi, glo, ghi
    cdef D total = dconst(0.0)
    corners(p, cp)
    corners(g, cg)
    if source == 1:
        normals(g[6], na)
    else:
        normals(p[6], na)
    for i in range(3):
        for k in range(3):
            axes[naxes][k] = na[i][k]
        naxes += 1
    if source == 2:
        normals(g[6], nb)
        for i in range(3):
            dup = False
            for j in range(naxes):
                if parallel(nb[i], axes[j]):
                    dup = True
                    break
            if not dup:
                for k in range(3):
                    axes[naxes][k] = nb[i][k]
                naxes += 1
    for i in range(naxes):
        interval(cp, axes[i], &plo, &phi)
        interval(cg, axes[i], &glo, &ghi)
        total = dadd(total, giou1d(plo, phi, glo, ghi))
    total = ddivc(total, <double>naxes)
    return dscale(dsub(dconst(1.0), total), 0.5)


cdef D giou2d(D* a, D* b) noexcept nogil:
    cdef D area_a = dmul(dsub(a[1], a[0]), dsub(a[3], a[2]))
    cdef D area_b = dmul(dsub(b[1], b[0]), dsub(b[3], b[2]))
    cdef D iw = dmax2(dconst(0.0), dsub(dmin2(a[1], b[1]), dmax2(a[0], b[0])))
    cdef D ih = dmax2(dconst(0.0), dsub(dmin2(a[3], b[3]), dmax2(a[2], b[2])))
    cdef D inter = dmul(iw, ih)
    cdef D union = dsub(dadd(area_a, area_b), inter)
    cdef D hull = dmul(dsub(dmax2(a[1], b[1]), dmin2(a[0], b[0])),
                       dsub(dmax2(a[3], b[3]), dmin2(a[2], b[2])))
    cdef D iou
    cdef int i
    cdef bint same = True
    if hull.v == 0.0:
        for i in range(4):
            if a[i].v != b[i].v:
                same = False
        return dconst(1.0 if same else -1.0)
    if union.v > 0.0:
        iou = ddiv(inter, union)
    else:
        iou = dconst(0.0)
    return dsub(iou, ddiv(dsub(hull, union), hull))


cdef object _result(D r):
    grad = np.empty(NP)
    cdef double[::1] gv = grad
    cdef int i
    for i in range(NP):
        gv[i] = r.d[i]
    return r.v, grad, bool(r.tie)


def spatial_loss_grad(pred, gt, int source=0):
    """Spatial alignment loss and its gradient w.r.t. the 7 ``pred`` params."""
    cdef D p[NP]
    cdef D g[NP]
    cdef int i
    if source < 0 or source > 2:
        raise ValueError(f"unknown axis source {source}")
    for i in range(NP):
        p[i] = dvar(float(pred[i]), i)
        g[i] = dconst(float(gt[i]))
    cdef D r
    with nogil:
        r = spatial(p, g, source)
    return _result(r)


def projection_loss_grad(params, intr, rect, double z_eps=1e-6):
    """Projection alignment loss and its gradient w.r.t. the 7 box params."""
    cdef D p[NP]
    cdef D cs[8][3]
    cdef D us[8]
    cdef D vs[8]
    cdef D pr[4]
    cdef D gr[4]
    cdef D r
    cdef int i
    cdef double fu = intr[0], fv = intr[1], cu = intr[2], cv = intr[3]
    for i in range(NP):
        p[i] = dvar(float(params[i]), i)
    for i in range(4):
        gr[i] = dconst(float(rect[i]))
    corners(p, cs)
    for i in range(8):
        if not cs[i][2].v > z_eps:
            raise BehindCameraError(
                f"corner {i} has z={cs[i][2].v:.6g} <= z_eps={z_eps}", corner_index=i
            )
    with nogil:
        for i in range(8):
            us[i] = dshift(ddiv(dscale(cs[i][0], fu), cs[i][2]), cu)
            vs[i] = dshift(ddiv(dscale(cs[i][1], fv), cs[i][2]), cv)
        pr[0] = dreduce(us, 8, False)
        pr[1] = dreduce(us, 8, True)
        pr[2] = dreduce(vs, 8, False)
        pr[3] = dreduce(vs, 8, True)
        r = dsub(dconst(1.0), giou2d(pr, gr))
    return _result(r)
