"""Galerkin boundary elements for the 2D Helmholtz equation on polylines.

Densities are continuous piecewise-linear (one hat function per node).  The
fundamental solution is ``G(r) = -(j/4) H0^(2)(k r)`` which satisfies
``-(lap + k^2) G = delta`` under the ``exp(+j w t)`` convention.

Singular and nearly singular segment pairs are integrated with Duffy-type
transforms and geometrically graded Gauss rules, which also resolves the
exponential decay of the kernel inside good conductors.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sps
from scipy import special
from scipy.linalg import lapack

from .errors import InteriorResonance, NumericalFailure

_GRADE = 0.15
DECAY_CUTOFF = 40.0


def gauss01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def graded01(levels=12, n=8, ratio=_GRADE):
    """Composite Gauss rule on [0, 1] geometrically refined toward 0."""
    edges = np.concatenate([[0.0], ratio ** np.arange(levels, 0, -1), [1.0]])
    x, w = gauss01(n)
    a, b = edges[:-1], edges[1:]
    nodes = (a[:, None] + (b - a)[:, None] * x[None]).ravel()
    weights = ((b - a)[:, None] * w[None]).ravel()
    return nodes, weights


def green(k, r):
    """``-(j/4) H0^(2)(k r)``."""
    k = complex(k)
    if k.imag == 0.0:
        z = k.real * r
        return -0.25j * (special.j0(z) - 1j * special.y0(z))
    z = k * r
    return -0.25j * special.hankel2e(0, z) * np.exp(-1j * z)


def green_h1(k, r):
    """``(j k / 4) H1^(2)(k r)``; the normal derivative is this times ``(y-x).n_y / r``."""
    k = complex(k)
    if k.imag == 0.0:
        z = k.real * r
        return 0.25j * k.real * (special.j1(z) - 1j * special.y1(z))
    z = k * r
    return 0.25j * k * special.hankel2e(1, z) * np.exp(-1j * z)


@dataclass(frozen=True, eq=False)
class Boundary:
    """One or more closed polylines traversed with the region on the left.

    The outward normal of segment ``A -> B`` is the tangent rotated clockwise.
    Hole boundaries must therefore be given clockwise.
    """

    curves: tuple

    def __post_init__(self):
        object.__setattr__(self, "curves", tuple(np.asarray(c, dtype=float).reshape(-1, 2) for c in self.curves))

    @cached_property
    def nodes(self):
        return np.concatenate(self.curves)

    @cached_property
    def offsets(self):
        return np.cumsum([0] + [len(c) for c in self.curves])

    @property
    def n(self):
        return len(self.nodes)

    @cached_property
    def seg_nodes(self):
        out = []
        for c, o in zip(self.curves, self.offsets[:-1]):
            i = np.arange(len(c))
            out.append(np.column_stack([o + i, o + (i + 1) % len(c)]))
        return np.concatenate(out)

    @cached_property
    def A(self):
        return self.nodes[self.seg_nodes[:, 0]]

    @cached_property
    def B(self):
        return self.nodes[self.seg_nodes[:, 1]]

    @cached_property
    def lengths(self):
        d = self.B - self.A
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def tangents(self):
        return (self.B - self.A) / self.lengths[:, None]

    @cached_property
    def normals(self):
        t = self.tangents
        return np.stack([t[:, 1], -t[:, 0]], axis=1)

    @property
    def n_seg(self):
        return len(self.seg_nodes)

    def gram(self):
        L = self.lengths
        i, j = self.seg_nodes[:, 0], self.seg_nodes[:, 1]
        M = np.zeros((self.n, self.n))
        np.add.at(M, (i, i), L / 3)
        np.add.at(M, (j, j), L / 3)
        np.add.at(M, (i, j), L / 6)
        np.add.at(M, (j, i), L / 6)
        return M


@dataclass
class LayerOperators:
    """Galerkin matrices of the single layer (V), double layer (D), hypersingular (W) and Gram (M)."""

    V: np.ndarray
    D: np.ndarray
    W: np.ndarray
    M: np.ndarray
    k: complex


def _pair_classes(bd: Boundary, near_factor=1.0):
    """Classify ordered segment pairs as self, vertex-sharing, near or far."""
    ns = bd.n_seg
    sn = bd.seg_nodes
    share = np.zeros((ns, ns), dtype=bool)
    for a in (0, 1):
        for b in (0, 1):
            share |= sn[:, a][:, None] == sn[:, b][None, :]
    np.fill_diagonal(share, False)
    mid = 0.5 * (bd.A + bd.B)
    L = bd.lengths
    dmid = np.hypot(mid[:, None, 0] - mid[None, :, 0], mid[:, None, 1] - mid[None, :, 1])
    gap = dmid - 0.5 * (L[:, None] + L[None, :])
    near = (gap < near_factor * np.maximum(L[:, None], L[None, :])) & ~share
    np.fill_diagonal(near, False)
    return share, near


def _moments(bd: Boundary, k, si, sj, s, t, w):
    """2x2 moments of G and dG/dn_y for segment pairs (si, sj) from rules (s, t, w).

    ``s``/``t`` are parameters measured from node 0 of the test/trial segment;
    ``w`` already contains every Jacobian.  Returns arrays (P, 2, 2).
    """
    x = bd.A[si][:, None, :] + (s * bd.lengths[si][:, None])[..., None] * bd.tangents[si][:, None, :]
    y = bd.A[sj][:, None, :] + (t * bd.lengths[sj][:, None])[..., None] * bd.tangents[sj][:, None, :]
    d = y - x
    r = np.hypot(d[..., 0], d[..., 1])
    g = green(k, r) * w
    dn = np.einsum("pqd,pd->pq", d, bd.normals[sj])
    with np.errstate(invalid="ignore", divide="ignore"):
        dg = np.where(r > 0, green_h1(k, r) * dn / r, 0.0) * w
    phi_s = np.stack([1 - s, s], axis=-1)
    phi_t = np.stack([1 - t, t], axis=-1)
    V = np.einsum("pqa,pqb,pq->pab", phi_s, phi_t, g)
    D = np.einsum("pqa,pqb,pq->pab", phi_s, phi_t, dg)
    return V, D


def _self_rule(levels=12, n=8):
    u, wu = graded01(levels, n)
    v0, wv0 = gauss01(3)
    # v on [0, 1-u]
    v = v0[None, :] * (1 - u)[:, None]
    wv = wv0[None, :] * (1 - u)[:, None]
    s = np.concatenate([v, v + u[:, None]], axis=1).ravel()
    t = np.concatenate([v + u[:, None], v], axis=1).ravel()
    w = np.concatenate([wu[:, None] * wv, wu[:, None] * wv], axis=1).ravel()
    return s, t, w


def _vertex_rule(levels=12, n=8, nw=12):
    """Duffy rule on the unit square singular at (0, 0)."""
    rho, wr = graded01(levels, n)
    xw, ww = gauss01(nw)
    R, X = np.meshgrid(rho, xw, indexing="ij")
    WR, WW = np.meshgrid(wr, ww, indexing="ij")
    a = np.concatenate([R.ravel(), (R * X).ravel()])
    b = np.concatenate([(R * X).ravel(), R.ravel()])
    w = np.concatenate([(WR * WW * R).ravel(), (WR * WW * R).ravel()])
    return a, b, w


def _tensor_rule(nsub=4, n=6):
    x, w = gauss01(n)
    edges = np.linspace(0, 1, nsub + 1)
    xs = (edges[:-1, None] + x[None] / nsub).ravel()
    ws = np.tile(w / nsub, nsub)
    S, T = np.meshgrid(xs, xs, indexing="ij")
    WS, WT = np.meshgrid(ws, ws, indexing="ij")
    return S.ravel(), T.ravel(), (WS * WT).ravel()


def layer_operators(bd: Boundary, k, q_far=4, q_self=8, block=768) -> LayerOperators:
    """Assemble V, D, W (Maue form) and the Gram matrix on ``bd``."""
    k = complex(k)
    n = bd.n
    L = bd.lengths
    sn = bd.seg_nodes
    ns = bd.n_seg
    share, near = _pair_classes(bd)
    V = np.zeros((n, n), dtype=complex)
    D = np.zeros((n, n), dtype=complex)
    W = np.zeros((n, n), dtype=complex)

    # ---- regular quadrature for all well-separated pairs
    xq, wq = gauss01(q_far)
    seg = np.repeat(np.arange(ns), q_far)
    sq = np.tile(xq, ns)
    pts = bd.A[seg] + (sq * L[seg])[:, None] * bd.tangents[seg]
    wts = np.tile(wq, ns) * L[seg]
    npts = len(pts)
    rows = np.arange(npts)
    phi0 = wts * (1 - sq)
    phi1 = wts * sq
    Phi = sps.csr_matrix((np.concatenate([phi0, phi1]), (np.concatenate([rows, rows]),
                          np.concatenate([sn[seg, 0], sn[seg, 1]]))), shape=(npts, n))
    dphi = wts / L[seg]
    Ds = sps.csr_matrix((np.concatenate([-dphi, dphi]), (np.concatenate([rows, rows]),
                         np.concatenate([sn[seg, 0], sn[seg, 1]]))), shape=(npts, n))
    nx = sps.diags(bd.normals[seg, 0])
    ny = sps.diags(bd.normals[seg, 1])
    right = sps.hstack([Phi, Ds, nx @ Phi, ny @ Phi]).tocsc()
    skip = share | near
    np.fill_diagonal(skip, True)
    for r0 in range(0, npts, block):
        r1 = min(npts, r0 + block)
        d = pts[None, :, :] - pts[r0:r1, None, :]
        r = np.hypot(d[..., 0], d[..., 1])
        # kernel is below exp(-DECAY_CUTOFF) of its near value past this mask
        mask = skip[seg[r0:r1]][:, seg] | (abs(k.imag) * r > DECAY_CUTOFF)
        live = ~mask
        dn = np.einsum("ijd,jd->ij", d, bd.normals[seg])
        g = np.zeros(r.shape, dtype=complex)
        dg = np.zeros(r.shape, dtype=complex)
        rl = r[live]
        g[live] = green(k, rl)
        dg[live] = green_h1(k, rl) * dn[live] / rl
        GR = (right.T @ g.T).T  # (block, 4n)
        PhiB = Phi[r0:r1].T
        V += PhiB @ GR[:, :n]
        W += Ds[r0:r1].T @ GR[:, n:2 * n]
        W -= k**2 * ((nx @ Phi)[r0:r1].T @ GR[:, 2 * n:3 * n] + (ny @ Phi)[r0:r1].T @ GR[:, 3 * n:])
        D += PhiB @ (right[:, :n].T @ dg.T).T

    # ---- singular and near-singular pairs
    def scatter(si, sj, Vm, Dm):
        for a in (0, 1):
            for b in (0, 1):
                np.add.at(V, (sn[si, a], sn[sj, b]), Vm[:, a, b])
                np.add.at(D, (sn[si, a], sn[sj, b]), Dm[:, a, b])
        tot = Vm.sum(axis=(1, 2))
        ndot = np.sum(bd.normals[si] * bd.normals[sj], axis=1)
        sgn = np.array([-1.0, 1.0])
        for a in (0, 1):
            for b in (0, 1):
                val = sgn[a] * sgn[b] * tot / (L[si] * L[sj]) - k**2 * ndot * Vm[:, a, b]
                np.add.at(W, (sn[si, a], sn[sj, b]), val)

    # self pairs
    s, t, w = _self_rule(n=q_self)
    si = np.arange(ns)
    P = len(si)
    Vm, Dm = _moments(bd, k, si, si, np.broadcast_to(s, (P, len(s))), np.broadcast_to(t, (P, len(t))),
                      w[None, :] * (L**2)[:, None])
    scatter(si, si, Vm, np.zeros_like(Dm))

    # vertex-sharing pairs
    si, sj = np.nonzero(share)
    if len(si):
        a, b, w = _vertex_rule(n=q_self)
        # the shared node is node 0 or node 1 of each segment
        at_i_end = (sn[si, 1] == sn[sj, 0]) | (sn[si, 1] == sn[sj, 1])
        at_j_end = (sn[sj, 1] == sn[si, 0]) | (sn[sj, 1] == sn[si, 1])
        s = np.where(at_i_end[:, None], 1 - a[None], a[None])
        t = np.where(at_j_end[:, None], 1 - b[None], b[None])
        for c0 in range(0, len(si), 256):
            c1 = c0 + 256
            Vm, Dm = _moments(bd, k, si[c0:c1], sj[c0:c1], s[c0:c1], t[c0:c1],
                              w[None, :] * (L[si[c0:c1]] * L[sj[c0:c1]])[:, None])
            scatter(si[c0:c1], sj[c0:c1], Vm, Dm)

    # nearby but disjoint pairs
    si, sj = np.nonzero(near)
    if len(si):
        s, t, w = _tensor_rule()
        for c0 in range(0, len(si), 256):
            c1 = c0 + 256
            P = len(si[c0:c1])
            Vm, Dm = _moments(bd, k, si[c0:c1], sj[c0:c1], np.broadcast_to(s, (P, len(s))),
                              np.broadcast_to(t, (P, len(t))), w[None, :] * (L[si[c0:c1]] * L[sj[c0:c1]])[:, None])
            scatter(si[c0:c1], sj[c0:c1], Vm, Dm)

    if not (np.all(np.isfinite(V)) and np.all(np.isfinite(D)) and np.all(np.isfinite(W))):
        raise NumericalFailure("non-finite entries in boundary-element matrices")
    V = 0.5 * (V + V.T)
    W = 0.5 * (W + W.T)
    return LayerOperators(V, D, W, bd.gram(), k)


def dtn_from_operators(ops: LayerOperators, mu_r=1.0, cond_limit=1e13):
    """Symmetric Galerkin Dirichlet-to-Neumann matrix ``(W + B^T V^-1 B) / mu_r`` with ``B = M/2 + D``.

    The result maps nodal boundary values to the tested outward flux
    ``int f_p (1/mu_r) dE/dn``.
    """
    V = ops.V
    lu, piv, info = lapack.zgetrf(V)
    anorm = float(np.abs(V).sum(axis=0).max())
    rcond = lapack.zgecon(lu, anorm, norm="1")[0] if info == 0 else 0.0
    cond = 1.0 / rcond if rcond > 0 else np.inf
    if not np.isfinite(cond) or cond > cond_limit:
        raise InteriorResonance(
            f"single-layer matrix is numerically singular (cond={cond:.2e}); the contour is at an "
            "interior Dirichlet resonance, shift the frequency by about 0.1%")
    B = 0.5 * ops.M + ops.D
    X = lapack.zgetrs(lu, piv, B.astype(complex))[0]
    S = ops.W + B.T @ X
    S = 0.5 * (S + S.T)
    return S / mu_r


def evaluate_potential(bd: Boundary, k, u, q, targets, q_far=8, near_factor=2.0, chunk=256):
    """Green representation ``sum int [G q - dG/dn_y u] ds_y`` at ``targets``.

    ``u`` and ``q`` are nodal coefficients of the boundary value and outward
    normal derivative.  Segments closer than ``near_factor`` lengths to a
    target are integrated with a rule graded toward the nearest point.
    Returns values and the per-target distance to the boundary.
    """
    k = complex(k)
    tg = np.atleast_2d(np.asarray(targets, dtype=float))
    out = np.zeros(len(tg), dtype=complex)
    dist = np.full(len(tg), np.inf)
    sn = bd.seg_nodes
    L = bd.lengths
    xq, wq = gauss01(q_far)
    gn, gw = graded01(14, 6, ratio=0.35)
    u = np.asarray(u)
    q = np.asarray(q)
    for c0 in range(0, len(tg), chunk):
        T = tg[c0:c0 + chunk]
        rel = T[:, None, :] - bd.A[None]
        tpar = np.clip(np.einsum("tsd,sd->ts", rel, bd.tangents) / L[None], 0.0, 1.0)
        foot = bd.A[None] + (tpar * L[None])[..., None] * bd.tangents[None]
        dseg = np.hypot(*(T[:, None, :] - foot).transpose(2, 0, 1))
        dist[c0:c0 + chunk] = dseg.min(axis=1)
        near = dseg < near_factor * L[None]
        # regular rule for separated pairs whose kernel has not decayed away
        ti, si = np.nonzero(~near & (abs(k.imag) * dseg <= DECAY_CUTOFF))
        if len(ti):
            y = bd.A[si][:, None, :] + (xq[None, :] * L[si][:, None])[..., None] * bd.tangents[si][:, None, :]
            d = y - T[ti][:, None, :]
            r = np.hypot(d[..., 0], d[..., 1])
            uy = u[sn[si, 0]][:, None] * (1 - xq)[None] + u[sn[si, 1]][:, None] * xq[None]
            qy = q[sn[si, 0]][:, None] * (1 - xq)[None] + q[sn[si, 1]][:, None] * xq[None]
            dn = np.einsum("pqd,pd->pq", d, bd.normals[si])
            val = (green(k, r) * qy - green_h1(k, r) * dn / r * uy) @ wq * L[si]
            np.add.at(out, c0 + ti, val)
        ti, si = np.nonzero(near)
        if len(ti):
            t0 = tpar[ti, si]
            # graded nodes on both sides of the foot point
            left = t0[:, None] - t0[:, None] * gn[None]
            right = t0[:, None] + (1 - t0)[:, None] * gn[None]
            par = np.concatenate([left, right], axis=1)
            wts = np.concatenate([t0[:, None] * gw[None], (1 - t0)[:, None] * gw[None]], axis=1)
            y = bd.A[si][:, None, :] + (par * L[si][:, None])[..., None] * bd.tangents[si][:, None, :]
            d = y - T[ti][:, None, :]
            r = np.maximum(np.hypot(d[..., 0], d[..., 1]), 1e-300)
            uy = u[sn[si, 0]][:, None] * (1 - par) + u[sn[si, 1]][:, None] * par
            qy = q[sn[si, 0]][:, None] * (1 - par) + q[sn[si, 1]][:, None] * par
            dn = np.einsum("pqd,pd->pq", d, bd.normals[si])
            val = np.sum((green(k, r) * qy - green_h1(k, r) * dn / r * uy) * wts, axis=1) * L[si]
            np.add.at(out, c0 + ti, val)
    return out, dist
