"""Q2/Q1 (Taylor-Hood) assembly on the structured reference grid.

Unknown layout: ``[v1 (nv), v2 (nv), p (npres)]`` where velocity lives on the
midpoint-refined node grid (``2nx+1 x 2ny+1``, flat index ``i*NY + j``) and
pressure on the cell vertices (flat index ``i*(ny+1) + j``).

All integrals are over the reference rectangle; a deformation enters only
through ``J`` and ``F^{-1}`` sampled at the quadrature points.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .grid import Grid

_GP = np.array([0.5 - np.sqrt(0.15), 0.5, 0.5 + np.sqrt(0.15)])
_GW = np.array([5.0, 8.0, 5.0]) / 18.0


def _q2_1d(t):
    t = np.asarray(t, dtype=float)
    L = np.stack([2 * (t - 0.5) * (t - 1.0), -4 * t * (t - 1.0), 2 * t * (t - 0.5)])
    dL = np.stack([4 * t - 3.0, -8 * t + 4.0, 4 * t - 1.0])
    return L, dL


def _q1_1d(t):
    t = np.asarray(t, dtype=float)
    return np.stack([1.0 - t, t]), np.stack([-np.ones_like(t), np.ones_like(t)])


class Q2Q1Space:
    def __init__(self, grid: Grid):
        self.grid = grid
        nx, ny = grid.nx, grid.ny
        self.NX, self.NY = 2 * nx + 1, 2 * ny + 1
        self.nv = self.NX * self.NY
        self.npx, self.npy = nx + 1, ny + 1
        self.npres = self.npx * self.npy
        self.ndof = 2 * self.nv + self.npres
        self.vnodes = grid.nodes(2)
        self.pnodes = grid.nodes(1)

        ex, ey = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        ex, ey = ex.ravel(), ey.ravel()
        self.ne = ex.size
        # local node (a, b) -> index 3a + b, matching the basis ordering below
        a, b = np.meshgrid(np.arange(3), np.arange(3), indexing="ij")
        self.elem_v = (2 * ex[:, None] + a.ravel()[None]) * self.NY + (2 * ey[:, None] + b.ravel()[None])
        a1, b1 = np.meshgrid(np.arange(2), np.arange(2), indexing="ij")
        self.elem_p = (ex[:, None] + a1.ravel()[None]) * self.npy + (ey[:, None] + b1.ravel()[None])

        hx, hy = grid.hx, grid.hy
        qx, qy = np.meshgrid(_GP, _GP, indexing="ij")
        qx, qy = qx.ravel(), qy.ravel()
        self.w = np.outer(_GW, _GW).ravel() * hx * hy
        Lx, dLx = _q2_1d(qx)
        Ly, dLy = _q2_1d(qy)
        # phi[q, k], dphi[q, k, dir] with k = 3a + b
        self.phi = np.einsum("aq,bq->qab", Lx, Ly).reshape(9, 9)
        self.dphi = np.stack([
            np.einsum("aq,bq->qab", dLx / hx, Ly).reshape(9, 9),
            np.einsum("aq,bq->qab", Lx, dLy / hy).reshape(9, 9),
        ], axis=-1)
        Px, _ = _q1_1d(qx)
        Py, _ = _q1_1d(qy)
        self.psi = np.einsum("aq,bq->qab", Px, Py).reshape(9, 4)
        self.qpoints = np.stack([
            grid.x0 + hx * (ex[:, None] + qx[None]),
            grid.y0 + hy * (ey[:, None] + qy[None]),
        ], axis=-1)  # (ne, 9, 2)

        # COO index patterns
        self._vv_rows = np.repeat(self.elem_v, 9, axis=1).ravel()
        self._vv_cols = np.tile(self.elem_v, (1, 9)).ravel()
        self._pv_rows = np.repeat(self.elem_p, 9, axis=1).ravel()
        self._pv_cols = np.tile(self.elem_v, (1, 4)).ravel()

    # --- node sets ---------------------------------------------------------

    def node_index(self, i, j):
        return np.asarray(i) * self.NY + np.asarray(j)

    def wall_nodes(self):
        """Flat indices of the lower and upper wall rows, shape (2, NX)."""
        i = np.arange(self.NX)
        return np.stack([self.node_index(i, 0), self.node_index(i, self.NY - 1)])

    def boundary_nodes(self):
        X, Y = np.meshgrid(np.arange(self.NX), np.arange(self.NY), indexing="ij")
        on = (X == 0) | (X == self.NX - 1) | (Y == 0) | (Y == self.NY - 1)
        return np.flatnonzero(on.ravel())

    # --- scatter helpers ---------------------------------------------------

    def _vv(self, Ke):
        return sp.csr_matrix((Ke.ravel(), (self._vv_rows, self._vv_cols)), shape=(self.nv, self.nv))

    def _pv(self, Be):
        return sp.csr_matrix((Be.ravel(), (self._pv_rows, self._pv_cols)), shape=(self.npres, self.nv))

    # --- operators ---------------------------------------------------------

    def mass(self, J):
        Me = np.einsum("q,eq,qk,ql->ekl", self.w, J, self.phi, self.phi)
        return self._vv(Me)

    def stiffness(self, J, Finv):
        G = J[..., None, None] * np.einsum("eqia,eqja->eqij", Finv, Finv)
        Ae = np.einsum("q,eqab,qka,qlb->ekl", self.w, G, self.dphi, self.dphi)
        return self._vv(Ae)

    def divergence(self, J, Finv):
        """``B`` with ``(B v)_m = int psi_m J tr(grad v F^{-1})``; shape (npres, 2 nv)."""
        K = J[..., None, None] * np.swapaxes(Finv, -1, -2)  # J F^{-T}
        blocks = []
        for i in range(2):
            Be = np.einsum("q,qm,eqa,qka->emk", self.w, self.psi, K[:, :, i, :], self.dphi)
            blocks.append(self._pv(Be))
        return sp.hstack(blocks).tocsr()

    def interpolate(self, vflat, comps=2):
        """Values and reference gradients of a Q2 field at quadrature points."""
        v = vflat.reshape(comps, self.nv)
        loc = v[:, self.elem_v]  # (c, ne, 9)
        val = np.einsum("cek,qk->ceq", loc, self.phi)
        grad = np.einsum("cek,qka->ceqa", loc, self.dphi)
        return val, grad

    def convection(self, a, J, Finv, rho):
        """``C(a)`` block-diagonal: ``int rho phi_k (U . grad phi_l)`` with ``U = J F^{-1} a``."""
        val, _ = self.interpolate(a)
        U = J[..., None] * np.einsum("eqji,ieq->eqj", Finv, val)
        S = np.einsum("eqa,qla->eql", U, self.dphi)
        Ce = rho * np.einsum("qk,eql->ekl", self.w[:, None] * self.phi, S, optimize=True)
        C = self._vv(Ce)
        return sp.block_diag([C, C]).tocsr()

    def convection_derivative(self, a, J, Finv, rho):
        """Linearisation in the advected slot: ``w -> rho (grad a) J F^{-1} w``."""
        _, grad = self.interpolate(a)
        D = J[..., None, None] * np.einsum("ieqj,eqjm->eqim", grad, Finv)
        P = (self.w[:, None, None] * self.phi[:, :, None] * self.phi[:, None, :]).reshape(9, 81)
        blocks = [[None, None], [None, None]]
        for i in range(2):
            for m in range(2):
                blocks[i][m] = self._vv(rho * (D[:, :, i, m] @ P))
        return sp.bmat(blocks).tocsr()

    def load(self, fvals, J, rho):
        """``int rho J f . phi`` for ``fvals`` of shape (ne, 9, 2)."""
        out = np.zeros((2, self.nv))
        for i in range(2):
            le = rho * np.einsum("q,eq,eq,qk->ek", self.w, J, fvals[:, :, i], self.phi)
            np.add.at(out[i], self.elem_v, le)
        return out.ravel()

    # --- boundary edges x = const -----------------------------------------

    def edge_points(self, side: str):
        """Quadrature points (ny*3, 2) and weights on the inflow/outflow edge."""
        g = self.grid
        x = g.x0 if side == "inflow" else g.x0 + g.lx
        ey = np.repeat(np.arange(g.ny), 3)
        t = np.tile(_GP, g.ny)
        y = g.y0 + g.hy * (ey + t)
        w = np.tile(_GW, g.ny) * g.hy
        return np.column_stack([np.full_like(y, x), y]), w, ey, t

    def edge_functional(self, side: str, J, Finv):
        """Vector ``q`` with ``q . v = int (J F^{-T} nhat) . v dshat`` (physical flux)."""
        _, w, ey, t = self.edge_points(side)
        i_node = 0 if side == "inflow" else self.NX - 1
        nhat = np.array([-1.0, 0.0]) if side == "inflow" else np.array([1.0, 0.0])
        cof = J[:, None] * np.einsum("nji,j->ni", Finv, nhat)  # J F^{-T} nhat
        Ly, _ = _q2_1d(t)
        q = np.zeros((2, self.nv))
        for b in range(3):
            nodes = self.node_index(i_node, 2 * ey + b)
            for i in range(2):
                np.add.at(q[i], nodes, w * cof[:, i] * Ly[b])
        return q.ravel()

    # --- pressure on velocity nodes ---------------------------------------

    def pressure_on_vnodes(self, p):
        """Bilinear interpolation of the vertex pressure onto the refined node grid."""
        P = p.reshape(self.npx, self.npy)
        out = np.empty((self.NX, self.NY))
        out[::2, ::2] = P
        out[1::2, ::2] = 0.5 * (P[:-1] + P[1:])
        out[:, 1::2] = 0.5 * (out[:, :-2:2] + out[:, 2::2])
        return out
