"""Vectorized numpy implementation of the batched GVA Newton ascent.

Mirrors ``_gva_ext.pyx`` step for step; used when the compiled extension is
unavailable or disabled. Each row of the batch is an independent problem

    maximize  x'Vm - sum_j exp(min(eta_j, clip)) - m'Lm/2 - diag(L)'s/2 + sum(rho)/2
    eta = offset + Vm + (V*V) s / 2,   s = exp(rho),
    subject to max_j |V_j'm| <= bound  (enforced by rescaling m).
"""
import numpy as np

ARMIJO = 1e-4
MAX_HALVINGS = 40
RHO_STEP_CAP = 2.0


class _Problem:
    def __init__(self, V, Linv, bound, eta_clip):
        self.V = V
        self.W2 = V * V
        self.W4 = self.W2 * self.W2
        self.Linv = Linv
        self.Ld = np.diag(Linv).copy()
        self.bound = bound
        self.clip = eta_clip

    def evaluate(self, X, off, M, R):
        """Project M, then return (M, projected, f, eta, A)."""
        Vm = M @ self.V.T
        mx = np.abs(Vm).max(axis=1)
        projected = mx > self.bound
        if projected.any():
            scale = np.where(projected, self.bound / np.where(projected, mx, 1.0), 1.0)
            M = M * scale[:, None]
            Vm = M @ self.V.T
        S = np.exp(R)
        eta = off + Vm + 0.5 * (S @ self.W2.T)
        A = np.exp(np.minimum(eta, self.clip))
        f = (
            (X * Vm).sum(axis=1)
            - A.sum(axis=1)
            - 0.5 * np.einsum("nk,kl,nl->n", M, self.Linv, M)
            - 0.5 * (S @ self.Ld)
            + 0.5 * R.sum(axis=1)
        )
        return M, projected, f, eta, A

    def slope(self, eta, A):
        return np.where(eta > self.clip, 0.0, A)

    def gram(self, dA):
        return np.matmul(self.V.T[None, :, :] * dA[:, None, :], self.V)


def newton_batch(V, X, offset, Linv, m, rho, bound, eta_clip, max_iters, tol,
                 step_init=1.0, backtrack=0.5, want_gram=False):
    prob = _Problem(V, Linv, bound, eta_clip)
    X = np.asarray(X, dtype=float)
    m, _, f, eta, A = prob.evaluate(X, offset, np.array(m, dtype=float), np.asarray(rho, dtype=float))
    rho = np.array(rho, dtype=float)
    n = X.shape[0]
    iters = np.zeros(n, dtype=np.int32)
    conv = np.zeros(n, dtype=bool)
    finite = np.isfinite(f)
    active = np.flatnonzero(finite)

    for _ in range(max_iters):
        if active.size == 0:
            break
        Xa, off, Ma, Ra, fa = X[active], offset[active], m[active], rho[active], f[active]
        Sa = np.exp(Ra)
        dA = prob.slope(eta[active], A[active])
        g_m = (Xa - dA) @ V - Ma @ Linv
        c = dA @ prob.W2 + prob.Ld
        g_r = 0.5 - 0.5 * Sa * c
        h = 0.5 * Sa * c + 0.25 * Sa * Sa * (dA @ prob.W4)
        H = prob.gram(dA) + Linv
        d_m = np.linalg.solve(H, g_m[:, :, None])[:, :, 0]
        d_r = np.clip(g_r / h, -RHO_STEP_CAP, RHO_STEP_CAP)
        dec = (g_m * d_m).sum(axis=1) + (g_r * d_r).sum(axis=1)

        done = dec <= 2.0 * tol * (1.0 + np.abs(fa))
        conv[active[done]] = True
        live = np.flatnonzero(~done)
        t = np.full(live.size, float(step_init))
        pending = np.ones(live.size, dtype=bool)
        accepted = np.zeros(live.size, dtype=bool)
        new_m = Ma[live].copy()
        new_r = Ra[live].copy()
        new_f = fa[live].copy()
        new_eta = np.empty((live.size, X.shape[1]))
        new_A = np.empty_like(new_eta)
        for _ in range(MAX_HALVINGS):
            idx = np.flatnonzero(pending)
            if idx.size == 0:
                break
            li = live[idx]
            Mc = Ma[li] + t[idx, None] * d_m[li]
            Rc = Ra[li] + t[idx, None] * d_r[li]
            Mc, proj, fc, ec, Ac = prob.evaluate(Xa[li], off[li], Mc, Rc)
            target = np.where(proj, fa[li], fa[li] + ARMIJO * t[idx] * dec[li])
            ok = np.isfinite(fc) & (fc >= target)
            hit = idx[ok]
            new_m[hit], new_r[hit], new_f[hit] = Mc[ok], Rc[ok], fc[ok]
            new_eta[hit], new_A[hit] = ec[ok], Ac[ok]
            accepted[hit] = True
            pending[hit] = False
            t[idx[~ok]] *= backtrack

        stalled = live[~accepted]
        conv[active[stalled]] = True
        acc = np.flatnonzero(accepted)
        rows = active[live[acc]]
        small = (new_f[acc] - f[rows]) <= tol * (1.0 + np.abs(f[rows]))
        m[rows], rho[rows], f[rows] = new_m[acc], new_r[acc], new_f[acc]
        eta[rows], A[rows] = new_eta[acc], new_A[acc]
        iters[rows] += 1
        conv[rows[small]] = True
        active = rows[~small]

    clamps = (eta > eta_clip).sum(axis=1).astype(np.int32)
    gram = prob.gram(prob.slope(eta, A)) if want_gram else None
    return {"m": m, "rho": rho, "f": f, "iters": iters, "converged": conv, "clamps": clamps, "gram": gram}
