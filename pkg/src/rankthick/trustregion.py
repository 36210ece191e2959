"""Trust-region multi-objective attack on feature-pair rankings.

Each frozen (salient, non-salient) pair contributes one objective: its gap.
The prediction-and-input deviation is folded into a single constraint map
F(x) = [probs(x) - probs(x0), (eps_f/eps_x) * (x - x0)] so that
||F(x)||_inf <= eps_f simultaneously caps prediction drift at eps_f and
input drift at eps_x. The infinity norm is the convex norm throughout
(Lipschitz constant 1), which makes the trust-region subproblem a linear
program solved exactly by a dense simplex/HiGHS routine.

Merit functions phi_l = ||F(x)|| + |h_l(x) - t_l| track per-pair targets
t_l; targets only move on accepted steps and maintain phi_l = eps_f
exactly, which is what keeps the attack stealthy. Criticality chi_l is the
best linearized merit reduction within a unit radius; objectives whose
chi_l falls below the tolerance can no longer be attacked and are removed.
The target-update branch uses the gap at the accepted iterate against the
old target (the reduction argument that preserves the invariants).
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linprog

from .attack import AttackTrace, IterationRecord, frozen_pairs
from .explain import apply_postprocess, top_k


class _TrProblem:
    """Frozen attack context: model, anchor point, pair set, scaling."""

    def __init__(self, m, x0, k, eps_f, eps_x, postprocess, pairs=None):
        self.m = m
        self.x0 = np.asarray(x0, dtype=float).copy()
        self.k = k
        self.eps_f = float(eps_f)
        self.eps_x = float(eps_x)
        self.scale = self.eps_f / self.eps_x
        self.postprocess = postprocess
        self.c0 = m.predicted_class(self.x0)
        self.p0 = m.prob_vector(self.x0)
        clean = apply_postprocess(m.grad_input(self.x0, self.c0), postprocess)
        self.pairs = pairs if pairs is not None else frozen_pairs(clean, k)
        self.n = len(self.x0)
        self.clean_topk = set(top_k(clean, max(1, min(k, self.n))))

    def fdev(self, x):
        return np.concatenate(
            [self.m.prob_vector(x) - self.p0, self.scale * (x - self.x0)]
        )

    def jac(self, x):
        rows = [self.m.grad_input(x, c) for c in range(self.m.n_classes)]
        return np.vstack([np.array(rows), self.scale * np.eye(self.n)])

    def scores(self, x):
        return apply_postprocess(self.m.grad_input(x, self.c0), self.postprocess)

    def gaps(self, x, scores=None):
        s = self.scores(x) if scores is None else scores
        return np.array([s[i] - s[j] for i, j in self.pairs])

    def gap_grads(self, x):
        h = self.m.hessian_input(x, self.c0)
        if self.postprocess != "raw":
            raw = self.m.grad_input(x, self.c0)
            h = np.sign(raw)[:, None] * h
        return np.array([h[i] - h[j] for i, j in self.pairs])


def merit_value(m, x, x0, pair, t, k=8, eps_f=0.01, eps_x=1.0, postprocess="abs"):
    """phi = ||fdev(x)||_inf + |h_pair(x) - t| anchored at x0."""
    prob = _TrProblem(m, x0, k, eps_f, eps_x, postprocess, pairs=[tuple(pair)])
    s = prob.scores(x)
    i, j = pair
    return float(
        np.max(np.abs(prob.fdev(np.asarray(x, dtype=float))))
        + abs((s[i] - s[j]) - t)
    )


def tr_subproblem(J, f_dev, g_list, h_vals, t_vals, delta):
    """Exact LP solution of min_alpha,d alpha s.t. every linearized merit
    <= alpha and ||d||_inf <= delta.

    J is the (p, n) Jacobian of the deviation map, applied as J @ d.
    Returns (alpha, d); d = 0 is always feasible, so the LP cannot be
    infeasible.
    """
    J = np.asarray(J, dtype=float)
    f_dev = np.asarray(f_dev, dtype=float)
    G = np.asarray(g_list, dtype=float)
    h_vals = np.asarray(h_vals, dtype=float)
    t_vals = np.asarray(t_vals, dtype=float)
    p, n = J.shape
    mm = len(G)
    # variables: d (n), u (1), w (mm), alpha (1)
    nv = n + 1 + mm + 1
    iu, iw, ia = n, n + 1, n + 1 + mm
    cost = np.zeros(nv)
    cost[ia] = 1.0
    rows, rhs = [], []
    for sgn in (1.0, -1.0):
        block = np.zeros((p, nv))
        block[:, :n] = sgn * J
        block[:, iu] = -1.0
        rows.append(block)
        rhs.append(-sgn * f_dev)
    for sgn in (1.0, -1.0):
        block = np.zeros((mm, nv))
        block[:, :n] = sgn * G
        block[np.arange(mm), iw + np.arange(mm)] = -1.0
        rows.append(block)
        rhs.append(-sgn * (h_vals - t_vals))
    block = np.zeros((mm, nv))
    block[:, iu] = 1.0
    block[np.arange(mm), iw + np.arange(mm)] = 1.0
    block[:, ia] = -1.0
    rows.append(block)
    rhs.append(np.zeros(mm))
    A_ub = np.vstack(rows)
    b_ub = np.concatenate(rhs)
    bounds = (
        [(-delta, delta)] * n + [(0, None)] + [(0, None)] * mm + [(None, None)]
    )
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if not res.success:
        raise RuntimeError(f"trust-region LP failed: {res.message}")
    d = res.x[:n]
    return float(res.fun), d


def _linearized_merit(J, f_dev, g, h, t, d):
    return float(
        np.max(np.abs(f_dev + J @ d)) + abs(h + g @ d - t)
    )


def criticality(m, x, x0, pair, t, delta, k=8, eps_f=0.01, eps_x=1.0, postprocess="abs"):
    """Best linearized merit reduction within radius delta; >= 0, and zero at
    a critical point of the pair's merit."""
    if delta <= 0:
        raise ValueError("delta must be > 0")
    prob = _TrProblem(m, x0, k, eps_f, eps_x, postprocess, pairs=[tuple(pair)])
    x = np.asarray(x, dtype=float)
    F = prob.fdev(x)
    J = prob.jac(x)
    s = prob.scores(x)
    i, j = pair
    h = s[i] - s[j]
    g = prob.gap_grads(x)[0]
    l0 = float(np.max(np.abs(F)) + abs(h - t))
    alpha, _ = tr_subproblem(J, F, [g], [h], [t], delta)
    return max(l0 - alpha, 0.0)


def _chi_all(F, J, h, G, targets, active, radius=1.0):
    chis = np.full(len(h), np.nan)
    l0_all = np.max(np.abs(F)) + np.abs(h - targets)
    for ell in np.nonzero(active)[0]:
        alpha, _ = tr_subproblem(J, F, [G[ell]], [h[ell]], [targets[ell]], radius)
        chis[ell] = max(float(l0_all[ell]) - alpha, 0.0)
    return chis


def tr_moo_attack(
    m,
    x,
    k,
    eps_f=0.01,
    delta1=0.1,
    eta=0.1,
    gamma_tr=0.5,
    max_iters=200,
    eps_x=1.0,
    crit_tol=1e-6,
    postprocess="abs",
    pairs=None,
) -> AttackTrace:
    """Run the trust-region multi-objective attack until a pair flips, every
    objective is removed as uncriticizable, or max_iters."""
    if not (0 < eta < 1 and 0 < gamma_tr < 1):
        raise ValueError("eta and gamma_tr must lie in (0, 1)")
    if delta1 <= 0 or eps_f <= 0 or eps_x <= 0:
        raise ValueError("delta1, eps_f, eps_x must be > 0")
    prob = _TrProblem(m, x, k, eps_f, eps_x, postprocess, pairs=pairs)
    x0 = prob.x0
    xt = x0.copy()
    mpairs = len(prob.pairs)

    s = prob.scores(xt)
    h = prob.gaps(xt, s)
    h_init = h.copy()
    targets = h - eps_f  # fdev is zero at the anchor
    active = np.ones(mpairs, dtype=bool)
    delta = float(delta1)
    removed = 0
    accepted = rejected = 0
    history = []
    records = []
    first_flip = None

    def snapshot(it, s, h, xt, fdev_norm):
        cur_topk = set(top_k(s, k))
        records.append(
            IterationRecord(
                it=it,
                x=xt.copy(),
                delta_norm=float(np.linalg.norm(xt - x0)),
                objective=float(np.min(h)),
                patk=len(prob.clean_topk & cur_topk) / k,
                flipped_pairs=int(np.sum(h < 0.0)),
                constraints=(float(np.min(h)), fdev_norm),
                gammas=None,
                prediction=int(np.argmax(m.prob_vector(xt))),
                pred_dev=float(np.max(np.abs(m.prob_vector(xt) - prob.p0))),
            )
        )

    snapshot(0, s, h, xt, 0.0)
    if np.any(h < 0.0):
        first_flip = 0
    else:
        for it in range(1, max_iters + 1):
            F = prob.fdev(xt)
            J = prob.jac(xt)
            s = prob.scores(xt)
            h = prob.gaps(xt, s)
            G = prob.gap_grads(xt)

            chis = _chi_all(F, J, h, G, targets, active)
            newly_stuck = active & (chis < crit_tol)
            removed += int(np.sum(newly_stuck))
            active &= ~newly_stuck
            if not np.any(active):
                break

            idx = np.nonzero(active)[0]
            alpha, d = tr_subproblem(
                J, F, G[idx], h[idx], targets[idx], delta
            )
            merits = np.max(np.abs(F)) + np.abs(h - targets)
            pred_red = np.array(
                [
                    merits[ell]
                    - _linearized_merit(J, F, G[ell], h[ell], targets[ell], d)
                    for ell in idx
                ]
            )
            x_new = xt + d
            F_new = prob.fdev(x_new)
            s_new = prob.scores(x_new)
            h_new = prob.gaps(x_new, s_new)
            fnorm_new = float(np.max(np.abs(F_new)))
            merits_new = fnorm_new + np.abs(h_new - targets)
            actual_red = merits[idx] - merits_new[idx]
            rho = actual_red / np.maximum(pred_red, 1e-18)

            if np.min(rho) > eta and np.all(pred_red > 0):
                for ell in idx:
                    phi_old = merits[ell]
                    phi_at_new = fnorm_new + abs(h_new[ell] - targets[ell])
                    if h_new[ell] >= targets[ell]:
                        targets[ell] += phi_at_new - phi_old
                    else:
                        targets[ell] = (
                            2.0 * h_new[ell] - targets[ell] + phi_at_new - phi_old
                        )
                xt = x_new
                accepted += 1
                snapshot(it, s_new, h_new, xt, fnorm_new)
                history.append(
                    {
                        "iter": it,
                        "accepted": True,
                        "targets": targets.tolist(),
                        "active": active.tolist(),
                        "fdev_norm": fnorm_new,
                    }
                )
                if np.any(h_new < 0.0):
                    first_flip = it
                    break
            else:
                delta *= gamma_tr
                rejected += 1
                snapshot(it, s, h, xt, float(np.max(np.abs(F))))
                history.append(
                    {
                        "iter": it,
                        "accepted": False,
                        "targets": targets.tolist(),
                        "active": active.tolist(),
                        "fdev_norm": float(np.max(np.abs(F))),
                    }
                )
                if delta < 1e-14:
                    break

    h_final = prob.gaps(xt)
    return AttackTrace(
        records=records,
        x_adv=xt,
        first_flip_iter=first_flip,
        budget_used=float(np.linalg.norm(xt - x0)),
        metadata={
            "attack": "tr_moo",
            "k": k,
            "n_pairs": mpairs,
            "eps_f": eps_f,
            "eps_x": eps_x,
            "eta": eta,
            "gamma_tr": gamma_tr,
            "delta1": delta1,
            "crit_tol": crit_tol,
            "removed_objectives": removed,
            "accepted_steps": accepted,
            "rejected_steps": rejected,
            # Theorem-style iteration bound ceil(m (h_up - h_low) kappa/eps^2)
            # is reported through its observable pieces; the constant kappa
            # depends on unobservable Lipschitz constants.
            "h_up": float(np.max(h_init)),
            "h_low": float(np.min(np.concatenate([h_final, h_init]))),
            "target_history": history,
        },
    )
