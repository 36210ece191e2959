"""Shared independent oracles used by unit and acceptance tests."""

import numpy as np


def simplex_grid(n_parts, resolution):
    """All points of the (n_parts-1)-simplex with coordinates i/resolution."""
    if n_parts != 4:
        raise NotImplementedError("only 4-part grids are needed")
    r = resolution
    i, j, k = np.meshgrid(
        np.arange(r + 1), np.arange(r + 1), np.arange(r + 1), indexing="ij"
    )
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    mask = i + j + k <= r
    i, j, k = i[mask], j[mask], k[mask]
    pts = np.stack([i, j, k, r - i - j - k], axis=1).astype(float) / r
    return pts


def grid_qp_objective(gamma, G):
    e = gamma @ G
    return 0.5 * np.sum(e * e, axis=-1)


def grid_qp_oracle(G, resolution=180, refine_rounds=3, refine_span=10):
    """Grid search for min ||sum gamma_k g_k||^2/2 on the simplex, followed by
    progressively finer local grids around the incumbent."""
    G = np.asarray(G, dtype=float)
    pts = simplex_grid(4, resolution)
    objs = grid_qp_objective(pts, G)
    best = pts[np.argmin(objs)]
    best_obj = float(np.min(objs))
    step = 1.0 / resolution
    for _ in range(refine_rounds):
        step /= refine_span
        offs = np.arange(-refine_span, refine_span + 1) * step
        a, b, c = np.meshgrid(offs, offs, offs, indexing="ij")
        cand = np.stack(
            [
                best[0] + a.ravel(),
                best[1] + b.ravel(),
                best[2] + c.ravel(),
                best[3] - (a.ravel() + b.ravel() + c.ravel()),
            ],
            axis=1,
        )
        cand = cand[np.all(cand >= 0.0, axis=1)]
        if len(cand) == 0:
            continue
        objs = grid_qp_objective(cand, G)
        idx = int(np.argmin(objs))
        if objs[idx] < best_obj:
            best_obj = float(objs[idx])
            best = cand[idx]
    return best, best_obj


def tr_grid_oracle(J, f_dev, G, h_vals, t_vals, delta, stages=14, res=200, shrink=0.4):
    """Multi-stage dense grid search for the 2-d trust-region subproblem:
    min over ||d||_inf <= delta of max_l [||F + J d||_inf + |h_l + g_l.d - t_l|].

    Boxes shrink slowly (wide overlap) so the search can slide along the
    nearly-flat valleys of the piecewise-linear objective.
    """
    J = np.asarray(J, dtype=float)
    f_dev = np.asarray(f_dev, dtype=float)
    G = np.asarray(G, dtype=float)
    h_vals = np.asarray(h_vals, dtype=float)
    t_vals = np.asarray(t_vals, dtype=float)

    def batch_value(D):
        dev = np.max(np.abs(f_dev[None, :] + D @ J.T), axis=1)
        obj = np.abs(h_vals[None, :] + D @ G.T - t_vals[None, :])
        return dev + np.max(obj, axis=1)

    center = np.zeros(2)
    span = delta
    best_d = center
    best_val = float(batch_value(center[None, :])[0])
    for _ in range(stages):
        axis = np.linspace(-span, span, res + 1)
        dx, dy = np.meshgrid(axis, axis, indexing="ij")
        D = np.stack([center[0] + dx.ravel(), center[1] + dy.ravel()], axis=1)
        D = np.clip(D, -delta, delta)
        vals = batch_value(D)
        idx = int(np.argmin(vals))
        if vals[idx] < best_val:
            best_val = float(vals[idx])
            best_d = D[idx]
        center = best_d
        span *= shrink
    return best_d, best_val


def pearson_textbook(xs, ys):
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    xm, ym = xs - xs.mean(), ys - ys.mean()
    return float(np.sum(xm * ym) / np.sqrt(np.sum(xm**2) * np.sum(ym**2)))
