"""Damped nonlinear least squares and the Gaussian peak models built on it.

The solver is a plain Levenberg-Marquardt loop with analytic Jacobians:
normal equations with a multiplicative damping term on the Hessian diagonal,
damping lowered on accepted steps and raised on rejected ones. Accepted steps
never increase the weighted residual norm. Convergence is declared when the
relative parameter step drops below 1e-10; the iteration cap is 200, after
which the best point so far is returned with converged=False (callers that
need a hard guarantee check the flag).
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .errors import DegenerateInput

REL_STEP_TOL = 1e-10
MAX_ITERATIONS = 200


@dataclasses.dataclass
class LMResult:
    params: np.ndarray
    covariance: np.ndarray
    converged: bool
    iterations: int
    residual_norm: float
    cost_history: tuple[float, ...]


def damped_least_squares(fun, jac, p0, max_iter: int = MAX_ITERATIONS,
                         rel_step_tol: float = REL_STEP_TOL) -> LMResult:
    """Minimize 0.5 * ||fun(p)||^2 with analytic Jacobian jac(p).

    fun returns the residual vector (weights already folded in by the
    caller), jac its derivative with shape (n_residuals, n_params).
    The returned covariance is pinv(J^T J) at the solution, unscaled.
    """
    p = np.asarray(p0, dtype=float).copy()
    r = np.asarray(fun(p), dtype=float)
    cost = float(r @ r)
    lam = 1e-3
    history = [cost]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        jmat = np.asarray(jac(p), dtype=float)
        grad = jmat.T @ r
        hess = jmat.T @ jmat
        diag = np.diag(hess).copy()
        floor = 1e-12 * max(diag.max(), 1.0)
        diag[diag < floor] = floor
        accepted = False
        for _ in range(60):
            try:
                step = np.linalg.solve(hess + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(hess + lam * np.diag(diag), -grad,
                                       rcond=None)[0]
            p_new = p + step
            r_new = np.asarray(fun(p_new), dtype=float)
            cost_new = float(r_new @ r_new)
            if math.isfinite(cost_new) and cost_new <= cost:
                rel = np.linalg.norm(step) / (np.linalg.norm(p) + 1e-300)
                p, r, cost = p_new, r_new, cost_new
                history.append(cost)
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                if rel < rel_step_tol:
                    converged = True
                break
            lam *= 10.0
            if lam > 1e14:
                break
        if converged or not accepted:
            break

    jmat = np.asarray(jac(p), dtype=float)
    cov = np.linalg.pinv(jmat.T @ jmat)
    return LMResult(params=p, covariance=cov, converged=converged,
                    iterations=it, residual_norm=math.sqrt(cost),
                    cost_history=tuple(history))


@dataclasses.dataclass
class GaussianFit:
    """Result of a Gaussian peak fit.

    params maps parameter names to fitted values; covariance rows/columns
    follow param_names order. converged=False means the best point reached
    within the iteration budget is reported.
    """

    params: dict[str, float]
    param_names: tuple[str, ...]
    covariance: np.ndarray
    converged: bool
    iterations: int
    residual_norm: float

    def stderr(self, name: str) -> float:
        i = self.param_names.index(name)
        v = self.covariance[i, i]
        return math.sqrt(v) if v > 0 else 0.0


# --- 1D model: A exp(-(x-mu)^2 / 2 sigma^2) + c ------------------------------

def gauss1d_model(p, x):
    a, mu, sigma, c = p
    z = (x - mu) / sigma
    return a * np.exp(-0.5 * z * z) + c


def gauss1d_jacobian(p, x):
    a, mu, sigma, c = p
    z = (x - mu) / sigma
    e = np.exp(-0.5 * z * z)
    jac = np.empty((x.size, 4))
    jac[:, 0] = e
    jac[:, 1] = a * e * z / sigma
    jac[:, 2] = a * e * z * z / sigma
    jac[:, 3] = 1.0
    return jac


def _moment_init_1d(x, y):
    base = float(np.min(y))
    amp = float(np.max(y) - base)
    w = np.clip(y - base, 0.0, None)
    tot = w.sum()
    if tot <= 0 or amp <= 0:
        return np.array([max(amp, 1.0), float(np.mean(x)),
                         (x.max() - x.min()) / 4.0 or 1.0, base])
    mu = float((w * x).sum() / tot)
    var = float((w * (x - mu) ** 2).sum() / tot)
    sigma = math.sqrt(var) if var > 0 else (x.max() - x.min()) / 4.0
    if sigma <= 0:
        sigma = 1.0
    return np.array([amp, mu, sigma, base])


def fit_gaussian_1d(x, y, weights=None) -> GaussianFit:
    """Fit A exp(-(x-mu)^2/2sigma^2) + c to (x, y).

    weights are inverse variances when given (count-like data typically uses
    1/max(count, 1)); without weights the covariance is scaled by the reduced
    chi-square. Needs at least 5 points, else DegenerateInput.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    keep = np.isfinite(x) & np.isfinite(y)
    if weights is not None:
        weights = np.asarray(weights, dtype=float).ravel()
        keep &= np.isfinite(weights) & (weights > 0)
    x, y = x[keep], y[keep]
    if x.size < 5:
        raise DegenerateInput(f"need at least 5 points, got {x.size}")
    if np.ptp(y) == 0:
        raise DegenerateInput("flat input has no peak to fit")
    sw = np.sqrt(weights[keep]) if weights is not None else None

    def fun(p):
        r = gauss1d_model(p, x) - y
        return r * sw if sw is not None else r

    def jac(p):
        jmat = gauss1d_jacobian(p, x)
        return jmat * sw[:, None] if sw is not None else jmat

    res = damped_least_squares(fun, jac, _moment_init_1d(x, y))
    return _package_fit(res, ("amplitude", "center", "sigma", "offset"),
                        sigma_slots=(2,), n_points=x.size,
                        scale_cov=weights is None)


# --- 2D model on the rotated +- frame ---------------------------------------
# A exp(-u+^2/2 s+^2 - u-^2/2 s-^2) + c, u+- = ((a-ca) +- (b-cb))/sqrt(2)

def gauss2d_model(p, a, b):
    amp, ca, cb, sp, sm, c = p
    up = ((a - ca) + (b - cb)) / math.sqrt(2.0)
    um = ((a - ca) - (b - cb)) / math.sqrt(2.0)
    return amp * np.exp(-0.5 * (up / sp) ** 2 - 0.5 * (um / sm) ** 2) + c


def gauss2d_jacobian(p, a, b):
    amp, ca, cb, sp, sm, c = p
    up = ((a - ca) + (b - cb)) / math.sqrt(2.0)
    um = ((a - ca) - (b - cb)) / math.sqrt(2.0)
    e = np.exp(-0.5 * (up / sp) ** 2 - 0.5 * (um / sm) ** 2)
    s2 = math.sqrt(2.0)
    jac = np.empty((a.size, 6))
    jac[:, 0] = e
    jac[:, 1] = amp * e * (up / sp ** 2 + um / sm ** 2) / s2
    jac[:, 2] = amp * e * (up / sp ** 2 - um / sm ** 2) / s2
    jac[:, 3] = amp * e * up * up / sp ** 3
    jac[:, 4] = amp * e * um * um / sm ** 3
    jac[:, 5] = 1.0
    return jac


def _moment_init_2d(a, b, v):
    base = float(np.percentile(v, 5.0))
    w = np.clip(v - base, 0.0, None)
    tot = w.sum()
    amp = float(v.max() - base)
    if tot <= 0 or amp <= 0:
        span = max(np.ptp(a), np.ptp(b), 1.0)
        return np.array([max(amp, 1.0), a.mean(), b.mean(),
                         span / 4, span / 4, base])
    ca = float((w * a).sum() / tot)
    cb = float((w * b).sum() / tot)
    va = float((w * (a - ca) ** 2).sum() / tot)
    vb = float((w * (b - cb) ** 2).sum() / tot)
    cab = float((w * (a - ca) * (b - cb)).sum() / tot)
    vp = max((va + vb) / 2 + cab, 1e-6)
    vm = max((va + vb) / 2 - cab, 1e-6)
    return np.array([amp, ca, cb, math.sqrt(vp), math.sqrt(vm), base])


def fit_gaussian_2d(values, coords_a, coords_b, mask=None,
                    weights=None) -> GaussianFit:
    """Fit the rotated-frame 2D Gaussian to a table of values.

    coords_a / coords_b are the physical coordinates of rows / columns;
    masked cells (mask True) are excluded from the residuals. Needs at least
    12 usable cells. sigma_plus / sigma_minus are the widths along the
    (a+b) and (a-b) diagonals (scaled by 1/sqrt(2)).
    """
    values = np.asarray(values, dtype=float)
    aa, bb = np.meshgrid(np.asarray(coords_a, dtype=float),
                         np.asarray(coords_b, dtype=float), indexing="ij")
    keep = np.isfinite(values)
    if mask is not None:
        keep &= ~np.asarray(mask, dtype=bool)
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        keep &= np.isfinite(weights) & (weights > 0)
    a, b, v = aa[keep], bb[keep], values[keep]
    if v.size < 12:
        raise DegenerateInput(f"need at least 12 unmasked cells, got {v.size}")
    if np.ptp(v) == 0:
        raise DegenerateInput("flat table has no peak to fit")
    sw = np.sqrt(weights[keep]) if weights is not None else None

    def fun(p):
        r = gauss2d_model(p, a, b) - v
        return r * sw if sw is not None else r

    def jac(p):
        jmat = gauss2d_jacobian(p, a, b)
        return jmat * sw[:, None] if sw is not None else jmat

    res = damped_least_squares(fun, jac, _moment_init_2d(a, b, v))
    return _package_fit(
        res, ("amplitude", "center_a", "center_b",
              "sigma_plus", "sigma_minus", "offset"),
        sigma_slots=(3, 4), n_points=v.size, scale_cov=weights is None)


def _package_fit(res: LMResult, names, sigma_slots, n_points,
                 scale_cov) -> GaussianFit:
    p = res.params.copy()
    for i in sigma_slots:
        p[i] = abs(p[i])
    cov = res.covariance
    dof = n_points - p.size
    if scale_cov and dof > 0:
        cov = cov * (res.residual_norm ** 2 / dof)
    return GaussianFit(params=dict(zip(names, p.tolist())),
                       param_names=tuple(names), covariance=cov,
                       converged=res.converged, iterations=res.iterations,
                       residual_norm=res.residual_norm)
