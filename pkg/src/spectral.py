"""
Laplace transform of the jump kernel and its Perron root.

For t in R^d the matrix (L(t))_{i,j} = sum_x e^{t.x} mu_{i,j}(x) is
non-negative; its Perron root rho(t) is log-convex, rho(0) < 1 for a leaky
kernel, and the level set {rho = 1} is the boundary of a convex body whose
polar dual is the limit shape.
"""
import csv
import logging
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from .config import DEFAULT_SETTINGS, NumericSettings
from .errors import BracketError, ConvergenceError, NumericalGuardError, OverflowGuardError
from .models import BoundarySample, JumpKernel, SpectralPoint

logger = logging.getLogger(__name__)

_BALANCE_SWEEPS = 20


def _balance(matrix: np.ndarray) -> np.ndarray:
    """Diagonal scaling D with D A D^{-1} having comparable row and column sums."""
    p = matrix.shape[0]
    scale = np.ones(p)
    off = matrix * (1.0 - np.eye(p))
    for _ in range(_BALANCE_SWEEPS):
        changed = False
        for i in range(p):
            col = np.sum(off[:, i] * scale) / scale[i]
            row = np.sum(off[i] / scale) * scale[i]
            if row <= 0 or col <= 0:
                continue
            factor = np.sqrt(col / row)
            if abs(factor - 1.0) > 1e-3:
                scale[i] *= factor
                changed = True
        if not changed:
            break
    return scale


def _perron_vector(matrix: np.ndarray, tol: float, cap: int) -> Tuple[float, np.ndarray]:
    p = matrix.shape[0]
    scale = _balance(matrix)
    balanced = matrix * scale[:, None] / scale[None, :]
    shift = balanced.sum(axis=1).max()
    if shift <= 0:
        return 0.0, np.full(p, 1.0 / p)
    shifted = balanced + shift * np.eye(p)
    vector = np.full(p, 1.0 / p)
    for iteration in range(cap):
        image = shifted @ vector
        vector = image / image.sum()
        applied = balanced @ vector
        rho = float(applied.sum())
        residual = float(np.max(np.abs(applied - rho * vector)))
        if residual <= tol * max(rho, 1e-300):
            logger.debug("power iteration converged after %d steps", iteration + 1)
            # undo the similarity: right vectors of A are D^{-1} times those of D A D^{-1}
            original = vector / scale
            return rho, original / original.sum()
    raise ConvergenceError(f"power iteration did not converge in {cap} steps (matrix not primitive?)")


def spectral_radius(matrix, settings: NumericSettings = DEFAULT_SETTINGS) -> Tuple[float, np.ndarray, np.ndarray]:
    """Perron root and normalized right/left Perron vectors of a non-negative matrix.

    Power iteration runs on the balanced and shifted matrix D A D^{-1} + sI,
    which is primitive whenever A is irreducible, so periodic kernels
    converge too.

    Args:
        matrix: Square non-negative matrix.
        settings: Supplies the relative tolerance and the iteration cap.

    Returns:
        (rho, right, left) with right and left of unit 1-norm.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError("spectral radius needs a square matrix")
    if np.any(matrix < 0):
        raise ValueError("spectral radius needs a non-negative matrix")
    if matrix.shape[0] == 1:
        return float(matrix[0, 0]), np.ones(1), np.ones(1)
    rho, right = _perron_vector(matrix, settings.power_tol, settings.power_cap)
    _, left = _perron_vector(matrix.T, settings.power_tol, settings.power_cap)
    return rho, right, left


class SpectralSolver:
    """Evaluates rho, its derivatives and its level set for one kernel."""

    def __init__(self, kernel: JumpKernel, settings: NumericSettings = DEFAULT_SETTINGS):
        self.kernel = kernel
        self.settings = settings
        self.offsets = kernel.offsets.astype(float)
        step = kernel.max_step
        self.t_limit = settings.exponent_guard / step if step > 0 else np.inf

    def _guard(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float).reshape(self.kernel.dimension)
        if np.max(np.abs(t), initial=0.0) > self.t_limit:
            raise OverflowGuardError(
                f"|t|_inf = {np.max(np.abs(t)):.6g} exceeds {self.t_limit:.6g}"
            )
        return t

    def _weights(self, t: np.ndarray) -> np.ndarray:
        return self.kernel.probs * np.exp(self.offsets @ t)

    def laplace_matrix(self, t) -> np.ndarray:
        """L(t)_{i,j} = sum_x e^{t.x} mu_{i,j}(x)."""
        t = self._guard(t)
        matrix = np.zeros((self.kernel.colors, self.kernel.colors))
        np.add.at(matrix, (self.kernel.sources, self.kernel.targets), self._weights(t))
        return matrix

    def laplace_derivatives(self, t) -> np.ndarray:
        """Stack of dL/dt_k, shape (d, p, p)."""
        t = self._guard(t)
        weights = self._weights(t)
        p = self.kernel.colors
        out = np.zeros((self.kernel.dimension, p, p))
        for k in range(self.kernel.dimension):
            np.add.at(out[k], (self.kernel.sources, self.kernel.targets), weights * self.offsets[:, k])
        return out

    def point(self, t) -> SpectralPoint:
        """rho(t), Perron vectors and the gradient psi^T (dL/dt_k) phi / psi^T phi."""
        t = self._guard(t)
        rho, right, left = spectral_radius(self.laplace_matrix(t), self.settings)
        derivatives = self.laplace_derivatives(t)
        grad = np.einsum("i,kij,j->k", left, derivatives, right) / float(left @ right)
        return SpectralPoint(t, rho, right, left, grad)

    def rho(self, t) -> float:
        return spectral_radius(self.laplace_matrix(t), self.settings)[0]

    def boundary_ray(self, v) -> float:
        """r* > 0 with rho(r* v) = 1, by doubling, Brent bracketing and Newton polish."""
        v = np.asarray(v, dtype=float)
        v = v / np.linalg.norm(v)
        f = lambda r: self.rho(r * v) - 1.0
        if f(0.0) >= 0:
            raise BracketError("rho(0) >= 1: the kernel does not leak")
        r_max = self.t_limit / max(np.max(np.abs(v)), 1e-300)
        lo, hi = 0.0, min(1.0, r_max)
        while f(hi) <= 0:
            if hi >= r_max:
                raise BracketError(f"rho stays below 1 along {v.tolist()} up to r = {r_max:.6g}")
            lo, hi = hi, min(2.0 * hi, r_max)
        r = brentq(f, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
        for _ in range(5):
            sp = self.point(r * v)
            gap = sp.rho - 1.0
            slope = float(sp.grad @ v)
            if abs(gap) <= 1e-15 or slope <= 0:
                break
            r -= gap / slope
        if abs(self.rho(r * v) - 1.0) > self.settings.boundary_tol:
            raise ConvergenceError(f"boundary ray along {v.tolist()} missed the level set")
        return float(r)

    def laplace_second_derivatives(self, t) -> np.ndarray:
        """Stack of d^2 L/dt_k dt_l, shape (d, d, p, p)."""
        t = self._guard(t)
        weights = self._weights(t)
        d, p = self.kernel.dimension, self.kernel.colors
        out = np.zeros((d, d, p, p))
        for k in range(d):
            for l in range(k, d):
                np.add.at(
                    out[k, l],
                    (self.kernel.sources, self.kernel.targets),
                    weights * self.offsets[:, k] * self.offsets[:, l],
                )
                out[l, k] = out[k, l]
        return out

    def _rho_hessian(self, sp: SpectralPoint) -> np.ndarray:
        # second-order perturbation of the Perron pair, psi^T phi = 1:
        # rho_kl = psi^T L_kl phi + psi^T L_k phi_l + psi^T L_l phi_k
        p, d = self.kernel.colors, self.kernel.dimension
        phi = sp.right
        psi = sp.left / float(sp.left @ sp.right)
        first = self.laplace_derivatives(sp.t)
        second = self.laplace_second_derivatives(sp.t)
        bordered = np.zeros((p + 1, p + 1))
        bordered[:p, :p] = sp.rho * np.eye(p) - self.laplace_matrix(sp.t)
        bordered[:p, p] = phi
        bordered[p, :p] = psi
        rhs = np.zeros((p + 1, d))
        rhs[:p] = np.einsum("kij,j->ik", first, phi) - phi[:, None] * sp.grad[None, :]
        dphi = np.linalg.solve(bordered, rhs)[:p]
        cross = np.einsum("i,kij,jl->kl", psi, first, dphi)
        hess = np.einsum("i,klij,j->kl", psi, second, phi) + cross + cross.T
        return 0.5 * (hess + hess.T)

    def hessian(self, t, check: bool = True) -> np.ndarray:
        """Hessian of rho from the perturbation of its Perron pair.

        With check set, positive definiteness is verified by a Cholesky
        factorization when t = 0 or t lies on {rho = 1}.
        """
        sp = self.point(t)
        hess = self._rho_hessian(sp)
        if check:
            self.check_positive_definite(sp, hess)
        return hess

    def check_positive_definite(self, sp: SpectralPoint, hess: np.ndarray) -> None:
        if np.any(sp.t) and abs(sp.rho - 1.0) > 1e-8:
            return
        try:
            np.linalg.cholesky(hess)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"Hessian at {sp.t.tolist()} is not positive definite") from exc

    def log_hessian(self, sp: SpectralPoint) -> np.ndarray:
        """Hessian of log rho at an evaluated point."""
        return self._rho_hessian(sp) / sp.rho - np.outer(sp.grad, sp.grad) / sp.rho ** 2

    def _kkt_newton(self, t: np.ndarray, lam: float, w: np.ndarray) -> Optional[Tuple[np.ndarray, float]]:
        """Newton on grad log rho(t) = lam w, log rho(t) = 0, damped on the residual norm.

        Returns None when the iteration cannot make progress from t.
        """
        d = self.kernel.dimension
        loose_f, loose_gap = self.settings.boundary_tol, self.settings.kkt_tol

        def evaluate(t_, lam_):
            sp_ = self.point(t_)
            grad_ = sp_.grad / sp_.rho
            residual_ = np.concatenate([grad_ - lam_ * w, [np.log(sp_.rho)]])
            return sp_, grad_, residual_

        try:
            sp, grad, residual = evaluate(t, lam)
        except (OverflowGuardError, ConvergenceError):
            return None
        merit = float(np.linalg.norm(residual))
        for _ in range(self.settings.kkt_cap):
            f_gap, n_gap = abs(residual[d]), _normal_gap(grad, w)
            if f_gap <= 0.01 * loose_f and n_gap <= 0.01 * loose_gap:
                return t, lam
            system = np.zeros((d + 1, d + 1))
            system[:d, :d] = self.log_hessian(sp)
            system[:d, d] = -w
            system[d, :d] = grad
            try:
                delta = np.linalg.solve(system, -residual)
            except np.linalg.LinAlgError:
                delta = np.linalg.lstsq(system, -residual, rcond=None)[0]
            step = 1.0
            while step >= 1.0 / 1024:
                trial_t, trial_lam = t + step * delta[:d], lam + step * delta[d]
                try:
                    trial = evaluate(trial_t, trial_lam)
                except (OverflowGuardError, ConvergenceError):
                    step *= 0.5
                    continue
                trial_merit = float(np.linalg.norm(trial[2]))
                if trial_lam > 0 and trial_merit < (1.0 - 1e-4 * step) * merit:
                    break
                step *= 0.5
            else:
                return (t, lam) if f_gap <= loose_f and n_gap <= loose_gap else None
            t, lam = trial_t, trial_lam
            sp, grad, residual = trial
            merit = trial_merit
        f_gap, n_gap = abs(residual[d]), _normal_gap(grad, w)
        return (t, lam) if f_gap <= loose_f and n_gap <= loose_gap else None

    def support(self, u) -> BoundarySample:
        """Maximize t.u over {rho <= 1}.

        The maximizer is the boundary point whose outward normal is u. Starting
        from the boundary point on the ray through u, the prescribed normal is
        moved along the great circle from the normal found there to u, and
        each intermediate point is located by Newton steps on log rho. A step
        along the circle that Newton cannot follow is halved.

        Returns:
            BoundarySample with h(u) = t_u . u and the normalized residual
            |grad rho(t_u)/|grad rho(t_u)| - u|.
        """
        u = np.asarray(u, dtype=float)
        u = u / np.linalg.norm(u)
        t = self.boundary_ray(u) * u
        sp = self.point(t)
        if self.kernel.dimension > 1 and _normal_gap(sp.grad, u) > 0.01 * self.settings.kkt_tol:
            start = sp.grad / np.linalg.norm(sp.grad)
            angle = float(np.arccos(np.clip(start @ u, -1.0, 1.0)))
            lam = float(np.linalg.norm(sp.grad)) / sp.rho
            done, stride = 0.0, 1.0
            while done < 1.0:
                target = min(1.0, done + stride)
                solved = self._kkt_newton(t, lam, _great_circle(start, u, angle, target))
                if solved is None:
                    stride *= 0.5
                    if stride < 1e-6:
                        break
                    continue
                t, lam = solved
                done, stride = target, min(1.0, 2.0 * stride)
            logger.debug("support along %s: normal path covered to %.3g", u.tolist(), done)
            sp = self.point(t)
        residual = _normal_gap(sp.grad, u)
        if residual > self.settings.kkt_tol or abs(sp.rho - 1.0) > self.settings.boundary_tol:
            raise ConvergenceError(
                f"support value along {u.tolist()} stopped at residual {residual:.3g}"
            )
        h = float(t @ u)
        normal = sp.grad / np.linalg.norm(sp.grad)
        return BoundarySample(u, h, t, normal, residual)

    def doob(self, t) -> JumpKernel:
        """Doob transform at a boundary point: (phi_j/phi_i) e^{t.x} mu_{i,j}(x)."""
        sp = self.point(t)
        if abs(sp.rho - 1.0) > self.settings.boundary_tol:
            raise NumericalGuardError(f"t is not on the level set: rho(t) = {sp.rho!r}")
        phi = sp.right
        probs = self._weights(sp.t) * phi[self.kernel.targets] / phi[self.kernel.sources]
        return JumpKernel(
            self.kernel.dimension,
            self.kernel.colors,
            (1.0,) * self.kernel.colors,
            self.kernel.offsets,
            self.kernel.sources,
            self.kernel.targets,
            probs,
        )


def _great_circle(start: np.ndarray, end: np.ndarray, angle: float, s: float) -> np.ndarray:
    """Unit vector a fraction s of the way from start to end."""
    if angle < 1e-12:
        return end
    w = (np.sin((1.0 - s) * angle) * start + np.sin(s * angle) * end) / np.sin(angle)
    return w / np.linalg.norm(w)


def _normal_gap(grad: np.ndarray, u: np.ndarray) -> float:
    norm = np.linalg.norm(grad)
    if norm == 0:
        return float("inf")
    return float(np.linalg.norm(grad / norm - u))


def laplace_matrix(kernel: JumpKernel, t) -> np.ndarray:
    return SpectralSolver(kernel).laplace_matrix(t)


def rho_at(kernel: JumpKernel, t, settings: NumericSettings = DEFAULT_SETTINGS) -> SpectralPoint:
    return SpectralSolver(kernel, settings).point(t)


def boundary_ray(kernel: JumpKernel, v, settings: NumericSettings = DEFAULT_SETTINGS) -> float:
    return SpectralSolver(kernel, settings).boundary_ray(v)


def support_value(kernel: JumpKernel, u, settings: NumericSettings = DEFAULT_SETTINGS) -> BoundarySample:
    return SpectralSolver(kernel, settings).support(u)


def doob_kernel(kernel: JumpKernel, t, settings: NumericSettings = DEFAULT_SETTINGS) -> JumpKernel:
    return SpectralSolver(kernel, settings).doob(t)


def hessian_at(kernel: JumpKernel, t, settings: NumericSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """Central-difference Hessian of rho, checked positive definite at 0 and on {rho = 1}."""
    solver = SpectralSolver(kernel, settings)
    hess = finite_difference_hessian(kernel, t, settings=settings)
    solver.check_positive_definite(solver.point(t), hess)
    return hess


def finite_difference_gradient(kernel: JumpKernel, t, step: Optional[float] = None) -> np.ndarray:
    """Central differences of rho, for checking the perturbation formula."""
    solver = SpectralSolver(kernel)
    t = np.asarray(t, dtype=float)
    h = (step if step is not None else solver.settings.grad_step) * (1.0 + np.linalg.norm(t))
    grad = np.zeros_like(t)
    for k in range(t.size):
        e = np.zeros_like(t)
        e[k] = h
        grad[k] = (solver.rho(t + e) - solver.rho(t - e)) / (2.0 * h)
    return grad


def finite_difference_hessian(
    kernel: JumpKernel, t, step: Optional[float] = None, settings: NumericSettings = DEFAULT_SETTINGS
) -> np.ndarray:
    """Central differences of the gradient of rho, symmetrized."""
    solver = SpectralSolver(kernel, settings)
    t = np.asarray(t, dtype=float)
    h = (step if step is not None else solver.settings.hessian_step) * (1.0 + np.linalg.norm(t))
    hess = np.zeros((t.size, t.size))
    for k in range(t.size):
        e = np.zeros_like(t)
        e[k] = h
        hess[:, k] = (solver.point(t + e).grad - solver.point(t - e).grad) / (2.0 * h)
    return 0.5 * (hess + hess.T)


def dump_boundary_samples(path: str, samples) -> None:
    """CSV u_1..u_d, h, t_1..t_d, kkt_residual."""
    samples = list(samples)
    d = samples[0].u.size if samples else 0
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            [f"u_{k + 1}" for k in range(d)] + ["h"] + [f"t_{k + 1}" for k in range(d)] + ["kkt_residual"]
        )
        for s in samples:
            writer.writerow(
                [repr(float(c)) for c in s.u] + [repr(s.h)] + [repr(float(c)) for c in s.t] + [repr(s.kkt_residual)]
            )
