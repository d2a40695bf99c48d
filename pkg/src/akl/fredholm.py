"""Discrete Fredholm equations of the first and second kind with a
quadratic regularization functional.

Notation, fixed once and used everywhere below (K symmetric PSD,
D_mu = diag(mu), D_alpha = diag(alpha)):

    operator        Kv      := K D_mu v            (quadrature of the integral)
    normalized      B       := D_alpha^-1 K D_mu
    first kind      B v = z                         (ill-posed; truncated SVD)
    second kind     (beta I + B) v = z              (well-posed for beta > 0)
    functional      L(v)    := 1/2 ||B v - z||_mu^2 + beta <K D_mu v, v>_mu
    gradient        grad L  = B^T D_mu (B v - z) + 2 beta D_mu K D_mu v

Setting the gradient to zero and factoring K gives

    K [ D_alpha^-1 D_mu ( (B + 2 beta D_alpha) v  -  z ) ] = 0,

so the minimizer solves the second-kind equation with the variable
coefficient 2 beta alpha_i in place of beta, up to components in the
null space of K.  The factor 2 comes from differentiating the quadratic
penalty, the factor alpha from the dual-norm weighting of the residual.
Comparisons against the direct solve are therefore made after projecting
onto the range of K.

B is self-adjoint and positive semidefinite in the inner product
<x, y>_W = x^T D_mu D_alpha y, so its eigenvalues are real and
nonnegative; spectral condition numbers below are stated in that
geometry.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, SingularOperatorError
from .kernels import DiscreteKernel


@dataclass
class FredholmProblem:
    """Kernel matrix, normalization and quadrature weights, right-hand side, beta."""

    kernel: np.ndarray
    alpha: np.ndarray
    mu: np.ndarray
    z: np.ndarray
    beta: float

    def __post_init__(self) -> None:
        self.kernel = np.asarray(self.kernel, dtype=float)
        p = self.kernel.shape[0]
        if self.kernel.shape != (p, p):
            raise InvalidInputError(f"kernel must be square, got {self.kernel.shape}")
        if np.max(np.abs(self.kernel - self.kernel.T)) > 1e-10:
            raise InvalidInputError("kernel must be symmetric within 1e-10")
        eigenvalues = np.linalg.eigvalsh(self.kernel)
        floor = -1e-8 * max(float(eigenvalues[-1]), 1e-300)
        if eigenvalues[0] < floor:
            raise InvalidInputError(f"kernel must be positive semidefinite, min eig {eigenvalues[0]}")
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.mu = np.asarray(self.mu, dtype=float)
        if self.alpha.shape != (p,) or np.any(self.alpha <= 0):
            raise InvalidInputError("alpha must be a positive p-vector")
        if self.mu.shape != (p,) or np.any(self.mu <= 0):
            raise InvalidInputError("mu must be a positive p-vector")
        self.z = np.asarray(self.z, dtype=float)
        if self.z.ndim == 1:
            self.z = self.z[:, None]
        if self.z.shape[0] != p or not np.all(np.isfinite(self.z)):
            raise InvalidInputError("right-hand side must be finite with one row per node")
        if not (np.isfinite(self.beta) and self.beta >= 0):
            raise InvalidInputError(f"beta must be >= 0, got {self.beta}")

    @property
    def p(self) -> int:
        return self.kernel.shape[0]

    @classmethod
    def from_discrete_kernel(cls, kernel: DiscreteKernel, z: np.ndarray, beta: float) -> "FredholmProblem":
        if not kernel.symmetric:
            raise InvalidInputError("Fredholm problems require a symmetric kernel")
        return cls(kernel=kernel.matrix, alpha=kernel.alpha, mu=kernel.measure, z=z, beta=beta)


def apply_operator(prob: FredholmProblem, v: np.ndarray) -> np.ndarray:
    """Quadrature integral operator: K diag(mu) v.  Linear in v."""
    v = np.asarray(v, dtype=float)
    if v.shape[0] != prob.p:
        raise InvalidInputError(f"field must have {prob.p} rows, got {v.shape}")
    return prob.kernel @ (prob.mu[:, None] * v if v.ndim == 2 else prob.mu * v)


def normalized_operator(prob: FredholmProblem) -> np.ndarray:
    """B = diag(alpha)^-1 K diag(mu)."""
    return (prob.kernel * prob.mu[None, :]) / prob.alpha[:, None]


def weighted_norm(prob: FredholmProblem, v: np.ndarray) -> float:
    """mu-weighted L2 norm, channels summed."""
    v = np.atleast_2d(np.asarray(v, dtype=float).T).T
    return float(np.sqrt(np.sum(prob.mu[:, None] * v * v)))


def weighted_inner(prob: FredholmProblem, a: np.ndarray, b: np.ndarray) -> float:
    a = np.atleast_2d(np.asarray(a, dtype=float).T).T
    b = np.atleast_2d(np.asarray(b, dtype=float).T).T
    return float(np.sum(prob.mu[:, None] * a * b))


@dataclass
class FirstKindSolution:
    v: np.ndarray
    condition: float
    retained_rank: int
    residual: float
    singular_values: np.ndarray


def solve_first_kind(prob: FredholmProblem, pinv_tol: float) -> FirstKindSolution:
    """Truncated pseudo-inverse solve of B v = z.

    Singular values below pinv_tol times the largest are discarded; the
    effective condition number is the ratio of the largest to the smallest
    retained singular value.
    """
    if pinv_tol <= 0:
        raise InvalidInputError(f"pinv_tol must be positive, got {pinv_tol}")
    b = normalized_operator(prob)
    u, s, vt = np.linalg.svd(b)
    keep = s > pinv_tol * (s[0] if s.size else 0.0)
    rank = int(np.sum(keep))
    if rank == 0:
        raise SingularOperatorError("all singular values fall below the truncation threshold")
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    v = vt.T @ (inv[:, None] * (u.T @ prob.z))
    residual = weighted_norm(prob, b @ v - prob.z)
    return FirstKindSolution(
        v=v,
        condition=float(s[0] / s[keep][-1]),
        retained_rank=rank,
        residual=residual,
        singular_values=s,
    )


def solve_second_kind(prob: FredholmProblem) -> np.ndarray:
    """Direct solve of (beta I + B) v = z; unique for beta > 0."""
    if prob.beta <= 0:
        raise InvalidInputError(f"second-kind solve needs beta > 0, got {prob.beta}")
    return np.linalg.solve(prob.beta * np.eye(prob.p) + normalized_operator(prob), prob.z)


def tikhonov_functional(prob: FredholmProblem, v: np.ndarray) -> float:
    """1/2 ||B v - z||_mu^2 + beta <K D_mu v, v>_mu."""
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    residual = normalized_operator(prob) @ v - prob.z
    penalty = weighted_inner(prob, apply_operator(prob, v), v)
    return 0.5 * weighted_norm(prob, residual) ** 2 + prob.beta * penalty


def tikhonov_gradient(prob: FredholmProblem, v: np.ndarray) -> np.ndarray:
    """Analytic gradient: B^T D_mu (B v - z) + 2 beta D_mu K D_mu v."""
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    b = normalized_operator(prob)
    residual = b @ v - prob.z
    return b.T @ (prob.mu[:, None] * residual) + 2.0 * prob.beta * (
        prob.mu[:, None] * (prob.kernel @ (prob.mu[:, None] * v))
    )


def stationarity_solve(prob: FredholmProblem) -> np.ndarray:
    """Second-kind solve with the variable coefficient the functional induces.

    Solves (B + 2 beta diag(alpha)) v = z; any exact solution is a
    stationary point of the functional (see module docstring).
    """
    if prob.beta <= 0:
        raise InvalidInputError(f"stationarity solve needs beta > 0, got {prob.beta}")
    system = normalized_operator(prob) + 2.0 * prob.beta * np.diag(prob.alpha)
    return np.linalg.solve(system, prob.z)


@dataclass
class MinimizeResult:
    v: np.ndarray
    iterations: int
    gradient_norm: float
    converged: bool


def minimize_functional(
    prob: FredholmProblem,
    max_iters: int = 50_000,
    tol: float = 1e-12,
) -> MinimizeResult:
    """Plain gradient descent on the functional from v = 0.

    The step size is 1 over the largest Hessian eigenvalue (the
    functional is quadratic), and iteration stops once the gradient norm
    falls below tol times its initial value.
    """
    b = normalized_operator(prob)
    hessian = b.T @ (prob.mu[:, None] * b) + 2.0 * prob.beta * (
        prob.mu[:, None] * prob.kernel * prob.mu[None, :]
    )
    lip = float(np.linalg.eigvalsh(0.5 * (hessian + hessian.T))[-1])
    if lip <= 0:
        raise SingularOperatorError("functional has no curvature; nothing to minimize")
    step = 1.0 / lip
    v = np.zeros_like(prob.z)
    g0 = float(np.linalg.norm(tikhonov_gradient(prob, v)))
    if g0 == 0.0:
        return MinimizeResult(v=v, iterations=0, gradient_norm=0.0, converged=True)
    for it in range(1, max_iters + 1):
        g = tikhonov_gradient(prob, v)
        gn = float(np.linalg.norm(g))
        if gn <= tol * g0:
            return MinimizeResult(v=v, iterations=it - 1, gradient_norm=gn, converged=True)
        v = v - step * g
    return MinimizeResult(
        v=v, iterations=max_iters, gradient_norm=float(np.linalg.norm(tikhonov_gradient(prob, v))),
        converged=False,
    )


def finite_difference_gradient(prob: FredholmProblem, v: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of the functional, coordinate by coordinate."""
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    grad = np.zeros_like(v)
    for i in range(v.shape[0]):
        for j in range(v.shape[1]):
            bump = np.zeros_like(v)
            bump[i, j] = h
            grad[i, j] = (
                tikhonov_functional(prob, v + bump) - tikhonov_functional(prob, v - bump)
            ) / (2.0 * h)
    return grad


def range_projector(kernel: np.ndarray, rel_tol: float = 1e-10) -> np.ndarray:
    """Orthogonal projector onto the span of the kernel's significant eigenvectors."""
    values, vectors = np.linalg.eigh(np.asarray(kernel, dtype=float))
    scale = float(np.max(np.abs(values))) if values.size else 0.0
    keep = np.abs(values) > rel_tol * max(scale, 1e-300)
    basis = vectors[:, keep]
    return basis @ basis.T


@dataclass
class EulerLagrangeReport:
    fd_gradient_error: float
    mismatch: float
    gd_iterations: int
    gd_converged: bool


def verify_euler_lagrange(
    prob: FredholmProblem,
    probe_seed: int = 0,
    probes: int = 3,
    fd_step: float = 1e-6,
    max_iters: int = 50_000,
) -> EulerLagrangeReport:
    """Check the stationarity account of the second-kind equation.

    (a) validates the analytic gradient against central differences at
    seeded points, (b) minimizes the functional by gradient descent,
    (c) solves the variable-coefficient second-kind system directly, and
    reports the relative mismatch after projecting both onto range(K).
    """
    rng = np.random.default_rng(probe_seed)
    fd_error = 0.0
    for _ in range(probes):
        point = rng.standard_normal(prob.z.shape)
        analytic = tikhonov_gradient(prob, point)
        numeric = finite_difference_gradient(prob, point, h=fd_step)
        denom = max(float(np.linalg.norm(analytic)), 1e-300)
        fd_error = max(fd_error, float(np.linalg.norm(analytic - numeric)) / denom)

    gd = minimize_functional(prob, max_iters=max_iters)
    direct = stationarity_solve(prob)
    projector = range_projector(prob.kernel)
    gd_range = projector @ gd.v
    direct_range = projector @ direct
    denom = max(float(np.linalg.norm(direct_range)), 1e-300)
    mismatch = float(np.linalg.norm(gd_range - direct_range)) / denom
    return EulerLagrangeReport(
        fd_gradient_error=fd_error,
        mismatch=mismatch,
        gd_iterations=gd.iterations,
        gd_converged=gd.converged,
    )


def operator_spectrum(prob: FredholmProblem) -> np.ndarray:
    """Eigenvalues of B, computed through its symmetric similarity transform.

    With W = diag(mu * alpha), W^(1/2) B W^(-1/2) is symmetric PSD, so the
    spectrum is real and nonnegative.
    """
    root = np.sqrt(prob.mu * prob.alpha)
    symmetric = (normalized_operator(prob) * root[:, None]) / root[None, :]
    return np.linalg.eigvalsh(0.5 * (symmetric + symmetric.T))


def second_kind_condition(prob: FredholmProblem) -> tuple[float, float]:
    """(spectral condition number of beta I + B, bound (beta + lambda_max)/beta)."""
    if prob.beta <= 0:
        raise InvalidInputError("condition bound needs beta > 0")
    eigenvalues = operator_spectrum(prob)
    lam_min = max(float(eigenvalues[0]), 0.0)
    lam_max = float(eigenvalues[-1])
    condition = (prob.beta + lam_max) / (prob.beta + lam_min)
    bound = (prob.beta + lam_max) / prob.beta
    return condition, bound


def noise_amplification(
    prob: FredholmProblem, pinv_tol: float, noise_scale: float, seed: int
) -> tuple[float, float]:
    """Relative solution change per relative data change, first vs second kind.

    Perturbs z by seeded Gaussian noise of the given relative scale and
    reuses the unperturbed truncation rank for the first-kind pair so both
    solves see the same retained spectrum.
    """
    rng = np.random.default_rng(seed)
    z_norm = weighted_norm(prob, prob.z)
    noise = rng.standard_normal(prob.z.shape)
    noise *= noise_scale * z_norm / max(weighted_norm(prob, noise), 1e-300)
    rel_noise = weighted_norm(prob, noise) / z_norm

    base_first = solve_first_kind(prob, pinv_tol)
    bumped = FredholmProblem(
        kernel=prob.kernel, alpha=prob.alpha, mu=prob.mu, z=prob.z + noise, beta=prob.beta
    )
    bumped_first = solve_first_kind(bumped, pinv_tol)
    amp_first = (
        weighted_norm(prob, bumped_first.v - base_first.v)
        / max(weighted_norm(prob, base_first.v), 1e-300)
        / rel_noise
    )

    base_second = solve_second_kind(prob)
    bumped_second = solve_second_kind(bumped)
    amp_second = (
        weighted_norm(prob, bumped_second - base_second)
        / max(weighted_norm(prob, base_second), 1e-300)
        / rel_noise
    )
    return float(amp_first), float(amp_second)


def rbf_grid_problem(
    grid_n: int, gamma: float, beta: float, d: int = 2, seed: int = 0, ridge: float = 0.0
) -> FredholmProblem:
    """Standard test problem: Gaussian RBF kernel on a grid_n x grid_n unit grid.

    alpha is frozen from the kernel row sums, mu is uniform, and the data
    is consistent: z = B v_true for a seeded smooth field, the usual
    inverse-problem setup (otherwise the base first-kind solution is
    itself noise-dominated and conditioning cancels out of relative
    comparisons).  ``ridge`` adds a multiple of the identity for a
    strictly positive-definite variant.
    """
    from .attention import patch_grid_coords

    coords = patch_grid_coords(grid_n)
    diff = coords[:, None, :] - coords[None, :, :]
    kernel = np.exp(-gamma * np.sum(diff * diff, axis=2))
    kernel = 0.5 * (kernel + kernel.T) + ridge * np.eye(grid_n * grid_n)
    rng = np.random.default_rng(seed)
    p = grid_n * grid_n
    v_true = np.zeros((p, d))
    for c in range(d):
        freq = rng.integers(1, 3, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        v_true[:, c] = np.sin(
            2 * np.pi * (freq[0] * coords[:, 0] + freq[1] * coords[:, 1]) + phase
        )
    alpha = kernel.sum(axis=1)
    mu = np.full(p, 1.0 / p)
    z = (kernel * mu[None, :]) @ v_true / alpha[:, None]
    return FredholmProblem(kernel=kernel, alpha=alpha, mu=mu, z=z, beta=beta)


def save_problem_csv(prob: FredholmProblem, directory: str | os.PathLike) -> None:
    """CSV bundle: kernel.csv, weights.csv (alpha, mu), rhs.csv, meta.json."""
    from .serialize import write_csv, write_matrix_csv

    os.makedirs(directory, exist_ok=True)
    write_matrix_csv(os.path.join(directory, "kernel.csv"), prob.kernel)
    write_matrix_csv(os.path.join(directory, "rhs.csv"), prob.z)
    weight_rows = [
        {"alpha": float(a), "mu": float(m)} for a, m in zip(prob.alpha, prob.mu)
    ]
    write_csv(os.path.join(directory, "weights.csv"), ["alpha", "mu"], weight_rows)
    with open(os.path.join(directory, "meta.json"), "w", encoding="ascii") as fh:
        json.dump({"beta": prob.beta, "p": prob.p, "channels": prob.z.shape[1]}, fh)


def load_problem_csv(directory: str | os.PathLike) -> FredholmProblem:
    def read_matrix(path):
        with open(path, "r", encoding="ascii") as fh:
            return np.asarray(
                [[float(v) for v in line.split(",")] for line in fh if line.strip()]
            )

    kernel = read_matrix(os.path.join(directory, "kernel.csv"))
    z = read_matrix(os.path.join(directory, "rhs.csv"))
    with open(os.path.join(directory, "weights.csv"), "r", encoding="ascii") as fh:
        header = fh.readline().strip().split(",")
        table = [dict(zip(header, line.strip().split(","))) for line in fh if line.strip()]
    alpha = np.asarray([float(row["alpha"]) for row in table])
    mu = np.asarray([float(row["mu"]) for row in table])
    with open(os.path.join(directory, "meta.json"), "r", encoding="ascii") as fh:
        meta = json.load(fh)
    return FredholmProblem(kernel=kernel, alpha=alpha, mu=mu, z=z, beta=meta["beta"])


def save_solution_csv(v: np.ndarray, path: str | os.PathLike) -> None:
    from .serialize import write_matrix_csv

    write_matrix_csv(path, v)
