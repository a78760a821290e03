"""Linear operators on d x d matrices built from ``M (x) N : P -> M P N``.

Matrices are flattened in row-major order, so ``P -> M P N`` materializes as
``kron(M, N.T)``.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .models import ObjectiveModel


class SingularOperatorError(np.linalg.LinAlgError):
    pass


def kron_apply(M, N, P) -> np.ndarray:
    """``M P N``."""
    M, N, P = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (M, N, P))
    d = P.shape[0]
    for name, a in (("M", M), ("N", N), ("P", P)):
        if a.shape != (d, d):
            raise ValueError(f"{name} has shape {a.shape}, expected ({d}, {d})")
    return M @ P @ N


def vec(P) -> np.ndarray:
    return np.asarray(P, dtype=float).reshape(-1)


def unvec(v, d: int) -> np.ndarray:
    return np.asarray(v, dtype=float).reshape(d, d)


class MatrixOperator:
    """``P -> sum_j c_j M_j P N_j`` plus optional custom linear terms.

    A dense ``d^2 x d^2`` matrix may be supplied directly (``dense=``), in
    which case the action is matrix-vector multiplication.
    """

    def __init__(self, d: int, terms: Sequence = (), custom: Sequence[Callable] = (),
                 dense: np.ndarray | None = None, name: str = ""):
        self.d = int(d)
        self.terms = [(float(c), np.atleast_2d(np.asarray(M, dtype=float)),
                       np.atleast_2d(np.asarray(N, dtype=float))) for c, M, N in terms]
        self.custom = list(custom)
        self._dense = None if dense is None else np.asarray(dense, dtype=float)
        if self._dense is not None and self._dense.shape != (self.d**2, self.d**2):
            raise ValueError("dense matrix has the wrong shape")
        self.name = name

    @classmethod
    def kron(cls, M, N, coeff=1.0):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return cls(M.shape[0], [(coeff, M, N)])

    @classmethod
    def identity(cls, d):
        return cls(d, [(1.0, np.eye(d), np.eye(d))], name="I")

    def __repr__(self):
        return f"MatrixOperator(d={self.d}, terms={len(self.terms)}, custom={len(self.custom)}, name={self.name!r})"

    def apply(self, P) -> np.ndarray:
        P = np.atleast_2d(np.asarray(P, dtype=float))
        if P.shape != (self.d, self.d):
            raise ValueError(f"P has shape {P.shape}, expected ({self.d}, {self.d})")
        if self._dense is not None:
            return unvec(self._dense @ vec(P), self.d)
        out = np.zeros((self.d, self.d))
        for c, M, N in self.terms:
            out += c * (M @ P @ N)
        for fn in self.custom:
            out += fn(P)
        return out

    __call__ = apply

    def materialize(self) -> np.ndarray:
        """Dense ``d^2 x d^2`` matrix acting on row-major ``vec(P)``."""
        if self._dense is not None:
            return self._dense.copy()
        n = self.d**2
        out = np.zeros((n, n))
        for c, M, N in self.terms:
            out += c * np.kron(M, N.T)
        if self.custom:
            basis = np.eye(n)
            for fn in self.custom:
                for j in range(n):
                    out[:, j] += vec(fn(unvec(basis[j], self.d)))
        return out

    def solve(self, Q) -> np.ndarray:
        """``P`` with ``op(P) = Q`` by a dense direct solve."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        A = self.materialize()
        try:
            x = np.linalg.solve(A, vec(Q))
        except np.linalg.LinAlgError as exc:
            raise SingularOperatorError(f"operator {self.name or ''} is singular") from exc
        if not np.all(np.isfinite(x)) or np.linalg.cond(A) > 1e14:
            raise SingularOperatorError(f"operator {self.name or ''} is numerically singular")
        return unvec(x, self.d)

    def inverse(self) -> "MatrixOperator":
        A = self.materialize()
        if np.linalg.cond(A) > 1e14:
            raise SingularOperatorError(f"operator {self.name or ''} is numerically singular")
        return MatrixOperator(self.d, dense=np.linalg.inv(A), name=f"inv({self.name})")

    def compose(self, other: "MatrixOperator") -> "MatrixOperator":
        """``self o other``."""
        if other.d != self.d:
            raise ValueError("dimension mismatch")
        return MatrixOperator(self.d, dense=self.materialize() @ other.materialize(),
                              name=f"{self.name}*{other.name}")

    def __add__(self, other: "MatrixOperator") -> "MatrixOperator":
        if other.d != self.d:
            raise ValueError("dimension mismatch")
        if self._dense is None and other._dense is None:
            return MatrixOperator(self.d, self.terms + other.terms, self.custom + other.custom)
        return MatrixOperator(self.d, dense=self.materialize() + other.materialize())

    def scaled(self, c: float) -> "MatrixOperator":
        if self._dense is not None:
            return MatrixOperator(self.d, dense=c * self._dense, name=self.name)
        return MatrixOperator(self.d, [(c * a, M, N) for a, M, N in self.terms],
                              [lambda P, fn=fn: c * fn(P) for fn in self.custom], name=self.name)

    def __sub__(self, other):
        return self + other.scaled(-1.0)

    def symmetric_spectrum(self) -> np.ndarray:
        """Eigenvalues of the operator restricted to symmetric matrices."""
        d = self.d
        basis = []
        for i in range(d):
            for j in range(i, d):
                E = np.zeros((d, d))
                E[i, j] = E[j, i] = 1.0 if i == j else 1.0 / np.sqrt(2.0)
                basis.append(vec(E))
        B = np.array(basis).T
        red = B.T @ self.materialize() @ B
        return np.sort(np.linalg.eigvals(red).real)

    def to_csv(self, path) -> None:
        np.savetxt(path, self.materialize(), delimiter=",", header=f"d={self.d}", comments="# ")


def _check_square(S, name="matrix"):
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"{name} must be square")
    return S


def lyapunov_sum(H) -> MatrixOperator:
    """``P -> H P + P H``."""
    H = _check_square(H, "H")
    I = np.eye(H.shape[0])
    return MatrixOperator(H.shape[0], [(1.0, H, I), (1.0, I, H)], name="H(x)I+I(x)H")


def operator_A(H) -> MatrixOperator:
    """Inverse of ``P -> H P + P H`` for symmetric positive definite ``H``."""
    H = _check_square(H, "H")
    if not np.allclose(H, H.T, rtol=0, atol=1e-12 * max(1.0, np.abs(H).max())):
        raise ValueError("H must be symmetric")
    if np.linalg.eigvalsh(H)[0] <= 0:
        raise SingularOperatorError("H must be positive definite")
    op = lyapunov_sum(H).inverse()
    op.name = "A"
    return op


def quadratic_stationary_operator(Sigma, gamma: float) -> MatrixOperator:
    """``P -> Sigma P + P Sigma - gamma Sigma P Sigma``."""
    S = _check_square(Sigma, "Sigma")
    I = np.eye(S.shape[0])
    return MatrixOperator(S.shape[0], [(1.0, S, I), (1.0, I, S), (-gamma, S, S)],
                          name="S(x)I+I(x)S-gS(x)S")


def stationary_second_moment_quadratic(Sigma, gamma: float, Cbar) -> np.ndarray:
    """Solve ``(S(x)I + I(x)S - gamma S(x)S) M = gamma Cbar``."""
    S = _check_square(Sigma, "Sigma")
    lmax = np.linalg.eigvalsh(S)[-1]
    if not 0 < gamma < 2 / lmax:
        raise SingularOperatorError(f"gamma={gamma} outside (0, 2/lambda_max) = (0, {2 / lmax:.6g})")
    M = quadratic_stationary_operator(S, gamma).solve(gamma * _check_square(Cbar, "Cbar"))
    return 0.5 * (M + M.T)


def _require_least_squares(model: ObjectiveModel):
    if model.kind != "least_squares":
        raise ValueError("this operator is defined for least-squares models only")


def operator_T(model: ObjectiveModel) -> MatrixOperator:
    """``A -> sum_i w_i (x_i^T A x_i) x_i x_i^T``."""
    _require_least_squares(model)
    X, w, d = model.X, model.w, model.d
    # each atom contributes the rank-one term w x x^T A x x^T
    terms = [(float(wi), np.outer(x, x), np.outer(x, x)) for x, wi in zip(X, w)]
    return MatrixOperator(d, terms, name="T")


def fourth_moment_radius(model: ObjectiveModel) -> float:
    """Smallest ``r^2`` with ``E[|X|^2 X X^T] <= r^2 Sigma``."""
    _require_least_squares(model)
    K = np.einsum("n,n,ni,nj->ij", model.w, np.sum(model.X**2, axis=1), model.X, model.X)
    S = model.sigma
    Linv = np.linalg.inv(np.linalg.cholesky(S))
    return float(np.linalg.eigvalsh(Linv @ K @ Linv.T)[-1])


def lms_stationary_operator(model: ObjectiveModel, gamma: float) -> MatrixOperator:
    """``P -> Sigma P + P Sigma - gamma T[P]``."""
    _require_least_squares(model)
    S = model.sigma
    I = np.eye(model.d)
    T = operator_T(model)
    return MatrixOperator(model.d, [(1.0, S, I), (1.0, I, S)] + [(-gamma * c, M, N) for c, M, N in T.terms],
                          name="S(x)I+I(x)S-gT")


def stationary_second_moment_lms(model: ObjectiveModel, gamma: float) -> np.ndarray:
    """Exact stationary second moment of the least-squares SGD chain."""
    _require_least_squares(model)
    if model.lam != 0:
        raise ValueError("the exact stationary equation assumes an unregularized least-squares model")
    r2 = fourth_moment_radius(model)
    if not 0 < gamma <= 1 / r2 * (1 + 1e-12):
        raise SingularOperatorError(f"gamma={gamma} outside (0, 1/r^2] = (0, {1 / r2:.6g}]")
    M = lms_stationary_operator(model, gamma).solve(gamma * model.xi_covariance)
    return 0.5 * (M + M.T)


def omega_operator(Sigma, gamma: float, T: MatrixOperator) -> MatrixOperator:
    """``(S(x)I + I(x)S - gamma S(x)S)(S(x)I + I(x)S - gamma T)^{-1}``."""
    S = _check_square(Sigma, "Sigma")
    I = np.eye(S.shape[0])
    second = MatrixOperator(S.shape[0], [(1.0, S, I), (1.0, I, S)]) - T.scaled(gamma)
    F1 = quadratic_stationary_operator(S, gamma).materialize()
    F2 = second.materialize()
    if np.linalg.cond(F2) > 1e14:
        raise SingularOperatorError("S(x)I + I(x)S - gamma T is numerically singular")
    # F1 F2^{-1} via a transposed solve, more accurate than forming the inverse
    return MatrixOperator(S.shape[0], dense=np.linalg.solve(F2.T, F1.T).T, name="Omega")


def contract_third(F3, M) -> np.ndarray:
    """``v_l = sum_ij M_ij F3_ijl``."""
    return np.einsum("ij,ijl->l", np.asarray(M, dtype=float), np.asarray(F3, dtype=float))


def bias_constant_delta(model: ObjectiveModel, factor: float = -0.5) -> np.ndarray:
    """First-order stationary bias ``factor * H^{-1} f'''[A C(theta*)]``.

    With ``factor = -1/2`` this matches the stationary mean to first order in
    the step size (checked against a deterministic solve of the chain's
    invariant law on a one-dimensional logistic instance).
    """
    ts = model.theta_star
    H = model.hessian(ts)
    F3 = model.third_derivative(ts)
    if not np.any(F3):
        return np.zeros(model.d)
    M = operator_A(H).apply(model.noise_covariance(ts))
    return factor * np.linalg.solve(H, contract_third(F3, M))
