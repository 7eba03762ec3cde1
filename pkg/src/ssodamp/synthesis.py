"""Gain synthesis for the adaptive damping controller.

The decision problem is: find a symmetric ``P`` and scalars ``k``,
``x = 1/gamma^2`` such that ``P > 0`` and ``Q(sigma) - alpha P > 0`` at both
ends of the ``sigma`` interval, maximizing ``x_lo`` with ``x_v, x_eta, x_i >=
x_lo >= 1``.  Entries of ``Q`` contain ``p * k`` products, so ``k`` is frozen
on a grid and each subproblem is a small SDP.  Because every constraint is
homogeneous in ``(P, x)`` apart from the ``-I`` terms, ``x_lo`` grows without
bound as ``P`` is scaled up; ``P <= p_max I`` fixes the scale.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .controller import AdaptiveGains


class InfeasibleError(RuntimeError):
    """No grid point (or the requested spec) admits a certificate."""

    def __init__(self, message: str, table: list[dict] | None = None):
        super().__init__(message)
        self.table = table or []


def default_k_grid() -> tuple[float, ...]:
    return tuple(float(v) for v in np.geomspace(1.0, 1e4, 33))


@dataclass(frozen=True)
class DesignSpec:
    sigma_lo: float = 8.1487
    sigma_hi: float = 10.3896
    alpha: float = 0.066
    mu: float = 2.0
    psi: float = 20.0
    beta: float = 20.0
    k_pv: float = 8.35
    k_grid: tuple[float, ...] = field(default_factory=default_k_grid)
    psd_tol: float = 1e-8
    p_max: float = 10.0
    solver_margin: float = 1e-6

    def __post_init__(self):
        if not 0 < self.sigma_lo <= self.sigma_hi:
            raise ValueError("DesignSpec requires 0 < sigma_lo <= sigma_hi")
        if not self.alpha >= 0:
            raise ValueError("DesignSpec.alpha must be >= 0")
        if not self.mu >= 0:
            raise ValueError("DesignSpec.mu must be >= 0")
        if not (self.psi > 0 and self.beta > 0 and self.k_pv > 0):
            raise ValueError("DesignSpec.psi, beta and k_pv must be > 0")
        if not self.psd_tol > 0:
            raise ValueError("DesignSpec.psd_tol must be > 0")
        if not self.p_max > 0:
            raise ValueError("DesignSpec.p_max must be > 0")
        object.__setattr__(self, "k_grid", tuple(float(k) for k in self.k_grid))
        if any(not k > 0 for k in self.k_grid):
            raise ValueError("DesignSpec.k_grid entries must be > 0")

    def with_(self, **changes) -> "DesignSpec":
        return replace(self, **changes)


@dataclass(frozen=True)
class DecisionVars:
    p_v: float
    p_v_eta: float
    p_v_i: float
    p_eta: float
    p_eta_i: float
    p_i: float
    k: float
    x_v: float
    x_eta: float
    x_i: float
    x_lo: float

    @property
    def P(self) -> np.ndarray:
        return np.array([
            [self.p_v, self.p_v_eta, self.p_v_i],
            [self.p_v_eta, self.p_eta, self.p_eta_i],
            [self.p_v_i, self.p_eta_i, self.p_i],
        ])

    @property
    def gamma_bar(self) -> float:
        return 1.0 / math.sqrt(self.x_lo)

    @classmethod
    def from_matrix(cls, P: np.ndarray, k: float, x, x_lo: float) -> "DecisionVars":
        P = np.asarray(P, dtype=float)
        return cls(
            p_v=float(P[0, 0]), p_v_eta=float(P[0, 1]), p_v_i=float(P[0, 2]),
            p_eta=float(P[1, 1]), p_eta_i=float(P[1, 2]), p_i=float(P[2, 2]),
            k=float(k), x_v=float(x[0]), x_eta=float(x[1]), x_i=float(x[2]), x_lo=float(x_lo),
        )


@dataclass(frozen=True)
class Certificate:
    vars: DecisionVars
    P: np.ndarray
    Q_lo: np.ndarray
    Q_hi: np.ndarray
    min_eigs: tuple[float, float, float]
    gamma_bar: float
    objective: float
    spec: DesignSpec

    def gains(self) -> AdaptiveGains:
        v, s = self.vars, self.spec
        return AdaptiveGains(p_v=v.p_v, p_v_eta=v.p_v_eta, p_v_i=v.p_v_i, k=v.k, k_pv=s.k_pv,
                             psi=s.psi, beta=s.beta, sigma_lo=s.sigma_lo, sigma_hi=s.sigma_hi)

    def to_dict(self) -> dict:
        spec = asdict(self.spec)
        spec["k_grid"] = list(self.spec.k_grid)
        return {
            "vars": asdict(self.vars),
            "P": self.P.tolist(),
            "Q_lo": self.Q_lo.tolist(),
            "Q_hi": self.Q_hi.tolist(),
            "min_eigs": list(self.min_eigs),
            "gamma_bar": self.gamma_bar,
            "objective": self.objective,
            "spec": spec,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Certificate":
        spec = DesignSpec(**{**d["spec"], "k_grid": tuple(d["spec"]["k_grid"])})
        return cls(
            vars=DecisionVars(**d["vars"]),
            P=np.array(d["P"], dtype=float),
            Q_lo=np.array(d["Q_lo"], dtype=float),
            Q_hi=np.array(d["Q_hi"], dtype=float),
            min_eigs=tuple(float(v) for v in d["min_eigs"]),
            gamma_bar=float(d["gamma_bar"]),
            objective=float(d["objective"]),
            spec=spec,
        )


@dataclass(frozen=True)
class FeasibilityReport:
    """Outcome of :func:`check_feasible` when some constraint fails."""

    feasible: bool
    min_eigs: tuple[float, float, float]
    tol: float
    scalar_ok: bool
    reason: str = ""

    @property
    def margin(self) -> float:
        return min(self.min_eigs)


def closed_loop_matrix(k: float, sigma: float, spec: DesignSpec) -> np.ndarray:
    """Linear part of the error dynamics in (v_n~, eta, v_fi~) with sigma_hat = sigma."""
    psi, beta = spec.psi, spec.beta
    return np.array([
        [-k, -sigma * spec.k_pv, 0.0],
        [beta, psi - beta, -psi * (psi - beta)],
        [0.0, 1.0, -psi],
    ])


def assemble_Q(vars: DecisionVars, sigma: float, spec: DesignSpec, variant: str = "corrected") -> np.ndarray:
    """Closed-form dissipation matrix.

    ``variant="psi_term"`` gives the alternative ``Q_eta_i`` entry, which
    carries ``p_eta_i * psi`` where the quadratic form of the derivative of V
    gives ``p_eta_i * beta``.  All other entries agree.
    """
    v = vars
    psi, beta, kpv, k = spec.psi, spec.beta, spec.k_pv, v.k
    q_v = v.p_v * k - v.p_v_eta * beta - 1.0 - v.x_v / 4.0
    q_eta = -v.p_eta * (psi - beta) + v.p_v_eta * kpv * sigma - v.p_eta_i - 1.0 - v.x_eta / 4.0
    q_i = v.p_i * psi + v.p_eta_i * psi * (psi - beta) - 1.0 - v.x_i / 4.0
    q_veta = 0.5 * (v.p_v * kpv * sigma - v.p_eta * beta - v.p_v_eta * (psi - beta) - v.p_v_i + v.p_v_eta * k)
    if variant == "corrected":
        last = v.p_eta_i * beta
    elif variant == "psi_term":
        last = v.p_eta_i * psi
    else:
        raise ValueError(f"unknown Q variant {variant!r}")
    q_etai = 0.5 * (v.p_eta * psi * (psi - beta) + v.p_v_i * kpv * sigma - v.p_i + last)
    q_vi = 0.5 * (v.p_v_eta * psi * (psi - beta) + v.p_v_i * (psi + k) - v.p_eta_i * beta)
    return np.array([
        [q_v, q_veta, q_vi],
        [q_veta, q_eta, q_etai],
        [q_vi, q_etai, q_i],
    ])


def effective_tol(spec: DesignSpec, *mats: np.ndarray) -> float:
    scale = max((float(np.max(np.abs(m))) for m in mats), default=0.0)
    return spec.psd_tol * (1.0 + scale)


def _min_eig(M: np.ndarray) -> float:
    if not np.allclose(M, M.T, rtol=0, atol=1e-12 * (1.0 + np.max(np.abs(M)))):
        raise AssertionError("non-symmetric matrix passed to eigenvalue check")
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


def check_feasible(vars: DecisionVars, spec: DesignSpec) -> Certificate | FeasibilityReport:
    """Independent eigenvalue re-validation of a candidate point."""
    P = vars.P
    Q_lo = assemble_Q(vars, spec.sigma_lo, spec)
    Q_hi = assemble_Q(vars, spec.sigma_hi, spec)
    eigs = (_min_eig(P), _min_eig(Q_lo - spec.alpha * P), _min_eig(Q_hi - spec.alpha * P))
    tol = effective_tol(spec, P, Q_lo, Q_hi)
    slack = 1e-9 * (1.0 + abs(vars.x_lo))
    scalar_ok = (vars.k > 0 and vars.x_lo >= 1.0 - slack
                 and min(vars.x_v, vars.x_eta, vars.x_i) >= vars.x_lo - slack)
    if all(e > tol for e in eigs) and scalar_ok:
        return Certificate(vars=vars, P=P, Q_lo=Q_lo, Q_hi=Q_hi, min_eigs=eigs,
                           gamma_bar=vars.gamma_bar, objective=-vars.x_lo + spec.mu * vars.k, spec=spec)
    reason = "scalar constraints violated" if not scalar_ok else "eigenvalue margin below tolerance"
    return FeasibilityReport(False, eigs, tol, scalar_ok, reason)


@dataclass(frozen=True)
class FixedKResult:
    k: float
    status: str
    vars: DecisionVars | None
    certificate: Certificate | None
    margins: tuple[float, float, float] | None
    best_margin: float | None = None

    @property
    def feasible(self) -> bool:
        return self.certificate is not None

    def row(self) -> dict:
        return {
            "k": self.k,
            "status": self.status,
            "x_lo": None if self.vars is None else self.vars.x_lo,
            "objective": None if self.certificate is None else self.certificate.objective,
            "margins": None if self.margins is None else list(self.margins),
            "best_margin": self.best_margin,
        }


def best_margin(k: float, spec: DesignSpec) -> float | None:
    """Largest t with Q(sigma) - alpha P >= t I at both vertices (x = 1, P bounded).

    Negative values quantify how far an infeasible k is from feasibility.
    """
    import cvxpy as cp

    P = cp.Variable((3, 3), symmetric=True)
    t = cp.Variable()
    eye = np.eye(3)
    cons = [P >> eye * 1e-6, P << spec.p_max * eye]
    for sigma in (spec.sigma_lo, spec.sigma_hi):
        A = closed_loop_matrix(k, sigma, spec)
        S = -0.5 * (P @ A + A.T @ P) - 1.25 * eye - spec.alpha * P
        cons.append(0.5 * (S + S.T) >> t * eye)
    prob = cp.Problem(cp.Maximize(t), cons)
    try:
        prob.solve(solver=cp.CLARABEL)
    except cp.error.SolverError:
        return None
    return None if t.value is None else float(t.value)


def solve_fixed_k(k: float, spec: DesignSpec) -> FixedKResult:
    """Maximize x_lo with k frozen (an SDP in P and x)."""
    import cvxpy as cp

    if not k > 0:
        raise ValueError("k must be > 0")
    P = cp.Variable((3, 3), symmetric=True)
    x = cp.Variable(3)
    x_lo = cp.Variable()
    # entries of Q scale like p_max * (k + sigma k_pv + psi |psi - beta| + ...)
    scale = spec.p_max * (k + spec.sigma_hi * spec.k_pv + spec.psi * abs(spec.psi - spec.beta) + spec.psi + spec.beta)
    m = spec.solver_margin + 10.0 * spec.psd_tol * (1.0 + scale)
    eye = np.eye(3)
    cons = [P >> m * eye, P << spec.p_max * eye, x_lo >= 1, x >= x_lo]
    for sigma in (spec.sigma_lo, spec.sigma_hi):
        A = closed_loop_matrix(k, sigma, spec)
        Q = -0.5 * (P @ A + A.T @ P) - eye - cp.diag(x) / 4.0
        S = Q - spec.alpha * P
        cons.append(0.5 * (S + S.T) >> m * eye)
    prob = cp.Problem(cp.Maximize(x_lo), cons)
    try:
        prob.solve(solver=cp.CLARABEL)
    except cp.error.SolverError:
        try:
            prob.solve(solver=cp.SCS, eps=1e-9, max_iters=200000)
        except cp.error.SolverError as exc:
            return FixedKResult(k, f"solver_error: {exc}", None, None, None)
    if P.value is None or x.value is None or x_lo.value is None:
        return FixedKResult(k, str(prob.status), None, None, None, best_margin(k, spec))
    Pv = 0.5 * (P.value + P.value.T)
    xl = float(x_lo.value)
    # clip tiny solver slack on the scalar bounds before independent validation
    xl = max(xl, 1.0) if xl > 1.0 - 1e-7 else xl
    xs = np.maximum(np.asarray(x.value, dtype=float), xl)
    vars = DecisionVars.from_matrix(Pv, k, xs, xl)
    chk = check_feasible(vars, spec)
    if isinstance(chk, Certificate):
        return FixedKResult(k, str(prob.status), vars, chk, chk.min_eigs)
    return FixedKResult(k, f"{prob.status} (rejected: {chk.reason})", vars, None, chk.min_eigs)


def synthesize(spec: DesignSpec, return_table: bool = False):
    """Solve over ``spec.k_grid`` and keep the minimum of ``-x_lo + mu k``.

    Raises :class:`InfeasibleError` (carrying a per-k table) when nothing
    on the grid is feasible.
    """
    if not spec.k_grid:
        raise ValueError("DesignSpec.k_grid is empty")
    results = [solve_fixed_k(k, spec) for k in spec.k_grid]
    table = [r.row() for r in results]
    feasible = [r for r in results if r.feasible]
    if not feasible:
        raise InfeasibleError(f"no feasible k among {len(results)} grid points", table)
    best = min(feasible, key=lambda r: (r.certificate.objective, r.k))
    cert = check_feasible(best.vars, spec)
    if not isinstance(cert, Certificate):  # pragma: no cover - solve_fixed_k already validated
        raise InfeasibleError("selected point failed re-validation", table)
    return (cert, table) if return_table else cert


def is_feasible(spec: DesignSpec) -> bool:
    try:
        synthesize(spec)
    except InfeasibleError:
        return False
    return True


def alpha_search(spec: DesignSpec, alpha_range: tuple[float, float], tol: float = 1e-3) -> float:
    """Largest feasible decay rate in ``alpha_range`` by bisection."""
    lo, hi = (float(a) for a in alpha_range)
    if not 0 <= lo < hi:
        raise ValueError("alpha_range must satisfy 0 <= lo < hi")
    if not is_feasible(spec.with_(alpha=lo)):
        raise InfeasibleError(f"lower end alpha={lo} is infeasible")
    if is_feasible(spec.with_(alpha=hi)):
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if is_feasible(spec.with_(alpha=mid)):
            lo = mid
        else:
            hi = mid
    return lo
