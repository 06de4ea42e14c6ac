"""Second-stage cancellation problem and its LP relaxation.

For a scenario with availability ``alpha`` the recourse LP is

    max  -sum e[m,j] v[m,i,j]
    s.t. sum_j f[i,j] v[m,i,j] = sum_j x[m,i,j] - sum_j x[m,j,i] - alpha_m sum_j f[i,j] y[m,i,j]   (POIs)
         v[m,i,j] <= y[m,i,j]                                                                    (edges)
         f[r,i] v[m,r,i] = x[m,r,i] - alpha_m f[r,i] y[m,r,i]                                    (stations)
         v >= 0

Every right-hand side is linear in the first-stage columns ``(x, y)`` and is
kept as a sparse matrix ``G`` so that ``rhs = G @ first_stage``.  No explicit
``v <= 1`` bound is added: ``v <= y <= 1`` already implies it, and leaving it
out keeps the dual bound ``pi @ G @ (x, y)`` free of constant terms.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .formulation import VariableIndex, _Rows, plan_to_vector, second_stage_terms
from .lp import GE, INFEASIBLE, LE, LinearProgram, solve_lp
from .model import Instance, Plan, RecourseValue, first_stage_incentive

INTEGRALITY_TOL = 1e-6


class RecourseContractError(RuntimeError):
    """The recourse LP was infeasible, so the first-stage point violates its constraints."""


@dataclass(frozen=True, eq=False)
class RecourseStructure:
    """Matrices of the recourse LP for one availability vector."""

    alpha: np.ndarray
    W: sp.csr_matrix  # coefficients on v
    G: sp.csr_matrix  # rhs = G @ first-stage column vector
    senses: tuple[str, ...]
    c: np.ndarray
    blocks: tuple[slice, slice, slice]  # row ranges: POI balance, links, station resets


def recourse_structure(inst: Instance, idx: VariableIndex, alpha) -> RecourseStructure:
    alpha = np.asarray(alpha, dtype=int).reshape(-1)
    M, E = inst.num_uvs, idx.num_edges
    nv = M * E
    offset = idx.size  # v columns sit after the first-stage block in a scratch layout
    rows = _Rows()
    second_stage_terms(inst, idx, alpha, lambda m, i, j: offset + m * E + idx.edge_pos(i, j), rows)
    full = rows.matrix(offset + nv).tocsc()
    W = full[:, offset:].tocsr()
    G = (-full[:, :offset]).tocsr()
    n1 = len(inst.pois) * M
    n2 = n1 + nv
    blocks = (slice(0, n1), slice(n1, n2), slice(n2, len(rows.senses)))
    c = np.concatenate([-inst.incentives[m, [j for _, j in idx.edges]] for m in range(M)])
    return RecourseStructure(alpha, W, G, tuple(rows.senses), c, blocks)


class Recourse:
    """Recourse solver bound to one instance and column layout, caching LP structure per scenario."""

    def __init__(self, inst: Instance, idx: VariableIndex, engine: str = "simplex"):
        self.inst = inst
        self.idx = idx
        self.engine = engine
        self._cache: dict[tuple[int, ...], RecourseStructure] = {}

    def structure(self, alpha) -> RecourseStructure:
        key = tuple(int(a) for a in np.asarray(alpha).reshape(-1))
        if key not in self._cache:
            self._cache[key] = recourse_structure(self.inst, self.idx, key)
        return self._cache[key]

    def lp(self, first_stage: np.ndarray, alpha) -> LinearProgram:
        st = self.structure(alpha)
        rhs = st.G @ first_stage[: st.G.shape[1]]
        nv = st.W.shape[1]
        return LinearProgram(c=st.c, A=st.W, senses=st.senses, b=rhs, lb=np.zeros(nv),
                             ub=np.full(nv, np.inf), maximize=True)

    def solve(self, first_stage: np.ndarray, alpha, core: np.ndarray | None = None) -> RecourseValue:
        """Solve the recourse LP at ``first_stage``.

        With ``core`` given, the returned duals are, among all optimal duals,
        ones minimising the dual bound at the core point (a Pareto-optimal
        choice); otherwise the engine's duals with tidied link-row duals.
        """
        st = self.structure(alpha)
        lp = self.lp(first_stage, alpha)
        sol = solve_lp(lp, engine=self.engine)
        if sol.status == INFEASIBLE:
            raise RecourseContractError("recourse LP infeasible: first-stage point violates its constraints")
        if not sol.optimal:
            raise RecourseContractError(f"recourse LP failed: {sol.status} {sol.message}")
        b1, b2, b3 = st.blocks
        pi = self._smallest_link_duals(st, sol.duals)
        if core is not None:
            pi = self._pareto_duals(st, lp.b, sol.objective, st.G @ core[: st.G.shape[1]], pi)
        return RecourseValue(sol.objective, sol.x, (pi[b1], pi[b2], pi[b3]), st.alpha)

    def _pareto_duals(self, st: RecourseStructure, rhs: np.ndarray, value: float, core_rhs: np.ndarray,
                      fallback: np.ndarray) -> np.ndarray:
        # dual LP restricted to its optimal face: W^T pi >= c, pi @ rhs <= value
        nr = st.W.shape[0]
        tol = 1e-9 * max(1.0, abs(value))
        A = sp.vstack([st.W.T, sp.csr_matrix(rhs.reshape(1, -1))], format="csr")
        senses = (GE,) * st.W.shape[1] + (LE,)
        lb = np.array([0.0 if s == LE else -np.inf for s in st.senses])
        dual = LinearProgram(c=core_rhs, A=A, senses=senses, b=np.append(st.c, value + tol), lb=lb,
                             ub=np.full(nr, np.inf), maximize=False)
        sol = solve_lp(dual, engine="highs", verify=False)
        if not sol.optimal:
            return fallback
        return sol.x

    @staticmethod
    def _smallest_link_duals(st: RecourseStructure, duals: np.ndarray) -> np.ndarray:
        """Replace each link-row dual by the smallest value keeping the dual feasible.

        Link row k reads ``v_k <= y_k`` and touches only column k, so with the
        other duals fixed the feasible range of its dual is
        ``[max(0, c_k - (other rows' contribution)_k), inf)``.  Lowering it
        never changes the dual objective by weak duality, so the result is
        still an optimal dual; it is the one whose cut charges nothing for
        edges the iterate did not use.
        """
        pi = np.array(duals, float)
        b2 = st.blocks[1]
        rest = pi.copy()
        rest[b2] = 0.0
        pi[b2] = np.maximum(0.0, st.c - st.W.T @ rest)
        return pi

    def dual_bound_coefficients(self, rv: RecourseValue) -> np.ndarray:
        """Coefficients ``g`` with ``phi(x, y) <= g @ (x, y)`` for every first-stage point."""
        st = self.structure(rv.alpha)
        pi = np.concatenate(rv.duals)
        return st.G.T @ pi


def solve_recourse(inst: Instance, plan: Plan, alpha, engine: str = "simplex") -> RecourseValue:
    """Relaxed recourse value, cancellation variables and duals for a plan."""
    idx = VariableIndex(inst.num_uvs, tuple(inst.edges), inst.refuel_stations)
    return Recourse(inst, idx, engine).solve(plan_to_vector(inst, idx, plan), alpha)


def recourse_closed_form(inst: Instance, plan: Plan, alpha) -> float:
    """Exact recourse value: an unavailable UV forfeits everything it would collect."""
    alpha = np.asarray(alpha, float).reshape(-1)
    return -float((1.0 - alpha) @ first_stage_incentive(inst, plan))


def check_integrality(rv: RecourseValue, tol: float = INTEGRALITY_TOL) -> bool:
    v = np.asarray(rv.v)
    return bool(np.all(np.minimum(np.abs(v), np.abs(v - 1.0)) <= tol))
