"""Exact rational linear programming for annotation inference.

The prover's output is a set of linear inequalities over annotation
metavariables.  Solving ``minimise (sum of precondition variables) subject to
those inequalities and y >= 0`` yields the tightest per-element annotations.
Everything here is exact ``Fraction`` arithmetic: a feasible answer satisfies
every constraint exactly, and the published corpus values are reproduced
bit-for-bit rather than within a tolerance.

The solver is a plain two-phase primal simplex with Bland's rule (lowest
eligible index enters; ties on the ratio test leave by lowest basic variable
index), which makes it deterministic and immune to cycling.  A brute-force
vertex enumerator over the same problem type serves as an independent test
oracle for small instances.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence

from .resources import ResourceExpr

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


class LpSizeError(ValueError):
    """The brute-force oracle was handed a problem above its size bounds."""


@dataclass(frozen=True)
class LpProblem:
    """min objective . y  subject to  rows . y >= bounds,  y >= 0."""

    variables: tuple[str, ...]
    rows: tuple[tuple[tuple[Fraction, ...], Fraction], ...]
    objective: tuple[Fraction, ...]

    def __post_init__(self):
        for coeffs, _ in self.rows:
            if len(coeffs) != len(self.variables):
                raise ValueError("row width does not match variable count")
        if len(self.objective) != len(self.variables):
            raise ValueError("objective width does not match variable count")


@dataclass(frozen=True)
class LpSolution:
    status: str
    valuation: Optional[dict] = None  # variable name -> Fraction
    objective: Optional[Fraction] = None
    certificate: Optional[tuple] = None  # Farkas multipliers, one per row

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _expr_row(expr: ResourceExpr, variables: Sequence[str]) -> tuple[Fraction, ...]:
    coeffs = expr.coeff_map()
    return tuple(coeffs.get(v, Fraction(0)) for v in variables)


def problem_from_constraints(
    constraints: Iterable,
    objective: Mapping[str, Fraction] | Sequence[str],
    variables: Optional[Sequence[str]] = None,
) -> LpProblem:
    """Normalise prover constraints (lhs >= rhs) into standard form.

    ``objective`` is either a coefficient map or a plain list of variable
    names (unit weights).  When ``variables`` is omitted the order is first
    appearance in the constraints, then the objective — deterministic as
    long as the constraint order is.
    """
    cons = list(constraints)
    if not isinstance(objective, Mapping):
        objective = {name: Fraction(1) for name in objective}
    if variables is None:
        seen: dict[str, None] = {}
        for c in cons:
            for v in c.diff().variables:
                seen.setdefault(v)
        for v in objective:
            seen.setdefault(v)
        variables = tuple(seen)
    else:
        variables = tuple(variables)
    rows = []
    for c in cons:
        diff = c.diff()  # diff >= 0, i.e. coeffs . y >= -constant
        rows.append((_expr_row(diff, variables), -diff.constant))
    obj = tuple(Fraction(objective.get(v, 0)) for v in variables)
    return LpProblem(variables, tuple(rows), obj)


def lp_dump(p: LpProblem) -> str:
    """The normalised problem in a stable line-per-item text form."""

    def render(coeffs) -> str:
        expr = ResourceExpr.make(0, dict(zip(p.variables, coeffs)))
        return str(expr)

    lines = [f"min: {render(p.objective)};"]
    for i, (coeffs, bound) in enumerate(p.rows, start=1):
        lines.append(f"c{i}: {render(coeffs)} >= {bound};")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# simplex


def _pivot(rows, z, r, c):
    piv = rows[r][c]
    rows[r] = [v / piv for v in rows[r]]
    for i, row in enumerate(rows):
        if i != r and row[c] != 0:
            f = row[c]
            rows[i] = [a - f * b for a, b in zip(row, rows[r])]
    if z[c] != 0:
        f = z[c]
        z[:] = [a - f * b for a, b in zip(z, rows[r])]


def _bland(rows, basis, z) -> str:
    """Run simplex iterations until optimal or unbounded."""
    while True:
        enter = next((j for j in range(len(z) - 1) if z[j] < 0), None)
        if enter is None:
            return OPTIMAL
        leave = None
        best = None
        for i, row in enumerate(rows):
            if row[enter] > 0:
                ratio = row[-1] / row[enter]
                if best is None or ratio < best or (ratio == best and basis[i] < basis[leave]):
                    best, leave = ratio, i
        if leave is None:
            return UNBOUNDED
        _pivot(rows, z, leave, enter)
        basis[leave] = enter


def solve(p: LpProblem, want_certificate: bool = True) -> LpSolution:
    """Two-phase simplex.  Optimal solutions satisfy every row exactly;
    infeasible problems come back with Farkas multipliers y >= 0 such that
    y.A <= 0 componentwise yet y.b > 0."""
    n = len(p.variables)
    m = len(p.rows)
    # columns: structural | one slack per row | artificials (appended)
    width = n + m
    rows: list[list[Fraction]] = []
    basis: list[int] = []
    art_cols: list[int] = []
    for i, (coeffs, bound) in enumerate(p.rows):
        row = [Fraction(c) for c in coeffs] + [Fraction(0)] * m
        if bound <= 0:
            # flip to  -coeffs . y <= -bound  with a basic slack
            row = [-v for v in row]
            row[n + i] = Fraction(1)
            rows.append(row + [Fraction(-bound)])
            basis.append(n + i)
        else:
            row[n + i] = Fraction(-1)  # surplus
            rows.append(row + [Fraction(bound)])
            basis.append(-1)  # placeholder, artificial assigned below
            art_cols.append(i)

    # append artificial columns for the rows that need them
    total = width + len(art_cols)
    for row in rows:
        rhs = row.pop()
        row.extend([Fraction(0)] * len(art_cols))
        row.append(rhs)
    for k, i in enumerate(art_cols):
        rows[i][width + k] = Fraction(1)
        basis[i] = width + k

    if art_cols:
        cost1 = [Fraction(0)] * total
        for k in range(len(art_cols)):
            cost1[width + k] = Fraction(1)
        z1 = [Fraction(c) for c in cost1] + [Fraction(0)]
        for i, b in enumerate(basis):
            if cost1[b] != 0:
                z1 = [a - cost1[b] * v for a, v in zip(z1, rows[i])]
        status = _bland(rows, basis, z1)
        assert status == OPTIMAL  # phase 1 is bounded below by 0
        if -z1[-1] > 0:
            cert = _farkas(p) if want_certificate else None
            return LpSolution(INFEASIBLE, certificate=cert)
        # drive leftover artificials out of the basis, dropping redundant rows
        keep = []
        for i in range(len(rows)):
            if basis[i] >= width:
                col = next((j for j in range(width) if rows[i][j] != 0), None)
                if col is None:
                    continue  # 0 = 0 row
                _pivot(rows, z1, i, col)
                basis[i] = col
            keep.append(i)
        rows = [rows[i][:width] + [rows[i][-1]] for i in keep]
        basis = [basis[i] for i in keep]

    cost2 = [Fraction(c) for c in p.objective] + [Fraction(0)] * m
    z2 = list(cost2) + [Fraction(0)]
    for i, b in enumerate(basis):
        if cost2[b] != 0:
            z2 = [a - cost2[b] * v for a, v in zip(z2, rows[i])]
    status = _bland(rows, basis, z2)
    if status == UNBOUNDED:
        return LpSolution(UNBOUNDED)
    valuation = {v: Fraction(0) for v in p.variables}
    for i, b in enumerate(basis):
        if b < n:
            valuation[p.variables[b]] = rows[i][-1]
    value = sum((c * valuation[v] for c, v in zip(p.objective, p.variables)), Fraction(0))
    return LpSolution(OPTIMAL, valuation, value)


def _farkas(p: LpProblem) -> Optional[tuple]:
    """Find y >= 0 with y.A <= 0 and y.b > 0 by solving a bounded auxiliary
    problem: maximise y.b with each multiplier capped at 1."""
    m = len(p.rows)
    names = tuple(f"y{i}" for i in range(m))
    rows = []
    for j in range(len(p.variables)):
        #  sum_i -A[i][j] . y_i >= 0
        rows.append((tuple(-p.rows[i][0][j] for i in range(m)), Fraction(0)))
    for i in range(m):
        cap = [Fraction(0)] * m
        cap[i] = Fraction(-1)
        rows.append((tuple(cap), Fraction(-1)))  # -y_i >= -1
    objective = tuple(-p.rows[i][1] for i in range(m))  # min -y.b
    aux = LpProblem(names, tuple(rows), objective)
    sol = solve(aux, want_certificate=False)
    if not sol.optimal or sol.objective >= 0:
        return None
    return tuple(sol.valuation[name] for name in names)


def verify_certificate(p: LpProblem, cert: Sequence[Fraction]) -> bool:
    if len(cert) != len(p.rows) or any(c < 0 for c in cert):
        return False
    for j in range(len(p.variables)):
        if sum(cert[i] * p.rows[i][0][j] for i in range(len(p.rows))) > 0:
            return False
    return sum(cert[i] * p.rows[i][1] for i in range(len(p.rows))) > 0


# ---------------------------------------------------------------------------
# brute-force oracle


def _gauss_solve(mat: list[list[Fraction]], rhs: list[Fraction]) -> Optional[list[Fraction]]:
    n = len(rhs)
    a = [row[:] + [rhs[i]] for i, row in enumerate(mat)]
    for col in range(n):
        piv = next((r for r in range(col, n) if a[r][col] != 0), None)
        if piv is None:
            return None  # singular
        a[col], a[piv] = a[piv], a[col]
        f = a[col][col]
        a[col] = [v / f for v in a[col]]
        for r in range(n):
            if r != col and a[r][col] != 0:
                g = a[r][col]
                a[r] = [v - g * w for v, w in zip(a[r], a[col])]
    return [a[i][n] for i in range(n)]


def enumerate_vertices_oracle(p: LpProblem, max_vars: int = 6, max_rows: int = 12) -> LpSolution:
    """Independent optimum: try every basic point (intersection of n active
    constraints drawn from the rows and the axes), keep the feasible ones,
    return the best.  Only for small instances; exact throughout."""
    n = len(p.variables)
    m = len(p.rows)
    if n > max_vars or m > max_rows:
        raise LpSizeError(f"oracle limited to {max_vars} variables / {max_rows} rows")
    if any(c < 0 for c in p.objective):
        raise LpSizeError("oracle requires a nonnegative objective")

    planes = [(list(coeffs), bound) for coeffs, bound in p.rows]
    for j in range(n):
        axis = [Fraction(0)] * n
        axis[j] = Fraction(1)
        planes.append((axis, Fraction(0)))

    def feasible(pt) -> bool:
        if any(v < 0 for v in pt):
            return False
        return all(
            sum(c * v for c, v in zip(coeffs, pt)) >= bound for coeffs, bound in p.rows
        )

    best_val = None
    best_pt = None
    for combo in itertools.combinations(range(len(planes)), n):
        mat = [planes[i][0] for i in combo]
        rhs = [planes[i][1] for i in combo]
        pt = _gauss_solve(mat, rhs)
        if pt is None or not feasible(pt):
            continue
        val = sum((c * v for c, v in zip(p.objective, pt)), Fraction(0))
        if best_val is None or val < best_val:
            best_val = val
            best_pt = pt
    if best_val is None:
        # the feasible region of {A y >= b, y >= 0} is pointed, so if it is
        # nonempty some vertex would have shown up
        return LpSolution(INFEASIBLE)
    return LpSolution(OPTIMAL, dict(zip(p.variables, best_pt)), best_val)


# ---------------------------------------------------------------------------
# the inference objective


def solve_lexicographic(
    constraints: Iterable,
    primary: Sequence[str],
    variables: Sequence[str],
) -> LpSolution:
    """Minimise the precondition variables first, then — with that optimum
    pinned — the remaining pool, so reported annotations are tight
    everywhere and alternate-optimum noise cannot leak into the output."""
    cons = list(constraints)
    p1 = problem_from_constraints(cons, list(primary), variables)
    s1 = solve(p1)
    if not s1.optimal:
        return s1
    primary_set = set(primary)
    secondary = [v for v in variables if v not in primary_set]
    if not secondary:
        return s1
    # pin: sum of primary <= optimum (the >= direction is already implied)
    pin_coeffs = tuple(Fraction(-1) if v in primary_set else Fraction(0) for v in variables)
    p2 = problem_from_constraints(cons, secondary, variables)
    rows = p2.rows + ((pin_coeffs, -s1.objective),)
    s2 = solve(LpProblem(p2.variables, rows, p2.objective))
    assert s2.optimal  # s1's solution is feasible for p2
    return LpSolution(OPTIMAL, s2.valuation, s1.objective)
