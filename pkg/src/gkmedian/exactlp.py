"""Exact rational LP solver returning optimal vertices with certificates.

Two-phase primal simplex over exact rationals with bounded variables (the
[0,1] box is handled implicitly, never as rows). Bland's rule on a fixed
column order gives termination and byte-identical determinism: columns are
structural variables in index order, then one slack per inequality row in
insertion order, then artificials. Every row carries a caller-supplied label;
tightness and basis certificates are reported in label terms so downstream
logic never touches solver internals.
"""

from __future__ import annotations

from dataclasses import dataclass

from ._rational import R, format_rational

__all__ = [
    "LE",
    "GE",
    "EQ",
    "LinearProgram",
    "ExtremePoint",
    "InfeasibleError",
    "UnboundedError",
    "solve_to_vertex",
    "rank_of",
    "dump_lp",
]

LE = "<="
GE = ">="
EQ = "=="

_ZERO = R(0)
_ONE = R(1)


class InfeasibleError(Exception):
    """LP has no feasible point. `certificate` lists labels of constraint rows
    left unsatisfied at the end of phase 1."""

    def __init__(self, certificate=()):
        self.certificate = tuple(certificate)
        super().__init__(f"infeasible LP; conflicting rows: {self.certificate}")


class UnboundedError(Exception):
    """LP objective is unbounded below. `ray` is an improving direction over
    the structural variables."""

    def __init__(self, ray=()):
        self.ray = tuple(ray)
        super().__init__("unbounded LP")


class LinearProgram:
    """Minimization LP with labeled rows and per-variable bounds.

    Bounds default to [0, 1]. Row coefficients may be given as a dict
    {var: coef} or a full-length sequence. Labels are tuples like
    ("CPart", j) or ("Knapsack", t); they must be unique per LP.
    """

    def __init__(self, variable_count: int):
        self.variable_count = variable_count
        self.objective = [_ZERO] * variable_count
        self.constant = _ZERO
        self.lower = [_ZERO] * variable_count
        self.upper = [_ONE] * variable_count
        self.rows = []

    def set_objective(self, coeffs, constant=0) -> None:
        self.objective = self._dense(coeffs)
        self.constant = R(constant)

    def set_bounds(self, var: int, lo, hi) -> None:
        self.lower[var] = R(lo)
        self.upper[var] = R(hi)
        if self.lower[var] > self.upper[var]:
            raise ValueError(f"empty bound interval for variable {var}")

    def add_row(self, coeffs, rel: str, rhs, label) -> None:
        if rel not in (LE, GE, EQ):
            raise ValueError(f"unknown relation {rel!r}")
        self.rows.append((self._dense(coeffs), rel, R(rhs), label))

    def _dense(self, coeffs):
        if isinstance(coeffs, dict):
            out = [_ZERO] * self.variable_count
            for var, coef in coeffs.items():
                out[var] = R(coef)
            return out
        out = [R(x) for x in coeffs]
        if len(out) != self.variable_count:
            raise ValueError("coefficient vector has wrong length")
        return out

    def row_activity(self, y, index: int):
        coeffs = self.rows[index][0]
        return sum((c * v for c, v in zip(coeffs, y) if c), _ZERO)


@dataclass(frozen=True)
class ExtremePoint:
    """Optimal vertex: exact y, objective (constant included), tight row
    labels, and a verified basis of `variableCount` independent tight
    constraints (bound labels ("Lower", i)/("Upper", i) included)."""

    y: tuple
    objective_value: object
    tight_labels: tuple
    basis_labels: tuple

    def fractional_support(self, lp: LinearProgram):
        return tuple(
            i
            for i, v in enumerate(self.y)
            if lp.lower[i] < v < lp.upper[i]
        )

    def value(self, i: int):
        return self.y[i]


def rank_of(vectors) -> int:
    """Exact rank over the rationals (Gaussian elimination on mpq)."""
    piv = []
    count = 0
    for vec in vectors:
        v = [R(x) for x in vec]
        for pos, prow in piv:
            f = v[pos]
            if f:
                v = [a - f * b for a, b in zip(v, prow)]
        for pos, a in enumerate(v):
            if a:
                piv.append((pos, [x / a for x in v]))
                count += 1
                break
    return count


def dump_lp(lp: LinearProgram) -> str:
    """CPLEX-LP-like text rendering with exact p/q coefficients, for external
    cross-checking."""

    def term(c, i):
        sign = "+" if c >= 0 else "-"
        return f"{sign} {format_rational(abs(c))} y{i}"

    lines = ["Minimize", " obj: " + " ".join(term(c, i) for i, c in enumerate(lp.objective) if c)]
    if lp.constant:
        lines[-1] += f" + {format_rational(lp.constant)}"
    lines.append("Subject To")
    for coeffs, rel, rhs, label in lp.rows:
        body = " ".join(term(c, i) for i, c in enumerate(coeffs) if c) or "0 y0"
        op = {LE: "<=", GE: ">=", EQ: "="}[rel]
        lines.append(f" {_label_text(label)}: {body} {op} {format_rational(rhs)}")
    lines.append("Bounds")
    for i in range(lp.variable_count):
        lines.append(f" {format_rational(lp.lower[i])} <= y{i} <= {format_rational(lp.upper[i])}")
    lines.append("End")
    return "\n".join(lines) + "\n"


def _label_text(label) -> str:
    if isinstance(label, tuple):
        return "_".join(str(part) for part in label)
    return str(label)


def solve_to_vertex(lp: LinearProgram) -> ExtremePoint:
    """Solve to an optimal extreme point.

    Deterministic: Bland's rule over the fixed column order; leaving-variable
    ties break toward the lowest column index; equal ratio against a bound
    flip resolves to the pivot. Raises InfeasibleError or UnboundedError.
    """
    n = lp.variable_count
    m = len(lp.rows)
    for i in range(n):
        if lp.lower[i] is None or lp.upper[i] is None:
            raise ValueError("structural variables must have finite bounds")

    # Column layout: structural, slacks (inequality rows in order), artificials.
    slack_col = [None] * m
    ncols = n
    for r, (_, rel, _, _) in enumerate(lp.rows):
        if rel in (LE, GE):
            slack_col[r] = ncols
            ncols += 1
    art_col = [None] * m
    residual = []
    for r, (coeffs, rel, rhs, _) in enumerate(lp.rows):
        act = sum((c * lo for c, lo in zip(coeffs, lp.lower) if c), _ZERO)
        res = rhs - act
        residual.append(res)
        needs_art = (rel == EQ) or (rel == LE and res < 0) or (rel == GE and res > 0)
        if needs_art:
            art_col[r] = ncols
            ncols += 1
    nslack = sum(1 for c in slack_col if c is not None)

    lo = [R(x) for x in lp.lower] + [None] * (ncols - n)
    hi = [R(x) for x in lp.upper] + [None] * (ncols - n)
    for r in range(m):
        rel = lp.rows[r][1]
        if slack_col[r] is not None:
            if rel == LE:
                lo[slack_col[r]] = _ZERO  # slack in [0, inf)
            else:
                hi[slack_col[r]] = _ZERO  # slack in (-inf, 0]
        if art_col[r] is not None:
            lo[art_col[r]] = _ZERO

    T = []
    xB = []
    basis = []
    stat = ["L"] * n + [""] * (ncols - n)
    val = list(lo[:n]) + [_ZERO] * (ncols - n)
    for r, (coeffs, rel, rhs, _) in enumerate(lp.rows):
        row = list(coeffs) + [_ZERO] * (ncols - n)
        if slack_col[r] is not None:
            row[slack_col[r]] = _ONE
        if art_col[r] is None:
            basis.append(slack_col[r])
            stat[slack_col[r]] = "B"
            xB.append(residual[r])
        else:
            if residual[r] < 0:
                row = [-x for x in row]
                xB.append(-residual[r])
            else:
                xB.append(residual[r])
            row[art_col[r]] = _ONE
            basis.append(art_col[r])
            stat[art_col[r]] = "B"
            if slack_col[r] is not None:
                stat[slack_col[r]] = "L" if lp.rows[r][1] == LE else "U"
        T.append(row)
    for r in range(m):
        if slack_col[r] is not None and stat[slack_col[r]] == "":
            stat[slack_col[r]] = "L" if lp.rows[r][1] == LE else "U"

    state = _SimplexState(lp, n, m, ncols, T, xB, basis, stat, val, lo, hi)

    if any(c is not None for c in art_col):
        cost1 = [_ZERO] * ncols
        for c in art_col:
            if c is not None:
                cost1[c] = _ONE
        obj1 = state.run(cost1)
        if obj1 > 0:
            bad = [
                lp.rows[r][3]
                for r in range(m)
                if basis[r] >= n + nslack and xB[r] > 0
            ]
            raise InfeasibleError(bad)
        state.drive_out_artificials(n + nslack)
        for c in art_col:
            if c is not None:
                hi[c] = _ZERO

    cost2 = [R(x) for x in lp.objective] + [_ZERO] * (ncols - n)
    state.run(cost2)

    row_of = {col: r for r, col in enumerate(basis)}
    y = tuple(xB[row_of[i]] if stat[i] == "B" else val[i] for i in range(n))
    objective = sum((c * v for c, v in zip(lp.objective, y) if c), _ZERO) + lp.constant
    tight, basis_labels = _certify_vertex(lp, y)
    return ExtremePoint(y, objective, tight, basis_labels)


class _SimplexState:
    def __init__(self, lp, n, m, ncols, T, xB, basis, stat, val, lo, hi):
        self.lp = lp
        self.n, self.m, self.ncols = n, m, ncols
        self.T, self.xB, self.basis = T, xB, basis
        self.stat, self.val, self.lo, self.hi = stat, val, lo, hi

    def run(self, cost):
        T, xB, basis = self.T, self.xB, self.basis
        stat, val, lo, hi = self.stat, self.val, self.lo, self.hi
        m, ncols = self.m, self.ncols
        z = list(cost)
        obj = _ZERO
        for r in range(m):
            cb = cost[basis[r]]
            obj += cb * xB[r]
            if cb:
                row = T[r]
                for j in range(ncols):
                    if row[j]:
                        z[j] -= cb * row[j]
        for j in range(ncols):
            if stat[j] != "B" and cost[j]:
                obj += cost[j] * val[j]

        guard = 0
        while True:
            guard += 1
            if guard > 200000:
                raise RuntimeError("simplex iteration guard tripped")
            enter = -1
            for j in range(ncols):
                s = stat[j]
                if s == "B" or lo[j] == hi[j]:
                    continue
                zj = z[j]
                if (s == "L" and zj < 0) or (s == "U" and zj > 0):
                    enter = j
                    break
            if enter < 0:
                return obj
            dirn = 1 if stat[enter] == "L" else -1

            t_flip = None
            if lo[enter] is not None and hi[enter] is not None:
                t_flip = hi[enter] - lo[enter]
            t_best = None
            leave = -1
            for r in range(m):
                coef = T[r][enter]
                if not coef:
                    continue
                rate = -coef if dirn == 1 else coef
                bvar = basis[r]
                if rate > 0:
                    if hi[bvar] is None:
                        continue
                    t_r = (hi[bvar] - xB[r]) / rate
                else:
                    if lo[bvar] is None:
                        continue
                    t_r = (xB[r] - lo[bvar]) / (-rate)
                if t_best is None or t_r < t_best or (t_r == t_best and bvar < basis[leave]):
                    t_best = t_r
                    leave = r
            if t_best is None and t_flip is None:
                raise UnboundedError(self._ray(enter, dirn))
            if t_flip is not None and (t_best is None or t_flip < t_best):
                delta = t_flip if dirn == 1 else -t_flip
                if delta:
                    for r in range(m):
                        if T[r][enter]:
                            xB[r] -= T[r][enter] * delta
                    obj += z[enter] * delta
                stat[enter] = "U" if dirn == 1 else "L"
                val[enter] = hi[enter] if dirn == 1 else lo[enter]
                continue

            delta = t_best if dirn == 1 else -t_best
            if delta:
                for r in range(m):
                    if T[r][enter]:
                        xB[r] -= T[r][enter] * delta
                obj += z[enter] * delta
            enter_val = val[enter] + delta
            self._pivot(leave, enter, enter_val, z)

    def _pivot(self, r, enter, enter_val, z):
        T, xB, basis, stat, val = self.T, self.xB, self.basis, self.stat, self.val
        lv = basis[r]
        leave_val = xB[r]
        if self.lo[lv] is not None and leave_val == self.lo[lv]:
            stat[lv], val[lv] = "L", leave_val
        else:
            assert leave_val == self.hi[lv], "leaving variable not at a bound"
            stat[lv], val[lv] = "U", leave_val
        basis[r] = enter
        stat[enter] = "B"
        xB[r] = enter_val
        piv = T[r][enter]
        if piv != 1:
            inv = 1 / piv
            T[r] = [x * inv for x in T[r]]
        prow = T[r]
        for rr in range(self.m):
            if rr == r:
                continue
            f = T[rr][enter]
            if f:
                T[rr] = [a - f * b for a, b in zip(T[rr], prow)]
        f = z[enter]
        if f:
            z[:] = [a - f * b for a, b in zip(z, prow)]

    def drive_out_artificials(self, first_art: int) -> None:
        """Pivot basic artificials (all at value 0 after phase 1) out of the
        basis where possible; rows with no eligible pivot are redundant and
        keep their artificial pinned at zero."""
        for r in range(self.m):
            if self.basis[r] < first_art:
                continue
            row = self.T[r]
            enter = next(
                (j for j in range(first_art) if row[j] and self.stat[j] != "B"),
                None,
            )
            if enter is None:
                continue
            self._pivot(r, enter, self.val[enter], [_ZERO] * self.ncols)

    def _ray(self, enter, dirn):
        ray = [_ZERO] * self.n
        if enter < self.n:
            ray[enter] = R(dirn)
        for r in range(self.m):
            if self.basis[r] < self.n and self.T[r][enter]:
                ray[self.basis[r]] = -R(dirn) * self.T[r][enter]
        return tuple(ray)


def _certify_vertex(lp: LinearProgram, y):
    """Return (tight labels, basis labels): all tight rows/bounds, plus a
    verified set of variableCount linearly independent tight constraints.

    Tight bounds contribute unit rows, so independence only needs checking on
    the fractional coordinates; Gaussian elimination over those columns both
    selects and certifies the remaining rows.
    """
    n = lp.variable_count
    tight = []
    basis = []
    frac = []
    for i in range(n):
        if y[i] == lp.lower[i]:
            tight.append(("Lower", i))
            basis.append(("Lower", i))
        elif y[i] == lp.upper[i]:
            tight.append(("Upper", i))
            basis.append(("Upper", i))
        else:
            frac.append(i)
        if y[i] == lp.lower[i] == lp.upper[i]:
            tight.append(("Upper", i))

    piv = []
    for coeffs, rel, rhs, label in lp.rows:
        act = sum((c * v for c, v in zip(coeffs, y) if c), _ZERO)
        if act == rhs:
            tight.append(label)
            if len(piv) < len(frac):
                v = [coeffs[i] for i in frac]
                for pos, prow in piv:
                    f = v[pos]
                    if f:
                        v = [a - f * b for a, b in zip(v, prow)]
                for pos, a in enumerate(v):
                    if a:
                        piv.append((pos, [x / a for x in v]))
                        basis.append(label)
                        break
        elif rel == LE and act > rhs or rel == GE and act < rhs:
            raise AssertionError(f"solver returned infeasible point at row {label}")
    if len(piv) < len(frac):
        raise AssertionError("solution is not a vertex: missing tight constraints")
    return tuple(tight), tuple(basis)
