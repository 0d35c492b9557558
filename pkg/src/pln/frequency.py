"""Exact integrality test for the transverse multipliers of a frequency matrix.

``Lambda`` is s x n with rows the frequency vectors of the s known integrals.
Its first s columns form ``A`` (torus directions) and the remaining ``r``
columns form ``B``. With ``Omega = A^T`` and ``P = Omega^-1``, a winding
``n`` gives transverse rotation numbers ``Q = B^T P n``; condition N asks
that no ``Q_j`` be an integer. By Cramer's rule
``Q_j = sum_k n_k det(Omega*(k; j)) / det(Omega)``, where ``Omega*(k; j)`` is
``Omega`` with row k replaced by row j of ``B^T``.

All linear algebra here is plain Gaussian elimination that works on any
field-like scalars: ``Fraction`` entries give exact answers, floats give the
numerical path (decided with an integer-distance tolerance).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from math import gcd
from numbers import Rational

from .errors import ConfigError, SingularBlockError
from .oscillators import INTEGER_TOL, is_integer


def _is_zero(x) -> bool:
    return x == 0 if isinstance(x, Rational) else abs(x) < 1e-300


def determinant(M):
    """Determinant by elimination with largest-magnitude pivots."""
    a = [list(row) for row in M]
    n = len(a)
    if any(len(row) != n for row in a):
        raise ValueError("matrix must be square")
    det = Fraction(1) if all(isinstance(x, Rational) for row in a for x in row) else 1.0
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(a[r][col]))
        if _is_zero(a[piv][col]):
            return det * 0
        if piv != col:
            a[col], a[piv] = a[piv], a[col]
            det = -det
        p = a[col][col]
        det = det * p
        for r in range(col + 1, n):
            f = a[r][col] / p
            if not _is_zero(f):
                for c in range(col, n):
                    a[r][c] = a[r][c] - f * a[col][c]
    return det


def inverse(M):
    """Gauss-Jordan inverse; raises SingularBlockError when a pivot vanishes."""
    n = len(M)
    a = [list(row) + [1 if i == j else 0 for j in range(n)] for i, row in enumerate(M)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(a[r][col]))
        if _is_zero(a[piv][col]):
            raise SingularBlockError("matrix is singular", det=0)
        a[col], a[piv] = a[piv], a[col]
        p = a[col][col]
        a[col] = [x / p for x in a[col]]
        for r in range(n):
            if r != col and not _is_zero(a[r][col]):
                f = a[r][col]
                a[r] = [x - f * y for x, y in zip(a[r], a[col])]
    return [row[n:] for row in a]


def matmul(A, B):
    return [[sum((A[i][t] * B[t][j] for t in range(len(B))), start=0 * A[i][0])
             for j in range(len(B[0]))] for i in range(len(A))]


def transpose(A):
    return [list(col) for col in zip(*A)]


def _coerce(x):
    if isinstance(x, bool):
        raise TypeError("boolean entry")
    if isinstance(x, Rational):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x)
    return float(x)


@dataclass(frozen=True)
class FrequencyMatrix:
    """Frequency rows of the s known integrals over n oscillator planes."""

    s: int
    n: int
    Lambda: tuple

    def __post_init__(self):
        rows = tuple(tuple(_coerce(x) for x in row) for row in self.Lambda)
        if len(rows) != self.s or any(len(r) != self.n for r in rows):
            raise ValueError(f"Lambda must be {self.s} x {self.n}")
        if not 1 <= self.s <= self.n:
            raise ValueError("need 1 <= s <= n")
        object.__setattr__(self, "Lambda", rows)

    @classmethod
    def from_blocks(cls, A, B):
        rows = [list(a) + list(b) for a, b in zip(A, B)]
        return cls(len(rows), len(rows[0]), rows)

    @property
    def r(self) -> int:
        return self.n - self.s

    @property
    def exact(self) -> bool:
        return all(isinstance(x, Fraction) for row in self.Lambda for x in row)

    @property
    def A_block(self):
        return [list(row[: self.s]) for row in self.Lambda]

    @property
    def B_block(self):
        return [list(row[self.s:]) for row in self.Lambda]

    @property
    def Omega(self):
        return transpose(self.A_block)

    def det_omega(self):
        return determinant(self.Omega)

    @property
    def P(self):
        """``Omega^-1``; raises SingularBlockError when it does not exist."""
        d = self.det_omega()
        if _is_zero(d):
            raise SingularBlockError("Omega is singular", det=d)
        return inverse(self.Omega)

    def omega_star(self, k: int, j: int):
        """``Omega`` with row ``k`` replaced by row ``j`` of ``B^T`` (zero-based)."""
        om = [list(row) for row in self.Omega]
        om[k] = [row[self.s + j] for row in self.Lambda]
        return om

    def to_strings(self):
        return [[str(x) if isinstance(x, Fraction) else repr(x) for x in row] for row in self.Lambda]


def _winding(freq, n_vec):
    n_vec = [int(v) for v in n_vec]
    if len(n_vec) != freq.s:
        raise ValueError(f"winding must have {freq.s} entries")
    return n_vec


@dataclass(frozen=True)
class CriterionResult:
    values: tuple
    holds_per_j: tuple
    verdict: bool
    det_omega: object = None
    sums: tuple = ()


def q_values(freq: FrequencyMatrix, n_vec) -> CriterionResult:
    """``Q = B^T P n`` with per-j verdicts ``Q_j not in Z``."""
    n_vec = _winding(freq, n_vec)
    P = freq.P
    Bt = transpose(freq.B_block) if freq.r else []
    Pn = [sum((P[i][k] * n_vec[k] for k in range(freq.s)), start=0 * P[i][0])
          for i in range(freq.s)]
    Q = tuple(sum((Bt[j][i] * Pn[i] for i in range(freq.s)), start=0 * Pn[0])
              for j in range(freq.r))
    holds = tuple(not is_integer(q) for q in Q)
    return CriterionResult(Q, holds, all(holds), freq.det_omega())


def determinant_criterion(freq: FrequencyMatrix, n_vec, tol: float = INTEGER_TOL) -> CriterionResult:
    """Per j, ``sum_k n_k det Omega*(k; j)`` must not be an integer multiple of ``det Omega``.

    ``values`` holds the quotients, ``sums`` the numerators.
    """
    n_vec = _winding(freq, n_vec)
    d = freq.det_omega()
    if _is_zero(d):
        raise SingularBlockError("Omega is singular", det=d)
    sums = []
    holds = []
    quotients = []
    for j in range(freq.r):
        total = sum((n_vec[k] * determinant(freq.omega_star(k, j)) for k in range(freq.s)),
                    start=0 * d)
        sums.append(total)
        quotient = total / d
        quotients.append(quotient)
        holds.append(not is_integer(quotient, tol))
    return CriterionResult(tuple(quotients), tuple(holds), all(holds), d, tuple(sums))


def cramer_identity_residual(freq: FrequencyMatrix):
    """Max over (j, k) of ``|(B^T P)_{jk} - det Omega*(k; j)/det Omega|``; zero when exact."""
    P = freq.P
    Bt = transpose(freq.B_block)
    BP = matmul(Bt, P) if freq.r else []
    d = freq.det_omega()
    worst = 0
    for j in range(freq.r):
        for k in range(freq.s):
            diff = abs(BP[j][k] - determinant(freq.omega_star(k, j)) / d)
            worst = max(worst, diff)
    return worst


def reduce_winding(n_vec):
    """Divide a winding by the gcd of its entries (relatively prime form)."""
    n_vec = [int(v) for v in n_vec]
    g = 0
    for v in n_vec:
        g = gcd(g, v)
    if g == 0:
        raise ValueError("winding vector must be nonzero")
    return tuple(v // g for v in n_vec)


# ---------------------------------------------------------------------------
# batch files

BATCH_HEADER = ["s", "n", "lambda", "winding"]


def read_batch(fh):
    """Rows ``s, n, lambda, winding``: Lambda row-major as space-separated
    ``p/q`` strings, winding space-separated integers."""
    reader = csv.DictReader(fh)
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != BATCH_HEADER:
        raise ConfigError(f"batch header must be {','.join(BATCH_HEADER)}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        try:
            s, n = int(row["s"]), int(row["n"])
            vals = [Fraction(v) for v in row["lambda"].split()]
            wind = [int(v) for v in row["winding"].split()]
        except (ValueError, ZeroDivisionError, AttributeError) as exc:
            raise ConfigError(f"line {lineno}: {exc}") from exc
        if len(vals) != s * n:
            raise ConfigError(f"line {lineno}: expected {s * n} matrix entries, got {len(vals)}")
        out.append((FrequencyMatrix(s, n, [vals[i * n:(i + 1) * n] for i in range(s)]), wind))
    return out


def run_batch(rows):
    """Evaluate both forms of the criterion on each row; returns result dicts."""
    results = []
    for freq, wind in rows:
        entry = {"s": freq.s, "n": freq.n, "winding": wind, "lambda": freq.to_strings()}
        try:
            q = q_values(freq, wind)
            dc = determinant_criterion(freq, wind)
        except SingularBlockError as exc:
            entry.update(error=str(exc), det_omega=str(exc.det), verdict=None)
        else:
            entry.update(det_omega=str(q.det_omega), Q=[str(v) for v in q.values],
                         holds=list(q.holds_per_j), verdict=q.verdict,
                         determinant_verdict=dc.verdict, agree=q.verdict == dc.verdict)
        results.append(entry)
    return results


def write_batch_results(results, fh):
    w = csv.writer(fh)
    width = max((len(r.get("Q", [])) for r in results), default=0)
    w.writerow(["row", "s", "n", "winding", "det_omega"]
               + [f"Q_{j + 1}" for j in range(width)]
               + [f"holds_{j + 1}" for j in range(width)] + ["verdict", "determinant_verdict"])
    for i, r in enumerate(results):
        Q = r.get("Q", [])
        holds = r.get("holds", [])
        w.writerow([i, r["s"], r["n"], " ".join(map(str, r["winding"])), r["det_omega"]]
                   + Q + [""] * (width - len(Q))
                   + [str(h).lower() for h in holds] + [""] * (width - len(holds))
                   + ["error" if r["verdict"] is None else str(r["verdict"]).lower(),
                      "" if r["verdict"] is None else str(r["determinant_verdict"]).lower()])


def batch_from_text(text: str):
    return read_batch(io.StringIO(text))
