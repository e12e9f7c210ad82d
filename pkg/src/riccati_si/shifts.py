"""Shift and pole selection for the rational iterations.

Three mechanisms live here: the rational min-max objective that measures how
well a shift set damps a spectrum, a Penzl-style greedy selection from Ritz
values, and adaptive mirrored-Ritz poles (with the stabilized variant that
looks at A - BB*X for the current approximate solution X instead of A alone).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

ORIGINS = ("penzl_A", "penzl_H", "adaptive_ritz", "adaptive_stabilized", "user")

_REAL_TOL = 1e-10


def _realify_scalar(z):
    z = complex(z)
    if abs(z.imag) <= _REAL_TOL * (1.0 + abs(z.real)):
        return complex(z.real, 0.0)
    return z


@dataclass(frozen=True)
class ShiftSequence:
    """Ordered shifts with positive real parts, closed under conjugation."""

    values: tuple
    origin: str = "user"
    notes: tuple = ()

    def __post_init__(self):
        vals = tuple(complex(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "notes", tuple(self.notes))
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown origin tag {self.origin!r}")
        for v in vals:
            if not v.real > 0.0:
                raise ValueError(f"shift {v} does not have positive real part")
        for v in vals:
            if abs(v.imag) > _REAL_TOL * (1.0 + abs(v)):
                match = min(abs(w - np.conj(v)) for w in vals)
                if match > 1e-10 * (1.0 + abs(v)):
                    raise ValueError(
                        f"shift set is not closed under conjugation: "
                        f"conjugate of {v} is missing"
                    )

    @property
    def reals(self):
        """Cached real parts a_k = Re(alpha_k)."""
        return tuple(v.real for v in self.values)

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def __getitem__(self, i):
        return self.values[i]

    def cycled(self, count: int):
        """First ``count`` entries of the infinitely cycled sequence."""
        return [self.values[i % len(self.values)] for i in range(count)]

    def to_json(self) -> str:
        return json.dumps([[v.real, v.imag] for v in self.values])

    @classmethod
    def from_json(cls, text: str, origin: str = "user") -> "ShiftSequence":
        pairs = json.loads(text)
        return cls(tuple(complex(re, im) for re, im in pairs), origin=origin)


def rational_objective(shifts, spectrum) -> float:
    """max over the spectrum of prod_i |lam - conj(alpha_i)| / |lam + alpha_i|.

    This is the quantity the shift selection tries to make small; it equals
    the spectral radius of the corresponding Cayley factor product on the
    antistable invariant subspace.
    """
    svals = [complex(s) for s in shifts]
    lam = np.asarray([complex(z) for z in spectrum])
    if lam.size == 0:
        raise ValueError("spectrum must be nonempty")
    if len(svals) == 0:
        raise ValueError("shift set must be nonempty")
    vals = np.ones(lam.shape, dtype=float)
    for s in svals:
        denom = np.abs(lam + s)
        bad = denom <= 1e-13 * (1.0 + np.abs(lam) + abs(s))
        if bad.any():
            culprit = lam[bad][0]
            raise ValueError(
                f"spectrum point {culprit} coincides with the pole of shift {s}"
            )
        vals *= np.abs(lam - np.conj(s)) / denom
    return float(vals.max())


def _arnoldi_ritz(matvec, v0, steps):
    """Ritz values from a modified-Gram-Schmidt Arnoldi run; returns
    (ritz values, broke_down)."""
    n = v0.size
    steps = max(1, min(steps, n))
    V = np.zeros((n, steps + 1), dtype=complex)
    Hm = np.zeros((steps + 1, steps), dtype=complex)
    nrm = np.linalg.norm(v0)
    if nrm == 0:
        raise ValueError("Arnoldi start vector is zero")
    V[:, 0] = v0 / nrm
    j_done = 0
    broke = False
    for j in range(steps):
        w = np.asarray(matvec(V[:, j]), dtype=complex).ravel()
        for i in range(j + 1):
            Hm[i, j] = np.vdot(V[:, i], w)
            w -= Hm[i, j] * V[:, i]
        for i in range(j + 1):
            c = np.vdot(V[:, i], w)
            Hm[i, j] += c
            w -= c * V[:, i]
        hnext = np.linalg.norm(w)
        j_done = j + 1
        if hnext <= 1e-12 * max(1.0, np.linalg.norm(Hm[: j + 1, j])):
            broke = True
            break
        Hm[j + 1, j] = hnext
        V[:, j + 1] = w / hnext
    ritz = np.linalg.eigvals(Hm[:j_done, :j_done])
    return ritz, broke


def _dedupe(points, tol=1e-8):
    kept = []
    for z in points:
        if all(abs(z - w) > tol * (1.0 + abs(z)) for w in kept):
            kept.append(z)
    return kept


def _hamiltonian_ops(problem):
    """Matvec and inverse-matvec with the Hamiltonian, never forming BB* or
    C*C; the inverse uses a low-rank update of the solve with A."""
    A = problem.A.tocsc().astype(complex)
    B = problem.B.astype(complex)
    C = problem.C.astype(complex)
    n = problem.n
    lu = splu(A)
    Astar_mv = A.conj().T.tocsr()

    def matvec(x):
        x1, x2 = x[:n], x[n:]
        top = A @ x1 - B @ (B.conj().T @ x2)
        bot = -C.conj().T @ (C @ x1) - Astar_mv @ x2
        return np.concatenate([top, bot])

    # pieces of the Woodbury-corrected solve with A + B(B*A^{-*}C*)C
    AsinvCt = lu.solve(C.conj().T, trans="H")
    mid = B.conj().T @ AsinvCt          # q x p
    U = B @ mid                         # n x p
    AinvU = lu.solve(U)
    small = np.eye(problem.p, dtype=complex) + C @ AinvU

    def invvec(x):
        x1, x2 = x[:n], x[n:]
        r = x1 - B @ (B.conj().T @ lu.solve(x2, trans="H"))
        base = lu.solve(r)
        y1 = base - AinvU @ np.linalg.solve(small, C @ base)
        y2 = -lu.solve(x2 + C.conj().T @ (C @ y1), trans="H")
        return np.concatenate([y1, y2])

    return matvec, invvec


def penzl_shifts(problem, m=10, m1=20, m2=10, mode="on_A",
                 candidate_pool=None) -> ShiftSequence:
    """Greedy shift selection from Ritz values.

    Two Krylov runs (m1 steps with the operator, m2 with its inverse) supply
    Ritz values of A (mode ``on_A``, the default) or of the Hamiltonian
    (mode ``on_H``, where only Ritz values with positive real part are kept).
    Stable Ritz values of A are mirrored into the right half-plane. The
    greedy pass seeds with the candidate minimizing the single-shift rational
    objective over the Ritz set, then repeatedly adds the candidate where the
    current product is largest (i.e. least damped). Conjugate pairs are kept
    together; when only one slot remains and the best candidate is complex,
    the best real candidate is preferred, and if none exists the pair is
    appended anyway (one shift over m) with a note.

    ``candidate_pool`` overrides the candidate set (the Ritz-derived spectrum
    is still the objective's evaluation set), which makes grid-search
    experiments reproducible.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if m > m1 + m2:
        raise ValueError(f"m={m} exceeds the Krylov budget m1+m2={m1 + m2}")
    notes = []
    if mode == "on_A":
        n = problem.n
        A = problem.A.tocsc().astype(complex)
        v0 = problem.B[:, 0].astype(complex)
        if np.linalg.norm(v0) == 0:
            v0 = np.ones(n, dtype=complex)
        lu = splu(A)
        ritz_op, br1 = _arnoldi_ritz(lambda x: A @ x, v0, min(m1, n))
        ritz_inv, br2 = _arnoldi_ritz(lu.solve, v0, min(m2, n))
        ritz = np.concatenate([ritz_op, 1.0 / ritz_inv[ritz_inv != 0]])
        mirrored = [-np.conj(z) for z in ritz]
    elif mode == "on_H":
        matvec, invvec = _hamiltonian_ops(problem)
        v0 = np.ones(2 * problem.n, dtype=complex)
        ritz_op, br1 = _arnoldi_ritz(matvec, v0, min(m1, 2 * problem.n))
        ritz_inv, br2 = _arnoldi_ritz(invvec, v0, min(m2, 2 * problem.n))
        mirrored = list(np.concatenate([ritz_op, 1.0 / ritz_inv[ritz_inv != 0]]))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if br1 or br2:
        notes.append("arnoldi breakdown; candidate set may be small")

    spectrum = _dedupe(_realify_scalar(z) for z in mirrored if z.real > 0)
    if not spectrum:
        raise ValueError("no Ritz-derived candidates with positive real part")
    if candidate_pool is not None:
        pool = _dedupe(_realify_scalar(z) for z in candidate_pool if complex(z).real > 0)
        if not pool:
            raise ValueError("candidate_pool has no entries with positive real part")
    else:
        pool = list(spectrum)

    def grab(z, remaining):
        """Take z (and its conjugate partner when complex) out of remaining."""
        out = [z]
        remaining.remove(z)
        if abs(z.imag) > _REAL_TOL * (1.0 + abs(z)):
            partner = None
            for w in remaining:
                if abs(w - np.conj(z)) <= 1e-8 * (1.0 + abs(z)):
                    partner = w
                    break
            remaining[:] = [w for w in remaining if w is not partner]
            out.append(np.conj(z) if partner is None else partner)
        return out

    remaining = list(pool)
    seed = min(remaining, key=lambda c: rational_objective([c], spectrum))
    chosen = grab(seed, remaining)

    def growth_score(t):
        val = 1.0
        for a in chosen:
            val *= abs(t - np.conj(a)) / abs(t + a)
        return val

    while len(chosen) < m and remaining:
        best = max(remaining, key=growth_score)
        is_complex = abs(best.imag) > _REAL_TOL * (1.0 + abs(best))
        if is_complex and m - len(chosen) == 1:
            reals = [t for t in remaining
                     if abs(t.imag) <= _REAL_TOL * (1.0 + abs(t))]
            if reals:
                best = max(reals, key=growth_score)
            else:
                notes.append("appended a conjugate pair into the last slot")
        chosen.extend(grab(best, remaining))

    if len(chosen) < m:
        notes.append(f"only {len(chosen)} distinct candidates available")
        warnings.warn(
            f"requested {m} shifts but only {len(chosen)} candidates were "
            f"available", stacklevel=2,
        )
    return ShiftSequence(tuple(chosen),
                         origin="penzl_A" if mode == "on_A" else "penzl_H",
                         notes=tuple(notes))


def projected_ritz(basis, problem, current_solution=None, mode="plain"):
    """Ritz values of A (or of A - BB*X for the current approximate solution
    in ``stabilized`` mode) on the span of ``basis``."""
    if mode not in ("plain", "stabilized"):
        raise ValueError(f"unknown mode {mode!r}")
    U = np.asarray(basis, dtype=complex)
    if U.ndim == 1:
        U = U[:, None]
    gram = U.conj().T @ U
    if np.linalg.norm(gram - np.eye(U.shape[1])) > 1e-8:
        U = np.linalg.qr(U)[0]
        gram = U.conj().T @ U
    W = problem.A @ U
    if mode == "stabilized" and current_solution is not None:
        XU = current_solution.apply(U)
        W = W - problem.B @ (problem.B.conj().T @ XU)
    small = np.linalg.solve(gram, U.conj().T @ W)
    return np.linalg.eigvals(small)


def _hull_candidates(mu):
    """Candidate points for the pole search: interior grid points between
    consecutive mirrored Ritz values when they are all real, otherwise a
    discretization of the boundary of their conjugation-closed convex hull."""
    mu = list(mu)
    all_real = all(abs(z.imag) <= 1e-8 * (1.0 + abs(z)) for z in mu)
    cands = []
    if all_real:
        xs = sorted(z.real for z in mu)
        for lo, hi in zip(xs[:-1], xs[1:]):
            if hi - lo > 1e-14 * (1.0 + abs(hi)):
                cands.extend(complex(x) for x in np.linspace(lo, hi, 34)[1:-1])
        return cands
    pts = mu + [np.conj(z) for z in mu]
    coords = np.array([[z.real, z.imag] for z in _dedupe(pts)])
    try:
        from scipy.spatial import ConvexHull, QhullError
        hull = ConvexHull(coords)
        for a, b in hull.simplices:
            za = complex(*coords[a])
            zb = complex(*coords[b])
            for t in np.linspace(0.0, 1.0, 18)[1:-1]:
                cands.append(za + t * (zb - za))
        return cands
    except Exception:
        # degenerate geometry (collinear points etc): fall back to segments
        # between every pair
        for i in range(len(coords)):
            for j in range(i + 1, len(coords)):
                za = complex(*coords[i])
                zb = complex(*coords[j])
                for t in np.linspace(0.0, 1.0, 10)[1:-1]:
                    cands.append(za + t * (zb - za))
        return cands


def adaptive_pole(basis_so_far, problem, current_solution=None,
                  existing_poles=(), mode="plain") -> complex:
    """Next pole by the greedy rational criterion on mirrored Ritz values.

    The projected operator's stable Ritz values are mirrored into the right
    half-plane; candidate points discretize the region they span, and the
    returned pole maximizes prod |s - alpha_i| / prod |s - mu_j| over the
    candidates (largest value of the reciprocal of the rational function with
    zeros at the mirrored Ritz values and poles at the shifts already used).
    With no existing poles the single-shift rational objective is minimized
    instead. A complex result is returned as-is; the caller is responsible
    for also using its conjugate.

    If no Ritz value is stable, the most recent existing pole is returned
    with a warning.
    """
    theta = projected_ritz(basis_so_far, problem, current_solution, mode)
    stable = theta[theta.real < 0]
    if stable.size == 0:
        if len(existing_poles) > 0:
            warnings.warn(
                "no stable Ritz value on the current space; reusing the most "
                "recent pole", stacklevel=2,
            )
            return complex(existing_poles[-1])
        raise ValueError("no stable Ritz values and no previous pole to reuse")
    mu = _dedupe(_realify_scalar(-np.conj(z)) for z in stable)
    if len(mu) == 1:
        return _realify_scalar(mu[0])
    cands = _hull_candidates(mu)
    cands = [c for c in cands
             if min(abs(c - z) for z in mu) > 1e-12 * (1.0 + abs(c))]
    if not cands:
        return _realify_scalar(mu[0])
    poles = [complex(s) for s in existing_poles]
    if poles:
        def score(s):
            num = 1.0
            for a in poles:
                num *= abs(s - a)
            den = 1.0
            for z in mu:
                den *= abs(s - z)
            return num / den
        winner = max(cands, key=score)
    else:
        winner = min(cands, key=lambda c: rational_objective([c], mu))
    return _realify_scalar(winner)
