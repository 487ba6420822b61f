"""Matrix-field families: the concentrating counterexample, cofactor-of-Hessian
divergence-free fields, oscillation sequences and the epsilon shift."""
from __future__ import annotations

from dataclasses import dataclass, field
from math import gamma, pi
from typing import Sequence

import numpy as np

from . import symcore
from .errors import (FamilyMismatch, NotConvexPotential, ResolutionMismatch,
                     UnderResolvedBall)
from .torus import MatrixField, TorusGrid, mollify


def ball_volume(n: int) -> float:
    """Volume of the unit ball in R^n."""
    return pi ** (n / 2) / gamma(n / 2 + 1)


@dataclass(frozen=True)
class AnalyticCounterexample:
    """Closed-form data for A_k = 2^(k(n-1)) * indicator(B(x0, 2^-k)) * Id."""

    n: int
    x0: tuple
    k: int

    @property
    def support_radius(self) -> float:
        return 2.0**-self.k

    @property
    def height(self) -> float:
        return 2.0 ** (self.k * (self.n - 1))

    @property
    def exact_D(self) -> float:
        return ball_volume(self.n)

    @property
    def exact_div_tv(self) -> float:
        # jump height times sphere area n*omega_n*r^(n-1)
        return self.n * ball_volume(self.n)

    def exact_lp(self, p: float) -> float:
        n, k = self.n, self.k
        if np.isinf(p):
            return self.height
        return (ball_volume(n) * 2.0 ** (k * (n - 1) * p - k * n)) ** (1.0 / p)


def counterexample_field(n: int, x0=None, k: int = 1, grid: TorusGrid | None = None):
    """Sampled concentrating field plus its analytic record.

    Nodes inside the closed ball (periodic distance) take the value
    ``2^(k(n-1)) Id``; the divergence is never differenced on the grid.
    """
    if grid is None or grid.n != n:
        raise ValueError("a grid of matching dimension is required")
    if k < 1:
        raise ValueError("k >= 1 required so the ball fits in the unit cell")
    x0 = tuple(float(c) for c in (x0 if x0 is not None else (0.5,) * n))
    rec = AnalyticCounterexample(n, x0, k)
    if grid.m * rec.support_radius < 8:
        raise UnderResolvedBall(
            f"m * 2^-k = {grid.m * rec.support_radius} < 8; refine the grid"
        )
    d = grid.coords() - np.asarray(x0)
    d = d - np.rint(d)
    inside = np.linalg.norm(d, axis=-1) <= rec.support_radius * (1 + 1e-12)
    vals = np.zeros(grid.shape + (n, n))
    vals[inside] = rec.height * np.eye(n)
    return MatrixField(grid, vals, psd=True), rec


def _potential_hessian(n, amplitude, modes, grid):
    x = grid.coords()
    H = np.broadcast_to(np.eye(n), grid.shape + (n, n)).copy()
    for mode in modes:
        kv = 2 * pi * np.asarray(mode, dtype=float)
        if kv.shape != (n,):
            raise ValueError(f"mode {mode} is not an {n}-vector")
        s = np.sin(kv * x)
        c = np.cos(kv * x)
        for i in range(n):
            for j in range(i, n):
                if i == j:
                    term = -kv[i] ** 2 * np.prod(s, axis=-1)
                else:
                    others = [l for l in range(n) if l not in (i, j)]
                    term = kv[i] * kv[j] * c[..., i] * c[..., j]
                    for l in others:
                        term = term * s[..., l]
                H[..., i, j] += amplitude * term
                if i != j:
                    H[..., j, i] += amplitude * term
    return H


def cofactor_hessian_field(n: int, amplitude: float, modes: Sequence, grid: TorusGrid) -> MatrixField:
    """A = cof(Hess u) for u = |x|^2/2 + amplitude * sum_modes prod_j sin(2 pi k_j x_j).

    Divergence-free by the Piola identity; PSD when u is convex.
    """
    if n not in (2, 3) or grid.n != n:
        raise ValueError("n must be 2 or 3 and match the grid")
    if amplitude < 0:
        raise ValueError("amplitude must be >= 0")
    H = _potential_hessian(n, amplitude, modes, grid)
    lo = np.linalg.eigvalsh(H)[..., 0].min()
    if lo <= 0:
        raise NotConvexPotential(f"Hess u has eigenvalue {lo:.3e} <= 0")
    return MatrixField(grid, symcore.batch_cof(H), psd=True)


def oscillation_sequence(B: MatrixField, k: int) -> MatrixField:
    """A_k(x) = B(k x mod 1); node i maps exactly to node k*i mod m."""
    if int(k) != k or k < 1:
        raise ValueError("k must be a positive integer")
    m = B.grid.m
    if m % k:
        raise ResolutionMismatch(f"grid size m={m} not divisible by k={k}")
    idx = (k * np.arange(m)) % m
    v = B.values
    for j in range(B.grid.n):
        v = np.take(v, idx, axis=j)
    return MatrixField(B.grid, v, psd=B.psd)


def epsilon_shift(A: MatrixField, eps: float) -> MatrixField:
    if eps < 0:
        raise ValueError("eps must be >= 0")
    n = A.grid.n
    return MatrixField(A.grid, A.values + eps * np.eye(n), psd=A.psd)


def separable_diag_field(a_coef: Sequence[float], b_coef: Sequence[float], grid: TorusGrid) -> MatrixField:
    """diag(a(x2), b(x1)) with a, b cosine series ``c0 + sum c_j cos(2 pi j t)``.

    Divergence-free in two dimensions; det separates into a product.
    """
    if grid.n != 2:
        raise ValueError("separable fields are two-dimensional")
    x = grid.coords()

    def series(c, t):
        return c[0] + sum(cj * np.cos(2 * pi * j * t) for j, cj in enumerate(c[1:], start=1))

    v = np.zeros(grid.shape + (2, 2))
    v[..., 0, 0] = series(a_coef, x[..., 1])
    v[..., 1, 1] = series(b_coef, x[..., 0])
    return MatrixField(grid, v, psd=True)


FAMILIES = ("counterexample", "oscillation", "mollified", "constant")


@dataclass(frozen=True)
class SequenceSpec:
    """A named sequence {A_k}: family, its parameters and the k range.

    Parameters by family:

    * counterexample: n, m, x0 (optional)
    * oscillation: base (MatrixField, in memory) or base_* generator keys
    * mollified: base, eps0 (eps_k = eps0 * 2^-k)
    * constant: base
    """

    family: str
    params: dict = field(default_factory=dict)
    k_range: tuple = (1, 2, 3)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise FamilyMismatch(f"unknown family {self.family!r}")
        object.__setattr__(self, "k_range", tuple(int(k) for k in self.k_range))
        if list(self.k_range) != sorted(self.k_range):
            raise ValueError("k_range must be increasing")
        required = {
            "counterexample": ("n", "m"),
            "oscillation": ("base",),
            "mollified": ("base", "eps0"),
            "constant": ("base",),
        }[self.family]
        missing = [r for r in required if r not in self.params]
        if missing:
            raise FamilyMismatch(f"family {self.family} missing parameters {missing}")

    def member(self, k: int):
        """The k-th field (and the analytic record for the counterexample)."""
        p = self.params
        if self.family == "counterexample":
            n, m = int(p["n"]), int(p["m"])
            return counterexample_field(n, p.get("x0"), k, TorusGrid(n, m))
        base = p["base"]
        if self.family == "oscillation":
            return oscillation_sequence(base, k), None
        if self.family == "mollified":
            return mollify(base, float(p["eps0"]) * 2.0**-k), None
        return base, None

    def to_text(self) -> str:
        lines = [f"family = {self.family}",
                 "k_range = " + ",".join(str(k) for k in self.k_range)]
        for key in sorted(self.params):
            val = self.params[key]
            if isinstance(val, MatrixField):
                continue  # field references are passed in memory or by file
            if isinstance(val, (list, tuple)):
                val = ",".join(repr(v) for v in val)
            lines.append(f"{key} = {val}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, **fields) -> "SequenceSpec":
        kv = parse_key_values(text)
        family = kv.pop("family", None)
        if family is None:
            raise FamilyMismatch("missing 'family' key")
        k_range = tuple(int(v) for v in kv.pop("k_range", "1,2,3").split(","))
        params = dict(kv)
        params.update(fields)
        if "x0" in params and isinstance(params["x0"], str):
            params["x0"] = tuple(float(v) for v in params["x0"].split(","))
        return cls(family, params, k_range)


def parse_key_values(text: str) -> dict:
    """Flat ``key = value`` text; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out
