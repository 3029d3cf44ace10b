"""Sieve bases for the intercept and loading functions.

Three kinds are supported, each expanding every characteristic into a block
of ``J`` basis values (plus one optional global intercept column):

- ``linear``: block (z,), J = 1.
- ``quadratic``: block (z, z^2), J = 2.  Used by the simulation harness,
  where the target functions are exactly quadratic.
- ``bspline_linear``: J = n_internal_knots + 1 piecewise-linear functions on
  equidistant knots.  The j-th function rises linearly on the half-open
  interval left of its peak knot and falls on the next one; the last
  function only rises, so every function vanishes at the left boundary.

Basis evaluation clamps inputs to the per-characteristic domain so that
out-of-sample evaluation is total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_vector_length, require
from .errors import ConfigError
from .panel import Panel

KINDS = ("linear", "bspline_linear", "quadratic")
DEFAULT_DOMAIN = (-0.5, 0.5)
UNBOUNDED = (-math.inf, math.inf)


@dataclass(frozen=True)
class SieveSpec:
    """Specification of a sieve basis over M characteristics."""

    kind: str
    n_chars: int
    include_intercept: bool = True
    n_internal_knots: int = 0
    domain: tuple = DEFAULT_DOMAIN

    def __post_init__(self):
        require(self.kind in KINDS, f"unknown basis kind {self.kind!r}; expected one of {KINDS}")
        require(isinstance(self.n_chars, int) and self.n_chars >= 1,
                f"n_chars must be a positive integer, got {self.n_chars!r}")
        require(isinstance(self.n_internal_knots, int) and self.n_internal_knots >= 0,
                f"n_internal_knots must be a nonnegative integer, got {self.n_internal_knots!r}")
        if self.kind != "bspline_linear":
            require(self.n_internal_knots == 0,
                    f"n_internal_knots applies only to bspline_linear, got {self.n_internal_knots}")
        dom = self.domain
        if len(dom) == 2 and np.isscalar(dom[0]):
            dom = (tuple(dom),) * self.n_chars
        else:
            dom = tuple(tuple(pair) for pair in dom)
        require(len(dom) == self.n_chars,
                f"domain must give one (lo, hi) pair per characteristic, got {len(dom)}")
        for lo, hi in dom:
            require(lo < hi, f"domain interval must have lo < hi, got ({lo}, {hi})")
            if self.kind == "bspline_linear":
                require(math.isfinite(lo) and math.isfinite(hi),
                        "bspline_linear requires a finite domain")
        object.__setattr__(self, "domain", dom)

    @property
    def basis_per_char(self) -> int:
        """Number of basis functions J per characteristic."""
        if self.kind == "linear":
            return 1
        if self.kind == "quadratic":
            return 2
        return self.n_internal_knots + 1

    @property
    def total_dim(self) -> int:
        return self.basis_per_char * self.n_chars + (1 if self.include_intercept else 0)

    def to_dict(self) -> dict:
        enc = lambda v: None if math.isinf(v) else v
        return {
            "kind": self.kind,
            "n_chars": self.n_chars,
            "include_intercept": self.include_intercept,
            "n_internal_knots": self.n_internal_knots,
            "domain": [[enc(lo), enc(hi)] for lo, hi in self.domain],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SieveSpec":
        try:
            dom = data.get("domain", DEFAULT_DOMAIN)
            if dom and not np.isscalar(dom[0]):
                dom = tuple(
                    (-math.inf if lo is None else float(lo),
                     math.inf if hi is None else float(hi))
                    for lo, hi in dom
                )
            return cls(
                kind=data["kind"],
                n_chars=int(data["n_chars"]),
                include_intercept=bool(data.get("include_intercept", True)),
                n_internal_knots=int(data.get("n_internal_knots", 0)),
                domain=dom,
            )
        except (KeyError, TypeError, ValueError) as err:
            raise ConfigError(f"invalid sieve spec: {err}") from None


def linear_spec(n_chars: int, include_intercept: bool = True, domain=DEFAULT_DOMAIN) -> SieveSpec:
    return SieveSpec("linear", n_chars, include_intercept, 0, domain)


def bspline_spec(n_chars: int, n_internal_knots: int = 1, include_intercept: bool = True,
                 domain=DEFAULT_DOMAIN) -> SieveSpec:
    return SieveSpec("bspline_linear", n_chars, include_intercept, n_internal_knots, domain)


def quadratic_spec(n_chars: int, include_intercept: bool = False, domain=UNBOUNDED) -> SieveSpec:
    return SieveSpec("quadratic", n_chars, include_intercept, 0, domain)


def _bspline_block(z: np.ndarray, lo: float, hi: float, n_funcs: int) -> np.ndarray:
    """Evaluate the J piecewise-linear functions on equidistant knots.

    Intervals are half-open on the left, so every function is exactly zero
    at the left boundary of the domain.
    """
    h = (hi - lo) / n_funcs
    knots = lo + h * np.arange(n_funcs + 1)
    out = np.zeros(z.shape + (n_funcs,))
    for j in range(n_funcs):
        rise = (z > knots[j]) & (z <= knots[j + 1])
        out[rise, j] = (z[rise] - knots[j]) / h
        if j < n_funcs - 1:
            fall = (z > knots[j + 1]) & (z <= knots[j + 2])
            out[fall, j] = (knots[j + 2] - z[fall]) / h
    return out


def eval_basis_many(spec: SieveSpec, z: np.ndarray) -> np.ndarray:
    """Evaluate the basis at each row of ``z`` (n, M) -> (n, total_dim)."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != spec.n_chars:
        raise ConfigError(
            f"characteristics must have shape (n, {spec.n_chars}), got {z.shape}"
        )
    n = z.shape[0]
    j = spec.basis_per_char
    blocks = np.empty((n, spec.n_chars, j))
    for m, (lo, hi) in enumerate(spec.domain):
        zm = np.clip(z[:, m], lo, hi)
        if spec.kind == "linear":
            blocks[:, m, 0] = zm
        elif spec.kind == "quadratic":
            blocks[:, m, 0] = zm
            blocks[:, m, 1] = zm * zm
        else:
            blocks[:, m, :] = _bspline_block(zm, lo, hi, j)
    flat = blocks.reshape(n, spec.n_chars * j)
    if spec.include_intercept:
        return np.hstack([np.ones((n, 1)), flat])
    return flat


def eval_basis(spec: SieveSpec, z) -> np.ndarray:
    """Evaluate the basis vector at a single point z (length M)."""
    z = check_vector_length(z, spec.n_chars, "z")
    return eval_basis_many(spec, z[None, :])[0]


def design_matrix(spec: SieveSpec, panel: Panel, t: int) -> np.ndarray:
    """Per-period design matrix with unobserved rows set entirely to zero.

    The zero rows (intercept slot included) make Gram matrices and
    cross-products sum over observed assets only.
    """
    if not (0 <= t < panel.n_periods):
        raise ConfigError(f"period index {t} out of range [0, {panel.n_periods})")
    phi = eval_basis_many(spec, panel.characteristics[t])
    phi[~panel.mask[t]] = 0.0
    return phi


def design_matrices(spec: SieveSpec, panel: Panel) -> np.ndarray:
    """All T design matrices stacked as a (T, N, total_dim) array."""
    flat = eval_basis_many(
        spec, panel.characteristics.reshape(-1, panel.n_chars)
    ).reshape(panel.n_periods, panel.n_assets, spec.total_dim)
    flat[~panel.mask] = 0.0
    return flat
