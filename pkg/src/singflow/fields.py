"""Polynomial vector fields on R^d with declared nondegenerate singularities.

All builtin fields (linear, Lorenz, Van der Pol, Hopf normal form) are
polynomial, so they share one representation: a list of monomials per output
coordinate.  Evaluation and Jacobians are exact up to rounding.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import _kernels
from .errors import DegenerateSingularityError, DomainError

__all__ = [
    "VectorFieldSpec",
    "SingularityRecord",
    "linear_field",
    "lorenz",
    "van_der_pol",
    "hopf",
    "polynomial_field",
    "eval_field",
    "eval_jacobian",
    "find_singularities",
    "from_config",
    "to_config",
    "load_field",
    "save_field",
    "BUILTIN_KINDS",
]

BUILTIN_KINDS = ("linear", "lorenz", "vanderpol", "hopf")

Monomial = tuple[float, tuple[int, ...]]


@dataclass(frozen=True)
class VectorFieldSpec:
    """Immutable description of a polynomial vector field.

    ``monomials[i]`` lists the ``(coefficient, exponents)`` pairs whose sum is
    the i-th component of X.  Builtin kinds keep their parameters in
    ``params`` for serialization; their monomials are generated from them.
    """

    dim: int
    kind: str
    monomials: tuple[tuple[Monomial, ...], ...]
    singularities: tuple[tuple[float, ...], ...] = ()
    domain_radius: float = 10.0
    params: Mapping[str, Any] = field(default_factory=dict)

    coef: np.ndarray = field(init=False, repr=False, compare=False)
    comp: np.ndarray = field(init=False, repr=False, compare=False)
    expo: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be a positive integer")
        if len(self.monomials) != self.dim:
            raise ValueError(f"expected {self.dim} coordinate lists, got {len(self.monomials)}")
        if not self.domain_radius > 0:
            raise ValueError("domain_radius must be positive")
        coef, comp, expo = [], [], []
        for i, terms in enumerate(self.monomials):
            for c, e in terms:
                if len(e) != self.dim or any(int(k) < 0 for k in e):
                    raise ValueError(f"bad exponent multi-index {e!r} in coordinate {i}")
                if c != 0.0:
                    coef.append(float(c))
                    comp.append(i)
                    expo.append([int(k) for k in e])
        for s in self.singularities:
            if len(s) != self.dim:
                raise ValueError(f"singularity seed {s!r} has wrong dimension")
        arrs = (
            np.array(coef, dtype=float),
            np.array(comp, dtype=np.int64),
            np.array(expo, dtype=np.int64).reshape(len(coef), self.dim),
        )
        for name, a in zip(("coef", "comp", "expo"), arrs):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def __hash__(self):
        return hash((self.dim, self.kind, self.monomials, self.singularities, self.domain_radius))

    # unchecked fast paths used by the other modules
    def _f(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(self.dim)
        _kernels.poly_eval(self.coef, self.comp, self.expo, np.asarray(x, dtype=float), out)
        return out

    def _df(self, x: np.ndarray) -> np.ndarray:
        out = np.empty((self.dim, self.dim))
        _kernels.poly_jac(self.coef, self.comp, self.expo, np.asarray(x, dtype=float), out)
        return out


@dataclass(frozen=True)
class SingularityRecord:
    position: np.ndarray
    jacobian: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.position.size


def _unit(d: int, i: int) -> tuple[int, ...]:
    return tuple(1 if k == i else 0 for k in range(d))


def linear_field(A, domain_radius: float = 10.0) -> VectorFieldSpec:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = A.shape[0]
    if A.shape != (d, d):
        raise ValueError("A must be square")
    mons = tuple(
        tuple((float(A[i, j]), _unit(d, j)) for j in range(d) if A[i, j] != 0.0)
        for i in range(d)
    )
    return VectorFieldSpec(
        d, "linear", mons, ((0.0,) * d,), domain_radius, {"A": A.tolist()}
    )


def lorenz(sigma: float = 10.0, rho: float = 28.0, beta: float = 8.0 / 3.0,
           domain_radius: float = 100.0) -> VectorFieldSpec:
    mons = (
        ((-sigma, (1, 0, 0)), (sigma, (0, 1, 0))),
        ((rho, (1, 0, 0)), (-1.0, (1, 0, 1)), (-1.0, (0, 1, 0))),
        ((1.0, (1, 1, 0)), (-beta, (0, 0, 1))),
    )
    sings = [(0.0, 0.0, 0.0)]
    if rho > 1:
        q = float(np.sqrt(beta * (rho - 1)))
        sings += [(q, q, rho - 1.0), (-q, -q, rho - 1.0)]
    params = {"sigma": sigma, "rho": rho, "beta": beta}
    return VectorFieldSpec(3, "lorenz", mons, tuple(sings), domain_radius, params)


def van_der_pol(mu: float = 1.0, domain_radius: float = 10.0) -> VectorFieldSpec:
    # x' = y,  y' = mu (1 - x^2) y - x
    mons = (
        ((1.0, (0, 1)),),
        ((mu, (0, 1)), (-mu, (2, 1)), (-1.0, (1, 0))),
    )
    return VectorFieldSpec(2, "vanderpol", mons, ((0.0, 0.0),), domain_radius, {"mu": mu})


def hopf(alpha: float = 1.0, omega: float = 1.0, domain_radius: float = 10.0) -> VectorFieldSpec:
    """Hopf normal form; for alpha > 0 the circle r = sqrt(alpha) is a limit cycle of period 2 pi / omega."""
    mons = (
        ((alpha, (1, 0)), (-omega, (0, 1)), (-1.0, (3, 0)), (-1.0, (1, 2))),
        ((omega, (1, 0)), (alpha, (0, 1)), (-1.0, (2, 1)), (-1.0, (0, 3))),
    )
    return VectorFieldSpec(2, "hopf", mons, ((0.0, 0.0),), domain_radius,
                           {"alpha": alpha, "omega": omega})


def polynomial_field(monomials: Sequence[Sequence[tuple[float, Sequence[int]]]],
                     singularities: Sequence[Sequence[float]] = (),
                     domain_radius: float = 10.0) -> VectorFieldSpec:
    d = len(monomials)
    mons = tuple(tuple((float(c), tuple(int(k) for k in e)) for c, e in terms) for terms in monomials)
    sings = tuple(tuple(float(v) for v in s) for s in singularities)
    return VectorFieldSpec(d, "polynomial", mons, sings, domain_radius)


def _check_domain(spec: VectorFieldSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.dim,):
        raise ValueError(f"expected a point of shape ({spec.dim},), got {x.shape}")
    if np.linalg.norm(x) > spec.domain_radius:
        raise DomainError(
            f"|x| = {np.linalg.norm(x):.6g} exceeds domain_radius {spec.domain_radius}"
        )
    return x


def eval_field(spec: VectorFieldSpec, x) -> np.ndarray:
    return spec._f(_check_domain(spec, x))


def eval_jacobian(spec: VectorFieldSpec, x) -> np.ndarray:
    return spec._df(_check_domain(spec, x))


def field_scale(spec: VectorFieldSpec, x: np.ndarray) -> float:
    return max(1.0, float(np.linalg.norm(spec._df(x), 2)) * (1.0 + float(np.linalg.norm(x))))


def _newton_polish(spec: VectorFieldSpec, x: np.ndarray, iters: int = 50) -> np.ndarray:
    for _ in range(iters):
        fx = spec._f(x)
        if not np.all(np.isfinite(fx)):
            break
        dx = np.linalg.lstsq(spec._df(x), -fx, rcond=None)[0]
        x = x + dx
        if np.linalg.norm(dx) <= 1e-15 * max(1.0, np.linalg.norm(x)):
            break
    return x


def find_singularities(spec: VectorFieldSpec) -> list[SingularityRecord]:
    """Newton-polish the declared singularity seeds and check nondegeneracy.

    Raises DegenerateSingularityError when det DX(sigma) vanishes relative to
    the scale of DX(sigma), and ValueError when a seed does not converge to
    a zero of the field.
    """
    records = []
    for seed in spec.singularities:
        x = _newton_polish(spec, _check_domain(spec, seed).copy())
        J = spec._df(x)
        norm_j = np.linalg.norm(J, 2)
        det = abs(np.linalg.det(J))
        if norm_j == 0.0 or det <= 1e-10 * norm_j ** spec.dim:
            raise DegenerateSingularityError(
                f"singularity at {np.round(x, 12).tolist()} is degenerate: "
                f"|det DX| = {det:.3g}, |DX| = {norm_j:.3g}"
            )
        if np.linalg.norm(spec._f(x)) > 1e-12 * field_scale(spec, x):
            raise ValueError(f"seed {seed!r} did not converge to a zero of the field")
        w, V = np.linalg.eig(J)
        for a in (x, J, w, V):
            a.setflags(write=False)
        records.append(SingularityRecord(x, J, w, V))
    return records


# --- config files ---------------------------------------------------------

_BUILDERS = {
    "linear": lambda p, r: linear_field(p["A"], r),
    "lorenz": lambda p, r: lorenz(p.get("sigma", 10.0), p.get("rho", 28.0),
                                  p.get("beta", 8.0 / 3.0), r),
    "vanderpol": lambda p, r: van_der_pol(p.get("mu", 1.0), r),
    "hopf": lambda p, r: hopf(p.get("alpha", 1.0), p.get("omega", 1.0), r),
}

_DEFAULT_RADIUS = {"linear": 10.0, "lorenz": 100.0, "vanderpol": 10.0, "hopf": 10.0}


def from_config(cfg: Mapping[str, Any]) -> VectorFieldSpec:
    """Build a field from the JSON schema documented in FORMATS.md."""
    try:
        kind = cfg["kind"]
        dim = int(cfg["dim"])
    except KeyError as exc:
        raise ValueError(f"field config is missing key {exc.args[0]!r} (see FORMATS.md)") from None
    if kind in _BUILDERS:
        radius = float(cfg.get("domain_radius", _DEFAULT_RADIUS[kind]))
        spec = _BUILDERS[kind](dict(cfg.get("params", {})), radius)
        if "singularities" in cfg:
            sings = tuple(tuple(float(v) for v in s) for s in cfg["singularities"])
            spec = VectorFieldSpec(spec.dim, spec.kind, spec.monomials, sings,
                                   spec.domain_radius, spec.params)
    elif kind == "polynomial":
        if "monomials" not in cfg:
            raise ValueError("polynomial field config needs 'monomials' (see FORMATS.md)")
        spec = polynomial_field(cfg["monomials"], cfg.get("singularities", ()),
                                float(cfg.get("domain_radius", 10.0)))
    else:
        raise ValueError(f"unknown field kind {kind!r}; expected one of "
                         f"{BUILTIN_KINDS + ('polynomial',)}")
    if spec.dim != dim:
        raise ValueError(f"config dim {dim} does not match kind {kind!r} (dim {spec.dim})")
    return spec


def to_config(spec: VectorFieldSpec) -> dict[str, Any]:
    cfg: dict[str, Any] = {"dim": spec.dim, "kind": spec.kind}
    if spec.kind == "polynomial":
        cfg["monomials"] = [[[c, list(e)] for c, e in terms] for terms in spec.monomials]
    else:
        cfg["params"] = dict(spec.params)
    cfg["singularities"] = [list(s) for s in spec.singularities]
    cfg["domain_radius"] = spec.domain_radius
    return cfg


def load_field(path) -> VectorFieldSpec:
    with open(path) as fh:
        return from_config(json.load(fh))


def save_field(spec: VectorFieldSpec, path) -> None:
    Path(path).write_text(json.dumps(to_config(spec), indent=2) + "\n")
