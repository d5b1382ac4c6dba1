"""Named geometries, bundles, sections and vertical forms.

Everything an experiment config can refer to by name lives here. Builders
take keyword parameters so a config can pass numeric arguments through.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bundles import ProductPrincipalBundle, TangentBundleGeometry, product_principal_bundle, \
    tangent_bundle
from .geometry import ChartedManifold, euclidean, flat_torus, hyperbolic_half_plane, sphere_chart
from .maps import SmoothMapJet, section
from .submersion import AdaptedSubmersion, VerticalForm


class UnknownNameError(KeyError):
    pass


def _lookup(table: dict, kind: str, name: str):
    try:
        return table[name]
    except KeyError:
        known = ", ".join(sorted(table))
        raise UnknownNameError(f"unknown {kind} {name!r} (known: {known})") from None


GEOMETRIES: dict[str, Callable[..., ChartedManifold]] = {
    "euclidean-plane": lambda: euclidean(2),
    "flat-torus": flat_torus,
    "sphere": sphere_chart,
    "half-plane": hyperbolic_half_plane,
}


def geometry(name: str, **params) -> ChartedManifold:
    return _lookup(GEOMETRIES, "geometry", name)(**params)


BUNDLES: dict[str, Callable] = {
    "flat-torus-tm-complete": lambda: tangent_bundle(flat_torus(), "complete"),
    "flat-torus-tm-sasaki": lambda: tangent_bundle(flat_torus(), "sasaki"),
    "sphere-tm-complete": lambda: tangent_bundle(sphere_chart(), "complete"),
    "sphere-tm-sasaki": lambda: tangent_bundle(sphere_chart(), "sasaki"),
    "torus-x-circle": lambda: product_principal_bundle(flat_torus(), flat_torus(1)),
}


def bundle(name: str) -> TangentBundleGeometry | ProductPrincipalBundle:
    return _lookup(BUNDLES, "bundle", name)()


# Sections of TM over a two-dimensional base. Each builder returns
# (value, jacobian, hessian) of the fiber map V.

def _zeros(y, *tail):
    return np.zeros(y.shape[:-1] + tail)


def _constant(a: float = 1.0, b: float = 0.5):
    c = np.array([a, b], dtype=float)
    return (lambda y: np.broadcast_to(c, y.shape).copy(),
            lambda y: _zeros(y, 2, 2),
            lambda y: _zeros(y, 2, 2, 2))


def _sin_field(amplitude: float = 1.0):
    def value(y):
        out = _zeros(y, 2)
        out[..., 0] = amplitude * np.sin(y[..., 0])
        return out

    def jac(y):
        out = _zeros(y, 2, 2)
        out[..., 0, 0] = amplitude * np.cos(y[..., 0])
        return out

    def hess(y):
        out = _zeros(y, 2, 2, 2)
        out[..., 0, 0, 0] = -amplitude * np.sin(y[..., 0])
        return out

    return value, jac, hess


def _mixed_field(amplitude: float = 1.0):
    """V = A(cos y², sin y¹)."""
    def value(y):
        return amplitude * np.stack([np.cos(y[..., 1]), np.sin(y[..., 0])], axis=-1)

    def jac(y):
        out = _zeros(y, 2, 2)
        out[..., 0, 1] = -amplitude * np.sin(y[..., 1])
        out[..., 1, 0] = amplitude * np.cos(y[..., 0])
        return out

    def hess(y):
        out = _zeros(y, 2, 2, 2)
        out[..., 0, 1, 1] = -amplitude * np.cos(y[..., 1])
        out[..., 1, 0, 0] = -amplitude * np.sin(y[..., 0])
        return out

    return value, jac, hess


def _cos_first(amplitude: float = 1.0):
    """V = (0, A cos y¹)."""
    def value(y):
        out = _zeros(y, 2)
        out[..., 1] = amplitude * np.cos(y[..., 0])
        return out

    def jac(y):
        out = _zeros(y, 2, 2)
        out[..., 1, 0] = -amplitude * np.sin(y[..., 0])
        return out

    def hess(y):
        out = _zeros(y, 2, 2, 2)
        out[..., 1, 0, 0] = -amplitude * np.cos(y[..., 0])
        return out

    return value, jac, hess


SECTIONS: dict[str, Callable] = {
    "zero": lambda: _constant(0.0, 0.0),
    "constant-field": _constant,
    "sin-field": _sin_field,
    "mixed-field": _mixed_field,
    "cos-field": _cos_first,
    # coordinate fields; on the sphere chart these are ∂_θ and the Killing field ∂_φ
    "coordinate-e1": lambda: _constant(1.0, 0.0),
    "coordinate-e2": lambda: _constant(0.0, 1.0),
}


def tm_section(name: str, **params) -> SmoothMapJet:
    value, jac, hess = _lookup(SECTIONS, "section", name)(**params)
    return section(value, jac, hess, name=name)


@dataclass(frozen=True)
class DichotomyCase:
    bundle: str
    section: str
    params: tuple = ()

    def build(self):
        return bundle(self.bundle), tm_section(self.section, **dict(self.params))

    @property
    def label(self) -> str:
        return f"{self.bundle}/{self.section}"


# Sections checked for harmonic <=> parallel. Both sphere coordinate fields
# are included on purpose: they are not parallel, yet their fiber coordinates
# are constant.
DICHOTOMY_CORPUS = (
    DichotomyCase("flat-torus-tm-complete", "zero"),
    DichotomyCase("flat-torus-tm-complete", "constant-field"),
    DichotomyCase("flat-torus-tm-sasaki", "sin-field"),
    DichotomyCase("flat-torus-tm-sasaki", "mixed-field"),
    DichotomyCase("sphere-tm-sasaki", "zero"),
    DichotomyCase("sphere-tm-complete", "cos-field"),
    DichotomyCase("sphere-tm-sasaki", "mixed-field"),
    DichotomyCase("sphere-tm-sasaki", "coordinate-e1"),
    DichotomyCase("sphere-tm-sasaki", "coordinate-e2"),
)


def _linear_form(index: int, fiber_dim: int, total_dim: int, scale: float = 1.0):
    """θ = s·v^α dv^α for a single fiber index α."""
    col = total_dim - fiber_dim + index

    def coeffs(p):
        out = np.zeros(np.shape(p)[:-1] + (fiber_dim,))
        out[..., index] = scale * p[..., col]
        return out

    def deriv(p):
        out = np.zeros(np.shape(p)[:-1] + (total_dim, fiber_dim))
        out[..., col, index] = scale
        return out

    return VerticalForm(coeffs, deriv, name=f"v{index + 1}dv{index + 1}")


def _basis_form(index: int, fiber_dim: int, total_dim: int):
    return VerticalForm.basis(index, fiber_dim, total_dim)


def _trig_form(index: int, fiber_dim: int, total_dim: int, scale: float = 1.0):
    """θ = s·sin(x¹) cos(v^α) dv^α; depends on base and fiber coordinates."""
    col = total_dim - fiber_dim + index

    def coeffs(p):
        out = np.zeros(np.shape(p)[:-1] + (fiber_dim,))
        out[..., index] = scale * np.sin(p[..., 0]) * np.cos(p[..., col])
        return out

    def deriv(p):
        out = np.zeros(np.shape(p)[:-1] + (total_dim, fiber_dim))
        out[..., 0, index] = scale * np.cos(p[..., 0]) * np.cos(p[..., col])
        out[..., col, index] += -scale * np.sin(p[..., 0]) * np.sin(p[..., col])
        return out

    return VerticalForm(coeffs, deriv, name=f"trig{index + 1}")


FORMS: dict[str, Callable] = {
    "basis": _basis_form,
    "linear": _linear_form,
    "trig": _trig_form,
}


def vertical_form(name: str, sub: AdaptedSubmersion, index: int = 0, **params) -> VerticalForm:
    builder = _lookup(FORMS, "form", name)
    if not 0 <= index < sub.fiber_dim:
        raise UnknownNameError(f"form index {index} outside fiber dimension {sub.fiber_dim}")
    return builder(index, sub.fiber_dim, sub.total_dim, **params)


def names() -> dict[str, list[str]]:
    return {
        "geometries": sorted(GEOMETRIES),
        "bundles": sorted(BUNDLES),
        "sections": sorted(SECTIONS),
        "forms": sorted(FORMS),
    }
