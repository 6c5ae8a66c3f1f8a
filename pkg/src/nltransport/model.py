"""Model core: equilibrium profile, the operators A and B, and the rho functional.

For the transport coefficient rho the model couples a source h, a functional
spec and the equilibrium parameter p > 0:

    rho(zeta) = [I(zeta) + <dI(zeta), h + zeta'>]
                / [p I(zeta) + <dI(zeta), zeta - y zeta'>].

The denominator must stay positive (the admissibility condition); a
configurable floor converts near-zero denominators into explicit errors.
The stationary profile solving the equilibrium ODE with rho = 1/p is

    xi_p(y) = (p + y) int_y^inf p h(y') / (p + y')^2 dy',

whose derivatives close analytically:

    xi_p'(y)  = J(y) - p h(y)/(p+y),      J(y) = int_y^inf p h/(p+y')^2 dy'
    xi_p''(y) = -p h'(y)/(p+y)
    A xi_p(y) = p [J(y) + y h(y)/(p+y)].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ModelViolationError
from .functionals import FunctionalSpec, Profile
from .quadrature import tail_integral_refined
from .sources import SourceFn

ADMISSIBILITY_FLOOR = 1e-8


@dataclass(frozen=True)
class RhoResult:
    rho: float
    numerator: float
    denominator: float
    I_value: float = float("nan")


def apply_AB(prof: Profile, p: float, y) -> tuple[np.ndarray, np.ndarray]:
    """A zeta = zeta - y zeta',  B zeta = zeta/p - (1 + y/p) zeta'."""
    y = np.asarray(y, dtype=float)
    z = prof(y)
    dz = prof.d(y)
    return z - y * dz, z / p - (1.0 + y / p) * dz


class Model:
    """Source + functional + p, with cached equilibrium data on the quad rule."""

    def __init__(self, source: SourceFn, functional: FunctionalSpec, p: float,
                 admissibility_floor: float = ADMISSIBILITY_FLOOR):
        if p <= 0:
            raise DomainError("p must be positive")
        self.source = source
        self.functional = functional
        self.p = float(p)
        self.admissibility_floor = float(admissibility_floor)
        functional.check_dominates(source)
        y = functional.nodes
        self.h_nodes = np.asarray(source.eval(y, 0), dtype=float)
        self.xi_p_nodes = self.equilibrium_values(y)
        self.dxi_p_nodes = self.equilibrium_values(y, order=1)
        self.Axi_p_nodes = self.xi_p_nodes - y * self.dxi_p_nodes

    # -- equilibrium ---------------------------------------------------------

    def _tail(self, y):
        """J(y) = int_y^inf p h(u)/(p+u)^2 du, vectorized."""
        p = self.p
        return tail_integral_refined(
            lambda u: p * self.source.eval(u, 0) / (p + u) ** 2, y,
            scale=np.asarray(y, dtype=float) + p)

    def equilibrium_values(self, y, order: int = 0):
        y = np.asarray(y, dtype=float)
        if np.any(y <= 0):
            raise DomainError("equilibrium evaluated at y <= 0")
        p = self.p
        if order == 0:
            return (p + y) * self._tail(y)
        if order == 1:
            return self._tail(y) - p * self.source.eval(y, 0) / (p + y)
        if order == 2:
            return -p * self.source.eval(y, 1) / (p + y)
        raise DomainError("equilibrium derivative order must be 0, 1 or 2")

    def equilibrium_pair(self, y):
        """(xi_p, xi_p') with the tail integral computed once."""
        y = np.asarray(y, dtype=float)
        J = self._tail(y)
        hy = self.source.eval(y, 0)
        return (self.p + y) * J, J - self.p * hy / (self.p + y)

    def _tail_interpolated(self, y):
        """Spline-backed J(y) for hot loops; relative error ~ 1e-9."""
        if not hasattr(self, "_tail_spline"):
            from scipy.interpolate import CubicSpline
            grid = np.geomspace(1e-9, 1e13, 6000)
            self._tail_spline = CubicSpline(np.log(grid), self._tail(grid))
        y = np.asarray(y, dtype=float)
        out = np.empty_like(y)
        hi = y >= 1e13
        # beyond the table h is flat to machine precision: J ~ p h_inf/(p+y)
        out[hi] = self.p * self.source.h_inf / (self.p + y[hi])
        out[~hi] = self._tail_spline(np.log(np.clip(y[~hi], 1e-9, None)))
        return out

    def equilibrium_profile_interpolated(self) -> Profile:
        """Equilibrium profile with spline-backed tail integrals (fast path)."""
        p = self.p

        def pair(y):
            y = np.asarray(y, dtype=float)
            J = self._tail_interpolated(y)
            hy = self.source.eval(y, 0)
            return (p + y) * J, J - p * hy / (p + y)

        return Profile(
            value=lambda y: pair(y)[0],
            deriv=lambda y: pair(y)[1],
            second=lambda y: -p * self.source.eval(y, 1) / (p + np.asarray(y, float)),
            descriptor=f"equilibrium(p={p:g},interp)",
            pair=pair,
        )

    def equilibrium_profile(self) -> Profile:
        return Profile(
            value=lambda y: self.equilibrium_values(y, 0),
            deriv=lambda y: self.equilibrium_values(y, 1),
            second=lambda y: self.equilibrium_values(y, 2),
            descriptor=f"equilibrium(p={self.p:g})",
            pair=self.equilibrium_pair,
        )

    def equilibrium_A(self, y):
        """A xi_p(y) = p [J(y) + y h(y)/(p+y)], positive and bounded."""
        y = np.asarray(y, dtype=float)
        p = self.p
        return p * (self._tail(y) + y * self.source.eval(y, 0) / (p + y))

    def equilibrium_A_deriv(self, y):
        """(A xi_p)'(y) = -y xi_p''(y) = p y h'(y)/(p+y)."""
        y = np.asarray(y, dtype=float)
        return self.p * y * self.source.eval(y, 1) / (self.p + y)

    # -- rho -----------------------------------------------------------------

    def rho_from_samples(self, xi, dxi) -> RhoResult:
        """rho from profile samples at the functional's quadrature nodes."""
        spec = self.functional
        I_val = spec.value_from_samples(xi)
        grad = spec.gradient_from_samples(xi)
        num = I_val + spec.pair_from_samples(grad, self.h_nodes + dxi)
        den = self.p * I_val + spec.pair_from_samples(grad, xi - spec.nodes * dxi)
        if den <= self.admissibility_floor * self.p * I_val:
            raise ModelViolationError(
                "admissibility failed: denominator p*I + <dI, zeta - y zeta'> "
                f"= {den:.6e} is at or below the positivity floor")
        return RhoResult(rho=num / den, numerator=num, denominator=den,
                         I_value=I_val)

    def rho(self, prof: Profile) -> RhoResult:
        y = self.functional.nodes
        return self.rho_from_samples(np.asarray(prof(y), dtype=float),
                                     np.asarray(prof.d(y), dtype=float))

    def admissibility_denominator(self, prof: Profile) -> float:
        y = self.functional.nodes
        xi = np.asarray(prof(y), dtype=float)
        dxi = np.asarray(prof.d(y), dtype=float)
        spec = self.functional
        grad = spec.gradient_from_samples(xi)
        return self.p * spec.value_from_samples(xi) + spec.pair_from_samples(
            grad, xi - y * dxi)

    def check_admissible(self, prof: Profile) -> float:
        den = self.admissibility_denominator(prof)
        I_val = self.functional.value(prof)
        if den <= self.admissibility_floor * self.p * I_val:
            raise ModelViolationError(
                f"profile {prof.descriptor!r} violates the admissibility "
                f"condition (denominator {den:.6e})")
        return den

    # -- diagnostics -----------------------------------------------------------

    def equilibrium_identity_gap(self) -> float:
        """|rho(xi_p) - 1/p|, which vanishes up to quadrature error."""
        res = self.rho_from_samples(self.xi_p_nodes, self.dxi_p_nodes)
        return abs(res.rho - 1.0 / self.p)

    def equilibrium_residual(self, y) -> np.ndarray:
        """Residual of the stationarity ODE  -h - xi' + (1/p)(xi - y xi') = 0."""
        y = np.asarray(y, dtype=float)
        xi = self.equilibrium_values(y, 0)
        dxi = self.equilibrium_values(y, 1)
        return (-self.source.eval(y, 0) - dxi + (xi - y * dxi) / self.p)

    def gradient_floor_report(self, profiles) -> dict:
        """Sampled infimum of I(zeta) + <dI(zeta), h> over a profile family.

        The model requires this combination to stay positive; no closed-form
        constant is available, so the report flags any nonpositive sample.
        """
        vals = []
        for prof in profiles:
            spec = self.functional
            zeta = np.asarray(prof(spec.nodes), dtype=float)
            I_val = spec.value_from_samples(zeta)
            pairing = spec.pair_from_samples(spec.gradient_from_samples(zeta),
                                             self.h_nodes)
            vals.append(I_val + pairing)
        vals = np.asarray(vals)
        return {
            "sampled_infimum": float(vals.min()),
            "n_profiles": len(vals),
            "nonpositive": bool(np.any(vals <= 0.0)),
        }


def equilibrium_xi_p(source: SourceFn, p: float, functional: FunctionalSpec, y):
    """(xi_p(y), xi_p'(y), A xi_p(y)) as a convenience triple."""
    model = Model(source, functional, p)
    return (model.equilibrium_values(y, 0), model.equilibrium_values(y, 1),
            model.equilibrium_A(y))


def rho(functional: FunctionalSpec, source: SourceFn, p: float, prof: Profile) -> RhoResult:
    return Model(source, functional, p).rho(prof)
