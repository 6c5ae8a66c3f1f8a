import numpy as np
import pytest
import scipy.integrate as si

from nltransport.errors import DomainError
from nltransport.sources import (SourceFn, compact_source, constant_source,
                                 inv_square_p_source, log_kernel, log_source)


def test_constant_source_values():
    src = constant_source(1.0)
    assert src.eval(5.0, 0) == 1.0
    assert src.eval(5.0, 1) == 0.0
    assert src.eval(5.0, 2) == 0.0


def test_log_source_closed_forms():
    # h(y) = 1 + log(1 + 1/y): at y=1 this is 1 + log 2
    src = log_source(1.0)
    assert abs(src.eval(1.0, 0) - (1.0 + np.log(2.0))) < 1e-14
    assert abs(src.eval(1.0, 1) - (-0.5)) < 1e-14
    # differentiate h'(y) = -1/(y(1+y)) by hand: h''(1) = 3/4
    assert abs(src.eval(1.0, 2) - 0.75) < 1e-14


def test_log_source_tail_against_quadrature():
    src = log_source(1.0)
    for y in (0.1, 1.0, 7.0):
        ref, _ = si.quad(lambda u: 1.0 / (u * (1.0 + u)), y, np.inf, limit=200)
        assert abs(src.eval(y, 0) - (1.0 + ref)) < 1e-10


def test_log_source_second_derivative_by_differencing():
    src = log_source(1.0)
    y = 1.0
    h = 1e-5
    fd = (src.eval(y + h, 1) - src.eval(y - h, 1)) / (2 * h)
    assert abs(fd - src.eval(y, 2)) < 1e-8


def test_domain_errors():
    src = log_source(1.0)
    with pytest.raises(DomainError):
        src.eval(-1.0, 0)
    with pytest.raises(DomainError):
        src.eval(1.0, 3)


def test_limit_at_infinity():
    for src in (log_source(1.0), compact_source(1.0), inv_square_p_source(1.0, 2.0)):
        assert abs(src.eval(1e6, 0) - 1.0) < 1e-4


def test_validate_log_source_m1_conditions():
    # closed forms: y h'' + h' = 1/(1+y)^2 and y^2 h'' = (2y+1)/(1+y)^2
    src = log_source(1.0)
    rep = src.validate(tol=1e-12)
    grid = np.geomspace(0.01, 100.0, 50)
    m1 = grid * src.eval(grid, 2) + src.eval(grid, 1)
    assert np.max(np.abs(m1 - 1.0 / (1.0 + grid) ** 2)) < 1e-12
    y2h2 = grid ** 2 * src.eval(grid, 2)
    assert np.max(np.abs(y2h2 - (2 * grid + 1) / (1 + grid) ** 2)) < 1e-12
    assert rep["m1_min_yh2_plus_h1"] >= -1e-12
    assert rep["yh_to_zero"]


def test_validate_rejects_increasing_table():
    ys = np.linspace(1.0, 10.0, 20)
    src = SourceFn(kind="tabulated", h_inf=2.0, table=(ys, 1.0 + ys / 10.0))
    with pytest.raises(DomainError):
        src.validate(grid=np.linspace(1.0, 10.0, 50))


def test_tabulated_source_roundtrip():
    base = log_source(1.0)
    ys = np.geomspace(1e-3, 1e7, 4000)
    tab = SourceFn(kind="tabulated", h_inf=1.0, table=(ys, base.eval(ys, 0)))
    probe = np.geomspace(0.01, 100.0, 30)
    assert np.max(np.abs(tab.eval(probe, 0) - base.eval(probe, 0))) < 1e-8
    with pytest.raises(DomainError):
        tab.eval(1e8, 0)


def test_kernel_p_closed_form():
    # h = h_inf + 1/(1+y) + p [log(1+1/y) - 1/(1+y)] for k = (1+y)^-2
    src = inv_square_p_source(1.0, 2.0)
    y = 1.5
    expect = 1.0 + 1.0 / 2.5 + 2.0 * (np.log(1 + 1 / 1.5) - 1.0 / 2.5)
    assert abs(src.eval(y, 0) - expect) < 1e-12
    # h' = -(1 + p/y) k(y)
    assert abs(src.eval(y, 1) - (-(1 + 2.0 / 1.5) / 2.5 ** 2)) < 1e-14


def test_generic_kernel_falls_back_to_quadrature():
    k = log_kernel()
    generic = SourceFn(kind="kernel_inf", h_inf=1.0,
                       kernel=type(k)(name="log-generic", k=k.k, kprime=k.kprime,
                                      convex=True))
    named = log_source(1.0)
    probe = np.geomspace(0.05, 50.0, 20)
    assert np.max(np.abs(generic.eval(probe, 0) - named.eval(probe, 0))) < 1e-9


def test_compact_kernel_m1():
    # y h'' + h' = 2 (1-y)_+ and y^2 h'' = (1-y^2)_+ for the compact kernel
    src = compact_source(1.0, 1.0)
    grid = np.linspace(0.05, 0.95, 19)
    m1 = grid * src.eval(grid, 2) + src.eval(grid, 1)
    assert np.max(np.abs(m1 - 2.0 * (1.0 - grid))) < 1e-12
    y2h2 = grid ** 2 * src.eval(grid, 2)
    assert np.max(np.abs(y2h2 - (1.0 - grid ** 2))) < 1e-12
    assert src.eval(2.0, 1) == 0.0
