"""Numerical laboratory for 1-D variational approximation checks.

Exact total variation of an analytic function is compared against two
quadrature approximants: a right-endpoint Riemann sum of |f'| (derivative
mode) and the sum of absolute differences over a uniform partition
(difference mode).  The study helpers quantify truncation error, its decay
rate, the curvature bound, refinement monotonicity, and the effect of
shifting one partition breakpoint.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "AnalyticFn",
    "ErrorReport",
    "ShiftResult",
    "FUNCTIONS",
    "get_function",
    "function_names",
    "check_derivatives",
    "exact_tv_1d",
    "quadrature_tv",
    "truncation_error_study",
    "nonuniform_shift_experiment",
    "write_error_report",
]

QUADRATURE_MODES = ("derivative", "difference")


@dataclass(frozen=True)
class AnalyticFn:
    """A scalar test function on [lo, hi] with analytic derivatives."""

    name: str
    f: callable
    df: callable
    d2f: callable = None
    lo: float = 0.0
    hi: float = 1.0
    closed_tv: float = None
    note: str = ""

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError(f"{self.name}: empty interval [{self.lo}, {self.hi}]")

    @property
    def interval(self):
        return (self.lo, self.hi)


def _logistic(k, c):
    def f(x):
        return 1.0 / (1.0 + np.exp(-k * (np.asarray(x, dtype=np.float64) - c)))

    def df(x):
        s = f(x)
        return k * s * (1.0 - s)

    def d2f(x):
        s = f(x)
        return k * k * s * (1.0 - s) * (1.0 - 2.0 * s)

    return f, df, d2f


def _make_registry():
    fns = [
        AnalyticFn(
            "linear",
            f=lambda x: np.asarray(x, dtype=np.float64),
            df=lambda x: np.ones_like(np.asarray(x, dtype=np.float64)),
            d2f=lambda x: np.zeros_like(np.asarray(x, dtype=np.float64)),
            closed_tv=1.0,
            note="identity; both quadrature modes are exact",
        ),
        AnalyticFn(
            "quad",
            f=lambda x: 0.5 * np.square(np.asarray(x, dtype=np.float64)),
            df=lambda x: np.asarray(x, dtype=np.float64),
            d2f=lambda x: np.ones_like(np.asarray(x, dtype=np.float64)),
            closed_tv=0.5,
            note="constant curvature; derivative-mode error is exactly 1/(2n)",
        ),
        AnalyticFn(
            "sin2pi",
            f=lambda x: np.sin(2.0 * np.pi * np.asarray(x, dtype=np.float64)),
            df=lambda x: 2.0 * np.pi * np.cos(2.0 * np.pi * np.asarray(x, dtype=np.float64)),
            d2f=lambda x: -4.0 * np.pi**2 * np.sin(2.0 * np.pi * np.asarray(x, dtype=np.float64)),
            closed_tv=4.0,
            note="oscillatory; |f'| changes sign twice",
        ),
        AnalyticFn(
            "halfpow",
            f=lambda x: (2.0 / 3.0) * np.power(np.asarray(x, dtype=np.float64), 1.5),
            df=lambda x: np.sqrt(np.asarray(x, dtype=np.float64)),
            d2f=lambda x: 0.5 / np.sqrt(np.asarray(x, dtype=np.float64)),
            lo=0.1,
            hi=1.1,
            closed_tv=(2.0 / 3.0) * (1.1**1.5 - 0.1**1.5),
            note="strictly decreasing curvature; breakpoint-shift testbed",
        ),
    ]
    lf, ldf, ld2f = _logistic(6.0, 1.2)
    fns.append(
        AnalyticFn(
            "logistic",
            f=lf,
            df=ldf,
            d2f=ld2f,
            closed_tv=float(lf(1.0) - lf(0.0)),
            note="monotone ramp with increasing slope on [0, 1]",
        )
    )
    return {fn.name: fn for fn in fns}


FUNCTIONS = _make_registry()


def function_names():
    return tuple(FUNCTIONS)


def get_function(name):
    try:
        return FUNCTIONS[name]
    except KeyError:
        raise KeyError(
            f"unknown test function {name!r}; choose from {', '.join(FUNCTIONS)}"
        ) from None


def has_monotone_nonconstant_abs_df(fn, n_scan=2048):
    """True when |f'| is monotone and nonconstant on the interval.

    The right-endpoint sum then has a one-sided O(1/n) truncation error, so
    the log-log error slope is meaningful; constant |f'| makes the sum exact
    and sign-changing f' lets endpoint errors cancel to higher order.
    """
    xs = np.linspace(fn.lo, fn.hi, n_scan + 1)
    absdf = np.abs(np.asarray(fn.df(xs), dtype=np.float64))
    scale = max(1.0, float(np.max(absdf)))
    if float(np.max(absdf) - np.min(absdf)) <= 1e-8 * scale:
        return False
    steps = np.diff(absdf)
    tol = 1e-12 * scale
    return bool(np.all(steps >= -tol) or np.all(steps <= tol))


def check_derivatives(fn, n=1000, h=1e-6):
    """Max relative FD mismatch of (df vs f) and (d2f vs df) at n points."""
    xs = np.linspace(fn.lo + 2 * h, fn.hi - 2 * h, n)
    worst = 0.0
    pairs = [(fn.f, fn.df)]
    if fn.d2f is not None:
        pairs.append((fn.df, fn.d2f))
    for base, deriv in pairs:
        fd = (np.asarray(base(xs + h)) - np.asarray(base(xs - h))) / (2 * h)
        exact = np.asarray(deriv(xs))
        scale = np.maximum(np.abs(exact), 1.0)
        worst = max(worst, float(np.max(np.abs(fd - exact) / scale)))
    return worst


# -- exact TV oracle ---------------------------------------------------------

def _bisect_root(g, lo, hi, width=1e-12):
    glo = g(lo)
    for _ in range(200):
        if hi - lo <= width:
            break
        mid = 0.5 * (lo + hi)
        gmid = g(mid)
        if gmid == 0.0:
            return mid
        if (glo < 0) != (gmid < 0):
            hi = mid
        else:
            lo, glo = mid, gmid
    return 0.5 * (lo + hi)


def _derivative_sign_changes(fn, n_scan=4096):
    xs = np.linspace(fn.lo, fn.hi, n_scan + 1)
    vals = np.asarray(fn.df(xs), dtype=np.float64)
    if not np.all(np.isfinite(vals)):
        raise ValueError(f"{fn.name}: non-finite derivative on the interval")
    roots = []
    for i in range(n_scan):
        if vals[i] == 0.0 and vals[i + 1] == 0.0:
            continue
        if vals[i] * vals[i + 1] < 0.0:
            roots.append(_bisect_root(fn.df, xs[i], xs[i + 1]))
    return roots


def _adaptive_simpson(g, a, b, tol, fa, fm, fb, whole, depth):
    m = 0.5 * (a + b)
    lm, rm = 0.5 * (a + m), 0.5 * (m + b)
    flm, frm = g(lm), g(rm)
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    if depth <= 0 or abs(left + right - whole) <= 15.0 * tol:
        return left + right + (left + right - whole) / 15.0
    return _adaptive_simpson(
        g, a, m, 0.5 * tol, fa, flm, fm, left, depth - 1
    ) + _adaptive_simpson(g, m, b, 0.5 * tol, fm, frm, fb, right, depth - 1)


def _simpson_integral(g, a, b, tol):
    m = 0.5 * (a + b)
    fa, fm, fb = g(a), g(m), g(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    return _adaptive_simpson(g, a, b, tol, fa, fm, fb, whole, depth=48)


def exact_tv_1d(fn, method="auto", tol=1e-11):
    """Total variation of fn over its interval: the integral of |f'|.

    The closed form is used when registered (method "auto" or "closed");
    "quadrature" forces adaptive Simpson on |f'|, with the interval split at
    derivative sign changes so each piece is smooth.
    """
    if method not in ("auto", "closed", "quadrature"):
        raise ValueError(f"unknown method {method!r}")
    if method in ("auto", "closed") and fn.closed_tv is not None:
        return float(fn.closed_tv)
    if method == "closed":
        raise ValueError(f"{fn.name} has no closed-form total variation")

    def g(x):
        return abs(float(fn.df(x)))

    breaks = [fn.lo] + _derivative_sign_changes(fn) + [fn.hi]
    piece_tol = tol / max(1, len(breaks) - 1)
    return float(
        sum(
            _simpson_integral(g, lo, hi, piece_tol)
            for lo, hi in zip(breaks[:-1], breaks[1:])
        )
    )


# -- quadrature approximants --------------------------------------------------

def quadrature_tv(fn, n, mode):
    """Approximate TV on a uniform n-interval partition of [lo, hi]."""
    if mode not in QUADRATURE_MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {QUADRATURE_MODES}")
    if n < 1:
        raise ValueError("n must be at least 1")
    lo, hi = fn.lo, fn.hi
    if mode == "derivative":
        xs = lo + (hi - lo) * (np.arange(1, n + 1) / n)
        return float((hi - lo) / n * np.sum(np.abs(fn.df(xs))))
    xs = lo + (hi - lo) * (np.arange(0, n + 1) / n)
    return float(np.sum(np.abs(np.diff(fn.f(xs)))))


def _partition_tv(fn, breaks):
    # Right-endpoint quadrature over an arbitrary partition.
    breaks = np.asarray(breaks, dtype=np.float64)
    widths = np.diff(breaks)
    return float(np.sum(widths * np.abs(fn.df(breaks[1:]))))


# -- truncation error study ---------------------------------------------------

@dataclass
class ErrorReport:
    """Truncation errors of both quadrature modes over a list of n."""

    fn_name: str
    exact: float
    ns: tuple
    values: dict
    errors: dict
    slopes: dict = field(default_factory=dict)
    bound_ok: bool = None
    doubling_ok: bool = None

    def rows(self):
        for mode in QUADRATURE_MODES:
            for n, value, error in zip(self.ns, self.values[mode], self.errors[mode]):
                yield (n, mode, value, self.exact, error)


def _fit_slope(ns, errors):
    # Slope of log error vs log n; 0 by convention when the method is exact.
    keep = errors > 1e-15
    if np.count_nonzero(keep) < 2:
        return 0.0
    coeffs = np.polyfit(np.log(np.asarray(ns, dtype=float)[keep]), np.log(errors[keep]), 1)
    return float(coeffs[0])


def _max_abs_d2f(fn, n_scan=4096):
    xs = np.linspace(fn.lo, fn.hi, n_scan + 1)
    return float(np.max(np.abs(fn.d2f(xs))))


def truncation_error_study(fn, ns):
    """Tabulate |approx - exact| for both modes and check the error laws.

    bound_ok reports whether every derivative-mode error stays within the
    curvature bound (hi-lo)^2/(2n) * max|f''| (None when d2f is missing);
    doubling_ok reports whether difference-mode values are nondecreasing for
    each consecutive doubling and never exceed the exact value.
    """
    ns = tuple(int(n) for n in ns)
    if any(b <= a for a, b in zip(ns[:-1], ns[1:])) or ns[0] < 1:
        raise ValueError("n list must be increasing and positive")
    exact = exact_tv_1d(fn)
    values = {m: np.array([quadrature_tv(fn, n, m) for n in ns]) for m in QUADRATURE_MODES}
    errors = {m: np.abs(values[m] - exact) for m in QUADRATURE_MODES}
    slopes = {m: _fit_slope(ns, errors[m]) for m in QUADRATURE_MODES}

    bound_ok = None
    if fn.d2f is not None:
        cap = _max_abs_d2f(fn)
        bounds = (fn.hi - fn.lo) ** 2 / (2.0 * np.asarray(ns, dtype=float)) * cap
        bound_ok = bool(np.all(errors["derivative"] <= bounds + 1e-12))

    diff_vals = values["difference"]
    doubling_ok = bool(np.all(diff_vals <= exact + 1e-12))
    for i, n in enumerate(ns[:-1]):
        if ns[i + 1] == 2 * n and diff_vals[i + 1] < diff_vals[i] - 1e-12:
            doubling_ok = False
    return ErrorReport(fn.name, exact, ns, values, errors, slopes, bound_ok, doubling_ok)


def write_error_report(report, path):
    """Write the study as delimited text: n, mode, value, exact, error."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "mode", "value", "exact", "error"])
        for n, mode, value, exact, error in report.rows():
            writer.writerow([n, mode, f"{value:.17g}", f"{exact:.17g}", f"{error:.17g}"])


# -- non-uniform partition experiment -----------------------------------------

@dataclass(frozen=True)
class ShiftResult:
    r_uniform: float
    r_shifted: float

    @property
    def difference(self):
        return self.r_uniform - self.r_shifted


def _check_shift_preconditions(fn, breaks, j, delta, m=512):
    h = breaks[j] - breaks[j - 1]
    if not 0.0 <= delta < h:
        raise ValueError(f"delta must satisfy 0 <= delta < {h} (got {delta})")
    xs = np.linspace(fn.lo, fn.hi, 2049)
    absdf = np.abs(np.asarray(fn.df(xs), dtype=np.float64))
    if not np.all(np.isfinite(absdf)):
        raise ValueError(f"{fn.name}: non-finite derivative on the interval")
    tol = 1e-12 * max(1.0, float(np.max(absdf)))
    if np.any(np.diff(absdf) < -tol):
        raise ValueError(f"{fn.name}: |f'| is not nondecreasing on the interval")
    if fn.d2f is None:
        raise ValueError(f"{fn.name}: second derivative required for the curvature check")
    left = np.asarray(fn.d2f(np.linspace(breaks[j - 1], breaks[j], m + 1)))
    # Open on the left end: the right cell is sampled just past the breakpoint.
    right_axis = breaks[j] + (breaks[j + 1] - breaks[j]) * (np.arange(1, m + 1) / m)
    right = np.asarray(fn.d2f(right_axis))
    if not float(np.min(left)) > float(np.max(right)):
        raise ValueError(
            f"{fn.name}: curvature does not drop across breakpoint {j} "
            f"(min left {np.min(left):.6g} <= max right {np.max(right):.6g})"
        )


def nonuniform_shift_experiment(fn, n, j, delta):
    """Truncation error before and after moving breakpoint j left by delta.

    The uniform n-interval partition is compared against the same partition
    with x_j replaced by x_j - delta, both evaluated as right-endpoint
    quadratures of |f'| against the exact total variation.  Preconditions
    (|f'| nondecreasing, curvature strictly dropping across x_j, delta inside
    the cell) are checked numerically on fine lattices and violations raise.
    """
    if not 1 <= j <= n - 1:
        raise ValueError(f"breakpoint index must be interior: 1 <= j <= {n - 1}")
    breaks = fn.lo + (fn.hi - fn.lo) * (np.arange(0, n + 1) / n)
    _check_shift_preconditions(fn, breaks, j, delta)
    exact = exact_tv_1d(fn)
    shifted = breaks.copy()
    shifted[j] -= delta
    return ShiftResult(
        r_uniform=abs(_partition_tv(fn, breaks) - exact),
        r_shifted=abs(_partition_tv(fn, shifted) - exact),
    )
