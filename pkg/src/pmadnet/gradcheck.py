"""Finite-difference verification of autodiff gradients.

Central differences with automatic exclusion of coordinates sitting on a
non-differentiable kink: if the two one-sided slopes disagree by more than
kink_rtol relative (with a small absolute floor so flat smooth regions are
not excluded by float noise), the coordinate is skipped rather than judged.

Relative error per coordinate: |ad - fd| / (|ad| + |fd| + 1e-12).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MissingGradient, NonFiniteValue
from .tensor import Tensor, no_grad

EPS_DEFAULT = 1e-5
TOL_DEFAULT = 1e-4
KINK_RTOL = 1e-2
KINK_ATOL = 1e-6
DENOM_FLOOR_DEFAULT = 1e-12


@dataclass
class GradCheckResult:
    """Outcome of one finite-difference sweep."""

    max_rel_error: float
    checked: int
    excluded: int
    tol: float
    worst: tuple = ()
    per_tensor: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        if self.checked == 0:
            return False
        return self.max_rel_error < self.tol

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status}: max rel err {self.max_rel_error:.3e} over {self.checked} coords "
            f"({self.excluded} kink-excluded), tol {self.tol:g}"
        )


def _eval_scalar(f, arr: np.ndarray) -> float:
    with no_grad():
        out = f(Tensor(arr))
    v = float(np.asarray(out.data).reshape(-1)[0])
    if not np.isfinite(v):
        raise NonFiniteValue("grad_check: function returned a non-finite value")
    return v


def _pick_coords(size: int, max_coords, rng) -> np.ndarray:
    if max_coords is None or size <= max_coords:
        return np.arange(size)
    if rng is None:
        rng = np.random.default_rng(0)
    return rng.choice(size, size=max_coords, replace=False)


def grad_check(
    f,
    x: np.ndarray,
    eps: float = EPS_DEFAULT,
    tol: float = TOL_DEFAULT,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    denom_floor: float = DENOM_FLOOR_DEFAULT,
) -> GradCheckResult:
    """Check d f(x) / d x for a scalar-valued f of one tensor.

    f must be pure: calling it twice on the same data must give the same
    value (stochastic ops need a fixed seed inside f).  x is evaluated in
    float64 regardless of its incoming dtype.

    denom_floor sets the smallest gradient magnitude the relative error is
    measured against; coordinates whose analytic and numeric derivatives are
    both far below it cannot dominate the result.  Deep networks need a
    floor around the finite-difference noise level (~1e-6 for unit-scale
    losses) because some parameters legitimately get near-zero gradients.
    """
    x = np.asarray(x, dtype=np.float64)
    xt = Tensor(x.copy(), requires_grad=True)
    out = f(xt)
    if not np.all(np.isfinite(out.data)):
        raise NonFiniteValue("grad_check: function returned a non-finite value")
    out.backward()
    if xt.grad is None:
        raise MissingGradient("grad_check: backward produced no gradient for x")
    ad = xt.grad.reshape(-1)
    y0 = float(np.asarray(out.data).reshape(-1)[0])

    flat = x.reshape(-1)
    coords = _pick_coords(flat.size, max_coords, rng)
    max_err, worst = 0.0, ()
    checked = excluded = 0
    for i in coords:
        orig = flat[i]
        work = x.copy().reshape(-1)
        work[i] = orig + eps
        y_plus = _eval_scalar(f, work.reshape(x.shape))
        work[i] = orig - eps
        y_minus = _eval_scalar(f, work.reshape(x.shape))
        d_plus = (y_plus - y0) / eps
        d_minus = (y0 - y_minus) / eps
        if abs(d_plus - d_minus) > max(KINK_RTOL * (abs(d_plus) + abs(d_minus)), KINK_ATOL):
            excluded += 1
            continue
        fd = (y_plus - y_minus) / (2.0 * eps)
        err = abs(ad[i] - fd) / (abs(ad[i]) + abs(fd) + denom_floor)
        checked += 1
        if err > max_err:
            max_err, worst = err, (int(i), float(ad[i]), float(fd))
    return GradCheckResult(max_err, checked, excluded, tol, worst)


def grad_check_params(
    loss_fn,
    params: dict[str, Tensor],
    eps: float = EPS_DEFAULT,
    tol: float = TOL_DEFAULT,
    coords_per_tensor: int = 2,
    rng: np.random.Generator | None = None,
    denom_floor: float = DENOM_FLOOR_DEFAULT,
) -> GradCheckResult:
    """Check gradients w.r.t. named parameters of a rebuilt computation.

    loss_fn() must rebuild the graph from the live parameter tensors each
    call (models already do, since each forward records fresh ops).  One
    autodiff pass plus two evaluations per sampled coordinate.  See
    grad_check for the role of denom_floor.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    for p in params.values():
        p.zero_grad()
    out = loss_fn()
    if not np.all(np.isfinite(out.data)):
        raise NonFiniteValue("grad_check_params: loss is non-finite")
    out.backward()
    y0 = float(np.asarray(out.data).reshape(-1)[0])

    def eval_loss() -> float:
        with no_grad():
            v = float(np.asarray(loss_fn().data).reshape(-1)[0])
        if not np.isfinite(v):
            raise NonFiniteValue("grad_check_params: loss is non-finite")
        return v

    max_err, worst = 0.0, ()
    checked = excluded = 0
    per_tensor: dict[str, float] = {}
    for name, p in params.items():
        if p.grad is None:
            raise MissingGradient(f"grad_check_params: no gradient for {name!r}")
        ad = p.grad.reshape(-1)
        coords = _pick_coords(p.data.size, coords_per_tensor, rng)
        tensor_max = 0.0
        for i in coords:
            # Index through unravel so in-place edits always hit p.data.
            loc = np.unravel_index(int(i), p.data.shape)
            orig = p.data[loc]
            p.data[loc] = orig + eps
            y_plus = eval_loss()
            p.data[loc] = orig - eps
            y_minus = eval_loss()
            p.data[loc] = orig
            d_plus = (y_plus - y0) / eps
            d_minus = (y0 - y_minus) / eps
            if abs(d_plus - d_minus) > max(KINK_RTOL * (abs(d_plus) + abs(d_minus)), KINK_ATOL):
                excluded += 1
                continue
            fd = (y_plus - y_minus) / (2.0 * eps)
            err = abs(ad[i] - fd) / (abs(ad[i]) + abs(fd) + denom_floor)
            checked += 1
            tensor_max = max(tensor_max, err)
            if err > max_err:
                max_err, worst = err, (name, int(i), float(ad[i]), float(fd))
        per_tensor[name] = tensor_max
    return GradCheckResult(max_err, checked, excluded, tol, worst, per_tensor)
