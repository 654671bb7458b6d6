"""Central finite differences for certifying hand-written backward passes.

The workflow: reduce a tensor-valued function to a scalar through a fixed
random projection (ScalarProbe), perturb every parameter entry by +/- eps,
and compare the resulting numerical gradient against the analytic one with
a symmetric relative error. Central differences have O(eps^2) truncation
error, which the convergence check below exploits: halving eps should
shrink the error by about 4x while truncation still dominates roundoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError


@dataclass(frozen=True)
class ScalarProbe:
    """Fixed random linear functional: probe(t) = sum(t * projection).

    Freezing the projection once per check makes the scalar objective
    deterministic, so repeated finite-difference evaluations see the exact
    same function.
    """

    projection: np.ndarray

    @classmethod
    def for_shape(cls, shape, rng: np.random.Generator) -> "ScalarProbe":
        return cls(projection=rng.standard_normal(shape))

    def __call__(self, tensor) -> float:
        tensor = np.asarray(tensor, dtype=np.float64)
        if tensor.shape != self.projection.shape:
            raise ShapeError(
                f"probe built for shape {self.projection.shape}, got {tensor.shape}"
            )
        return float(np.sum(tensor * self.projection))

    def grad(self) -> np.ndarray:
        # d probe / d tensor is just the projection itself
        return self.projection.copy()


def finite_diff(f, params: dict[str, np.ndarray], eps: float = 1e-5) -> dict[str, np.ndarray]:
    """Central-difference gradient of scalar f with respect to every entry.

    f is called as f(params) and must depend on the dict values alone.
    Entries are perturbed in place one at a time and restored afterwards,
    so f may simply read from the same dict on each call. Non-finite
    function values abort the check rather than silently corrupting it.
    """
    grads: dict[str, np.ndarray] = {}
    for name, value in params.items():
        value = np.asarray(value)
        flat = value.reshape(-1)
        grad = np.zeros(value.size, dtype=np.float64)
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + eps
            f_plus = f(params)
            flat[idx] = original - eps
            f_minus = f(params)
            flat[idx] = original
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise NumericError(
                    f"finite_diff: non-finite objective while perturbing {name}[{idx}]"
                )
            grad[idx] = (f_plus - f_minus) / (2.0 * eps)
        grads[name] = grad.reshape(value.shape)
    return grads


def relative_error(analytic, numeric):
    """Worst-case symmetric relative error between two gradients.

    Per entry: |a - n| / max(|a|, |n|, 1e-8). The floor keeps near-zero
    gradients from blowing up the ratio. Returns (max_error, worst_index).
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.shape != numeric.shape:
        raise ShapeError(
            f"gradient shapes differ: {analytic.shape} vs {numeric.shape}"
        )
    if analytic.size == 0:
        return 0.0, ()
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel = np.abs(analytic - numeric) / denom
    worst = tuple(int(x) for x in np.unravel_index(int(np.argmax(rel)), rel.shape))
    return float(rel[worst]), worst


@dataclass(frozen=True)
class GradCheckRow:
    name: str
    size: int
    max_rel_error: float
    worst_index: tuple


@dataclass(frozen=True)
class GradCheckReport:
    rows: tuple[GradCheckRow, ...]
    threshold: float

    @property
    def max_rel_error(self) -> float:
        return max((r.max_rel_error for r in self.rows), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.threshold

    def format_table(self) -> str:
        lines = [f"{'parameter':<16} {'entries':>8} {'max rel err':>14}  worst index"]
        for r in self.rows:
            lines.append(
                f"{r.name:<16} {r.size:>8} {r.max_rel_error:>14.3e}  {r.worst_index}"
            )
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(
            f"overall max rel err {self.max_rel_error:.3e} "
            f"(threshold {self.threshold:.1e}): {verdict}"
        )
        return "\n".join(lines)


def compare_gradients(analytic: dict[str, np.ndarray],
                      numeric: dict[str, np.ndarray],
                      threshold: float = 1e-5) -> GradCheckReport:
    """Pair up analytic and numeric gradients by name and report per-tensor errors."""
    missing = set(analytic) ^ set(numeric)
    if missing:
        raise ShapeError(f"gradient dicts disagree on keys: {sorted(missing)}")
    rows = []
    for name in sorted(analytic):
        err, worst = relative_error(analytic[name], numeric[name])
        rows.append(GradCheckRow(name, int(np.asarray(analytic[name]).size), err, worst))
    return GradCheckReport(rows=tuple(rows), threshold=threshold)


def convergence_ratio(f, params: dict[str, np.ndarray],
                      analytic: dict[str, np.ndarray], eps: float) -> float:
    """err(eps) / err(eps/2) where err is the l2 norm of (numeric - analytic).

    For a smooth objective the central-difference error is dominated by the
    O(eps^2) truncation term as long as eps is large enough that float64
    roundoff stays negligible, so the ratio should land near 4. Callers
    should therefore pass a fairly coarse eps (1e-3-ish); at eps ~ 1e-5 the
    roundoff floor corrupts the ratio.
    """
    def err(e: float) -> float:
        numeric = finite_diff(f, params, eps=e)
        total = 0.0
        for name in analytic:
            diff = np.asarray(numeric[name]) - np.asarray(analytic[name])
            total += float(np.sum(diff * diff))
        return math.sqrt(total)

    coarse = err(eps)
    fine = err(eps / 2.0)
    if fine == 0.0:
        # analytically exact case (linear/quadratic objectives)
        return 4.0 if coarse == 0.0 else math.inf
    return coarse / fine
