"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .functional import softmax_cross_entropy


@dataclass
class GradcheckEntry:
    name: str
    rel_error: float
    n_checked: int
    passed: bool
    n_refined: int = 0
    n_skipped: int = 0


@dataclass
class GradcheckReport:
    tolerance: float
    entries: list[GradcheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_error(self) -> float:
        return max((e.rel_error for e in self.entries), default=0.0)

    def lines(self) -> list[str]:
        return [
            f"{'PASS' if e.passed else 'FAIL'} {e.name} rel_err={e.rel_error:.3e} "
            f"n={e.n_checked} refined={e.n_refined} skipped={e.n_skipped}"
            for e in self.entries
        ]

    def to_dict(self) -> dict:
        return {
            "tolerance": self.tolerance,
            "passed": self.passed,
            "max_error": self.max_error,
            "entries": [e.__dict__ for e in self.entries],
        }


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||); zero when both vectors vanish."""
    a = np.asarray(analytic, np.float64).ravel()
    n = np.asarray(numeric, np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def _kink_fingerprint(module) -> bytes:
    parts = []
    stack = [module]
    while stack:
        m = stack.pop()
        state = m.kink_state()
        if state is not None:
            parts.append(np.packbits(np.asarray(state).astype(bool)).tobytes()
                         if np.asarray(state).dtype == bool else np.asarray(state).tobytes())
        stack.extend(c for _, c in reversed(m.children()))
    return b"|".join(parts)


@contextmanager
def _promoted(fragment, dtype):
    """Temporarily run a fragment's parameters in ``dtype``; restore state afterwards."""
    params = [p for _, p in fragment.named_parameters()]
    saved = [(p.value, p.grad) for p in params]
    buffers = [(b, b.copy()) for _, b in fragment.named_buffers()]
    for p in params:
        p.value = p.value.astype(dtype)
        p.grad = np.zeros_like(p.value)
    try:
        yield params
    finally:
        for p, (v, g) in zip(params, saved):
            p.value, p.grad = v, g
        for b, copy in buffers:
            b[...] = copy


def gradcheck(
    fragment,
    x: np.ndarray,
    labels=None,
    tolerance: float = 1e-3,
    eps: float = 1e-2,
    max_coords: int = 32,
    seed: int = 0,
    training: bool = True,
    dtype=np.float64,
    check_input: bool = True,
    min_eps: float = 1e-5,
) -> GradcheckReport:
    """Compare analytic and central-difference gradients of a scalar loss.

    The loss is softmax cross-entropy when ``labels`` is given, otherwise a
    fixed random projection of the fragment output. At most ``max_coords``
    randomly chosen coordinates of each tensor are perturbed; the error per
    tensor is the relative norm distance over those coordinates.

    A perturbation that flips a relu mask or a max-pool argmax crosses a
    kink, where central differences do not estimate the derivative. Such a
    coordinate is retried with the step shrunk tenfold (down to
    ``min_eps``) and dropped from the comparison if it still crosses.
    """
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=dtype)
    proj = None

    def loss_of(inp):
        nonlocal proj
        out = fragment.forward(inp, training)
        if labels is not None:
            return softmax_cross_entropy(out, labels)
        if proj is None:
            proj = rng.standard_normal(out.shape)
        return float((out.astype(np.float64) * proj).sum()), proj.astype(out.dtype)

    report = GradcheckReport(tolerance)
    with _promoted(fragment, dtype) as _:
        named = list(fragment.named_parameters())
        _, g = loss_of(x)
        base = _kink_fingerprint(fragment)
        gx = fragment.backward(g)
        targets = [(name, p.value, p.grad.copy()) for name, p in named]
        if check_input:
            targets.insert(0, ("<input>", x, np.asarray(gx, dtype=np.float64)))
        for name, arr, analytic in targets:
            flat = arr.reshape(-1)
            if flat.size <= max_coords:
                idx = np.arange(flat.size)
            else:
                idx = np.sort(rng.choice(flat.size, max_coords, replace=False))
            numeric = np.full(idx.size, np.nan)
            refined = 0
            for j, i in enumerate(idx):
                orig = flat[i]
                h = eps
                while h >= min_eps:
                    flat[i] = orig + h
                    lp, _ = loss_of(x)
                    smooth = _kink_fingerprint(fragment) == base
                    flat[i] = orig - h
                    lm, _ = loss_of(x)
                    smooth = smooth and _kink_fingerprint(fragment) == base
                    flat[i] = orig
                    if smooth:
                        numeric[j] = (lp - lm) / (2 * h)
                        break
                    h /= 10
                refined += h < eps
            keep = ~np.isnan(numeric)
            err = relative_error(analytic.reshape(-1)[idx][keep], numeric[keep])
            report.entries.append(GradcheckEntry(
                name, err, int(keep.sum()), bool(err < tolerance and keep.any()),
                int(refined) - int((~keep).sum()), int((~keep).sum()),
            ))
    return report
