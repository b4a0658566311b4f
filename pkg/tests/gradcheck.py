"""Central finite-difference gradient checking shared by the test modules."""

from __future__ import annotations

import numpy as np

from workflow_intention import numerics as nm

FD_STEP = 1e-5
FD_REL_TOL = 1e-4


def fd_gradcheck(build_loss, params, rng=None, max_coords: int | None = None,
                 step: float = FD_STEP, rel_tol: float = FD_REL_TOL) -> None:
    """Compare tape gradients of ``build_loss()`` against central differences.

    build_loss must be a zero-argument callable re-evaluating the scalar loss
    from the current Param values. When max_coords is set, only a random
    subset of coordinates per Param is probed (for big parameter sets).
    """
    with nm.GradientTape() as tape:
        loss = build_loss()
    grads = nm.backward(tape, loss)
    for p in params:
        if p.frozen:
            assert p not in grads
            continue
        assert p in grads, f"no gradient for {p.name}"
        g = grads[p]
        assert g.shape == p.value.shape
        coords = list(np.ndindex(p.value.shape))
        if max_coords is not None and len(coords) > max_coords:
            pick = rng if rng is not None else np.random.default_rng(0)
            chosen = pick.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[i] for i in chosen]
        for idx in coords:
            orig = p.value[idx]
            p.value[idx] = orig + step
            lp = build_loss().item()
            p.value[idx] = orig - step
            lm = build_loss().item()
            p.value[idx] = orig
            num = (lp - lm) / (2.0 * step)
            ana = g[idx]
            denom = max(abs(ana), abs(num))
            if denom < 1e-6:
                assert abs(ana - num) < 1e-8, (
                    f"{p.name}[{idx}]: analytic {ana} vs numeric {num}"
                )
            else:
                rel = abs(ana - num) / denom
                assert rel < rel_tol, (
                    f"{p.name}[{idx}]: analytic {ana} vs numeric {num} (rel {rel:.2e})"
                )


def random_weighted_sum(out, rng) -> "nm.Tensor":
    """Scalar loss sum(R * out) with a fixed random R, exposing sign structure."""
    r = rng.standard_normal(out.value.shape)
    return nm.sum_all(nm.mul(out, nm.constant(r)))
