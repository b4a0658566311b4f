"""Signal-space toolkit: adaptive family construction, orthogonality
control, intention vector algebra, and the conservation/variation
validators.

A generative family is a finite list of named spanning vectors for one
signal space. Decomposition solves a least-squares problem against the
family and, while the residual exceeds the error threshold, adopts the
query vector itself as a new family member (bounded by the iteration cap).
Orthogonality control prunes near-dependent vectors so the family size
tracks the spanned rank.

The conservation and variation properties describe an idealized extractor;
trained toy models will not satisfy them in general, so the checkers
report, never assert.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .intention import Intention


class AlgebraError(ValueError):
    """Family or decomposition contract violation."""


RIDGE = 1e-10


@dataclass(frozen=True)
class GenerativeFamily:
    """Spanning vectors for one signal space, plus growth/pruning controls."""

    vectors: tuple[np.ndarray, ...]
    space: str = "input"
    error_threshold: float = 1e-6
    max_iterations: int = 16
    orthogonality_threshold: float = 1e-8

    def __post_init__(self):
        if not self.vectors:
            raise AlgebraError("a generative family needs at least one vector")
        if self.max_iterations < 1:
            raise AlgebraError("iteration cap must be at least 1")
        cleaned = []
        for v in self.vectors:
            arr = np.asarray(v, dtype=np.float64).ravel()
            if arr.size == 0 or not np.all(np.isfinite(arr)):
                raise AlgebraError("family vectors must be finite and non-empty")
            if not np.any(arr):
                raise AlgebraError("family vectors must be nonzero")
            if arr.size != np.asarray(self.vectors[0]).ravel().size:
                raise AlgebraError("family vectors must share a dimension")
            cleaned.append(arr)
        for i, a in enumerate(cleaned):
            for b in cleaned[i + 1:]:
                if np.array_equal(a, b):
                    raise AlgebraError("duplicate vectors in family")
        object.__setattr__(self, "vectors", tuple(cleaned))

    @property
    def dim(self) -> int:
        return self.vectors[0].size

    def __len__(self) -> int:
        return len(self.vectors)

    def matrix(self) -> np.ndarray:
        return np.stack(self.vectors, axis=1)

    def with_vector(self, v: np.ndarray) -> "GenerativeFamily":
        return GenerativeFamily(self.vectors + (np.asarray(v, dtype=np.float64).ravel(),),
                                self.space, self.error_threshold,
                                self.max_iterations, self.orthogonality_threshold)

    def to_json(self) -> dict:
        return {"space": self.space, "vectors": [v.tolist() for v in self.vectors],
                "error_threshold": self.error_threshold,
                "max_iterations": self.max_iterations,
                "orthogonality_threshold": self.orthogonality_threshold}

    @staticmethod
    def from_json(obj: dict) -> "GenerativeFamily":
        return GenerativeFamily(tuple(np.asarray(v, dtype=np.float64)
                                      for v in obj["vectors"]),
                                obj.get("space", "input"),
                                obj.get("error_threshold", 1e-6),
                                obj.get("max_iterations", 16),
                                obj.get("orthogonality_threshold", 1e-8))


@dataclass(frozen=True)
class Decomposition:
    """Least-squares coefficients over the first len(coefficients) family
    vectors at solve time, plus the residual norm of that solve."""

    coefficients: np.ndarray
    residual_norm: float


def least_squares(basis: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Normal equations with a small ridge for rank-deficient bases."""
    gram = basis.T @ basis
    gram = gram + RIDGE * np.eye(gram.shape[0])
    return np.linalg.solve(gram, basis.T @ x)


def decompose_with_error(x, family: GenerativeFamily) -> tuple[Decomposition, GenerativeFamily]:
    """Solve, and while the residual exceeds the threshold, adopt x and re-solve.

    The iteration cap bounds the work; the final coefficients belong to the
    family state of the last solve.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != family.dim:
        raise AlgebraError(f"vector dimension {x.size} does not match family {family.dim}")
    current = family
    coeffs = None
    error = np.inf
    iterations = 0
    while error > family.error_threshold and iterations < family.max_iterations:
        basis = current.matrix()
        coeffs = least_squares(basis, x)
        error = float(np.linalg.norm(x - basis @ coeffs))
        if error > family.error_threshold:
            try:
                current = current.with_vector(x)
            except AlgebraError:
                break  # x already present; a repeat solve cannot improve
        iterations += 1
    return Decomposition(coeffs, error), current


def gram_schmidt_control(family: GenerativeFamily) -> GenerativeFamily:
    """Sequential orthonormalization; near-dependent vectors are dropped.

    Survivors are the orthonormalized vectors, so the output spans the
    input up to the orthogonality threshold and its size equals the
    numerical rank.
    """
    kept: list[np.ndarray] = []
    for v in family.vectors:
        residual = v.astype(np.float64).copy()
        for u in kept:
            residual -= (u @ residual) * u
        norm = float(np.linalg.norm(residual))
        if norm > family.orthogonality_threshold:
            kept.append(residual / norm)
    if not kept:
        raise AlgebraError("orthogonality control dropped every vector")
    return GenerativeFamily(tuple(kept), family.space, family.error_threshold,
                            family.max_iterations, family.orthogonality_threshold)


# --- intention algebra ----------------------------------------------------------


def intention_add(a: Intention, b: Intention) -> Intention:
    if a.dim != b.dim:
        raise AlgebraError("intention dimensions differ")
    return Intention(a.i + b.i, a.p + b.p, a.o + b.o, 1)


def intention_scale(c: float, a: Intention) -> Intention:
    return Intention(c * a.i, c * a.p, c * a.o, 1)


def zero_intention(dim: int) -> Intention:
    z = np.zeros((dim, 1))
    return Intention(z, z.copy(), z.copy(), 1)


# --- validators -----------------------------------------------------------------


def check_information_conservation(signal, intention_set) -> dict:
    """Per-intention, per-component report of ||v_intention|| <= ||v_signal||.

    Diagnostic only; ratios are None where the reference norm is zero.
    """
    from .numerics import as_value

    ref = {k: float(np.linalg.norm(as_value(getattr(signal, k)))) for k in ("i", "p", "o")}
    rows = []
    for gamma in getattr(intention_set, "intentions", intention_set):
        row = {"step": gamma.step}
        for k in ("i", "p", "o"):
            norm = float(np.linalg.norm(as_value(getattr(gamma, k))))
            row[k] = {
                "holds": bool(norm <= ref[k]) if ref[k] > 0 else bool(norm == 0.0),
                "ratio": (norm / ref[k]) if ref[k] > 0 else None,
            }
        rows.append(row)
    return {"reference_norms": ref, "intentions": rows,
            "all_hold": all(row[k]["holds"] for row in rows for k in ("i", "p", "o"))}


def check_intention_variation(intention_set, similarity_threshold: float = 0.5,
                              distance_threshold: float = 0.1) -> dict:
    """Pairwise report: does each pair vary on at least one component?

    A pair satisfies the cosine clause when some component's cosine
    similarity falls below the threshold, and the distance clause when some
    component's distance exceeds its threshold. Vacuously satisfied for
    fewer than two intentions.
    """
    from .numerics import as_value

    intentions = list(getattr(intention_set, "intentions", intention_set))
    if len(intentions) < 2:
        return {"vacuous": True, "pairs": [], "all_vary": True}
    pairs = []
    for m in range(len(intentions)):
        for n in range(m + 1, len(intentions)):
            a, b = intentions[m], intentions[n]
            cosines, distances = {}, {}
            for k in ("i", "p", "o"):
                va, vb = as_value(getattr(a, k)), as_value(getattr(b, k))
                na, nb = np.linalg.norm(va), np.linalg.norm(vb)
                cosines[k] = (float(va.ravel() @ vb.ravel() / (na * nb))
                              if na > 0 and nb > 0 else 0.0)
                distances[k] = float(np.linalg.norm(va - vb))
            pairs.append({
                "pair": [a.step, b.step],
                "cosines": cosines,
                "distances": distances,
                "cosine_clause": any(c < similarity_threshold for c in cosines.values()),
                "distance_clause": any(d > distance_threshold for d in distances.values()),
            })
    return {"vacuous": False, "pairs": pairs,
            "all_vary": all(p["cosine_clause"] and p["distance_clause"] for p in pairs)}
