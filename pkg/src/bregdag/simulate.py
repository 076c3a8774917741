"""Synthetic linear-SCM benchmark data.

Graphs are sampled either as Erdos-Renyi DAGs (each unordered pair kept
with probability ``2k / (n - 1)``, so ``k * n`` edges in expectation,
oriented along a random permutation) or as scale-free DAGs
(preferential attachment with ``k`` edges per arriving node, oriented
from old to new, labels permuted afterwards).  Edge weights are uniform
in magnitude over ``weight_range`` with random sign unless
``positive_only`` is set.

Samples follow the linear model ``X = X W + E`` row by row: visiting
variables in a topological order, ``x_j = sum_i W[i, j] x_i + e_j``.
Noise is Gaussian, exponential, or Gumbel, mean-centered by default
(exponential shifted by ``-scale``, Gumbel by ``-scale *`` Euler-
Mascheroni).  ``scale = 0`` is allowed as an exact noiseless override
for tests.

Everything is driven by an explicit ``numpy`` Generator, so a fixed seed
reproduces graphs, data, and serialized files bit for bit.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

NOISE_GAUSSIAN = "gaussian"
NOISE_EXPONENTIAL = "exponential"
NOISE_GUMBEL = "gumbel"
NOISE_FAMILIES = (NOISE_GAUSSIAN, NOISE_EXPONENTIAL, NOISE_GUMBEL)

MODEL_ER = "er"
MODEL_SF = "sf"
MODELS = (MODEL_ER, MODEL_SF)


@dataclass(frozen=True)
class GraphSpec:
    """Random-DAG shape: ``n`` nodes with mean degree parameter ``k``."""

    n: int
    k: float = 2.0
    model: str = MODEL_ER
    weight_range: tuple[float, float] = (0.5, 2.0)
    positive_only: bool = False

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ValueError(f"need at least 2 nodes, got n={self.n}")
        if self.model not in MODELS:
            raise ValueError(f"unknown graph model {self.model!r}")
        if not self.k >= 1:
            raise ValueError(f"k must be at least 1, got {self.k}")
        if self.model == MODEL_ER and 2.0 * self.k / (self.n - 1) > 1.0 + 1e-12:
            raise ValueError(
                f"ER pair probability 2k/(n-1) exceeds 1 for n={self.n}, k={self.k}"
            )
        if self.model == MODEL_SF and int(round(self.k)) >= self.n:
            raise ValueError(f"scale-free attachment needs k < n, got k={self.k}, n={self.n}")
        lo, hi = self.weight_range
        if not 0 < lo <= hi:
            raise ValueError(f"weight_range must satisfy 0 < lo <= hi, got {self.weight_range}")


@dataclass(frozen=True)
class NoiseSpec:
    """Exogenous noise family; ``centered`` subtracts the family mean."""

    family: str = NOISE_GAUSSIAN
    scale: float = 1.0
    centered: bool = True

    def __post_init__(self) -> None:
        if self.family not in NOISE_FAMILIES:
            raise ValueError(f"unknown noise family {self.family!r}")
        if self.scale < 0:
            raise ValueError(f"scale must be nonnegative, got {self.scale}")


@dataclass(frozen=True)
class Dataset:
    """Samples plus the ground truth that generated them."""

    samples: np.ndarray
    weights: np.ndarray
    graph: GraphSpec
    noise: NoiseSpec
    seed: int

    @property
    def m(self) -> int:
        return self.samples.shape[0]

    @property
    def n(self) -> int:
        return self.samples.shape[1]


def _permute(W: np.ndarray, perm: np.ndarray) -> np.ndarray:
    """Relabel nodes: edge (i, j) becomes (perm[i], perm[j])."""
    out = np.zeros_like(W)
    out[np.ix_(perm, perm)] = W
    return out


def _er_support(spec: GraphSpec, rng: np.random.Generator) -> np.ndarray:
    p = 2.0 * spec.k / (spec.n - 1)
    upper = np.triu(rng.random((spec.n, spec.n)) < p, k=1)
    return _permute(upper.astype(float), rng.permutation(spec.n))


def _sf_support(spec: GraphSpec, rng: np.random.Generator) -> np.ndarray:
    n, k = spec.n, max(1, int(round(spec.k)))
    A = np.zeros((n, n))
    targets = list(range(k))
    repeated: list[int] = []
    for new in range(k, n):
        for t in targets:
            A[t, new] = 1.0  # old -> new keeps arrival order acyclic
        repeated.extend(targets)
        repeated.extend([new] * k)
        chosen: set[int] = set()
        while len(chosen) < k:
            chosen.add(repeated[int(rng.integers(len(repeated)))])
        targets = sorted(chosen)
    return _permute(A, rng.permutation(n))


def sample_dag(spec: GraphSpec, rng: np.random.Generator) -> np.ndarray:
    """Draw a weighted DAG; entry ``W[i, j]`` is the weight of ``i -> j``."""
    support = _er_support(spec, rng) if spec.model == MODEL_ER else _sf_support(spec, rng)
    lo, hi = spec.weight_range
    magnitude = rng.uniform(lo, hi, size=support.shape)
    if spec.positive_only:
        sign = np.ones_like(magnitude)
    else:
        sign = np.where(rng.random(support.shape) < 0.5, -1.0, 1.0)
    return support * magnitude * sign


def topological_order(W: np.ndarray, atol: float = 0.0) -> np.ndarray:
    """Kahn's algorithm on the support of ``W``; raises on a cycle."""
    A = np.abs(np.asarray(W)) > atol
    n = A.shape[0]
    indeg = A.sum(axis=0)
    ready = sorted(np.nonzero(indeg == 0)[0].tolist())
    order: list[int] = []
    while ready:
        node = ready.pop(0)
        order.append(node)
        for child in np.nonzero(A[node])[0]:
            indeg[child] -= 1
            if indeg[child] == 0:
                ready.append(int(child))
        ready.sort()
    if len(order) < n:
        raise ValueError("weight matrix contains a cycle")
    return np.asarray(order)


def _sample_noise(noise: NoiseSpec, size: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    if noise.family == NOISE_GAUSSIAN:
        return rng.normal(0.0, noise.scale, size=size)
    if noise.family == NOISE_EXPONENTIAL:
        E = rng.exponential(noise.scale, size=size)
        return E - noise.scale if noise.centered else E
    E = rng.gumbel(0.0, noise.scale, size=size)
    return E - np.euler_gamma * noise.scale if noise.centered else E


def sample_data(
    W: np.ndarray, m: int, noise: NoiseSpec, rng: np.random.Generator
) -> np.ndarray:
    """Draw ``m`` rows of the linear model ``X = X W + E``."""
    W = np.asarray(W, dtype=float)
    if m < 1:
        raise ValueError(f"need at least one sample, got m={m}")
    n = W.shape[0]
    E = _sample_noise(noise, (m, n), rng)
    X = np.zeros((m, n))
    for j in topological_order(W):
        X[:, j] = X @ W[:, j] + E[:, j]
    return X


def generate(spec: GraphSpec, noise: NoiseSpec, m: int, seed: int) -> Dataset:
    """Graph plus samples from a single seeded generator."""
    rng = np.random.default_rng(seed)
    W = sample_dag(spec, rng)
    X = sample_data(W, m, noise, rng)
    return Dataset(samples=X, weights=W, graph=spec, noise=noise, seed=seed)


# -- serialization -----------------------------------------------------------
#
# Floats are written with repr (shortest round-trip form), which keeps
# files byte-stable across runs and exact under reload.

def _format_row(row: np.ndarray) -> str:
    return ",".join(repr(float(v)) for v in row)


def default_names(n: int) -> list[str]:
    return [f"x{j}" for j in range(n)]


def save_data_csv(path, X: np.ndarray, names: list[str] | None = None) -> None:
    """Write samples with a header row of variable names."""
    X = np.asarray(X, dtype=float)
    if names is None:
        names = default_names(X.shape[1])
    if len(names) != X.shape[1]:
        raise ValueError(f"{len(names)} names for {X.shape[1]} columns")
    lines = [",".join(names)]
    lines.extend(_format_row(row) for row in X)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_float_rows(lines: list[str], path, first_line: int) -> np.ndarray:
    rows = []
    width = None
    for offset, line in enumerate(lines):
        lineno = first_line + offset
        cells = line.split(",")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise ValueError(
                f"{path}: line {lineno}: expected {width} columns, found {len(cells)}"
            )
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return np.asarray(rows)


def load_data_csv(path) -> tuple[np.ndarray, list[str]]:
    """Read a header + samples file; errors name the offending line."""
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    if not lines:
        raise ValueError(f"{path}: empty file")
    names = lines[0].split(",")
    X = _parse_float_rows(lines[1:], path, first_line=2)
    if X.shape[1] != len(names):
        raise ValueError(
            f"{path}: header has {len(names)} names but rows have {X.shape[1]} columns"
        )
    return X, names


def save_adjacency_csv(path, W: np.ndarray) -> None:
    """Write an n x n weight matrix, one row per line, no header."""
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError(f"adjacency matrix must be square, got shape {W.shape}")
    with open(path, "w") as fh:
        fh.write("\n".join(_format_row(row) for row in W) + "\n")


def load_adjacency_csv(path) -> np.ndarray:
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    W = _parse_float_rows(lines, path, first_line=1)
    if W.shape[0] != W.shape[1]:
        raise ValueError(f"{path}: expected a square matrix, got shape {W.shape}")
    return W


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()
