"""Kernel Gram matrices and Hilbert-Schmidt independence estimation.

The dependence measure used for coupling representations is the biased
V-statistic estimate tr(K H L H) / (n-1)^2, where K and L are Gram
matrices over the same n samples and H = I - (1/n) 11^T is the centering
matrix. A universal kernel (Gaussian RBF or Laplace) makes the measure
zero iff the two variables are independent; a brute-force expansion oracle
and a random-Fourier-feature approximation are provided alongside for
cross-checking and for linear-in-n estimation.

All math here is float64 regardless of the input dtype: the trace form
accumulates heavy cancellation once the Gram matrices are centered.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from qad.errors import InvalidConfigError, InvalidInputError, UnsupportedKernelError
from qad.util import rng

FAMILIES = ("gaussian-rbf", "laplace", "linear")


@dataclass(frozen=True)
class KernelConfig:
    """Kernel family plus bandwidth semantics.

    With ``dim_normalize`` on (the default), squared distances are divided
    by the feature dimension, so one bandwidth means the same thing for
    representations of very different widths:

        gaussian-rbf: k(u, v) = exp(-||u - v||^2 / (2 sigma^2 d_eff))
        laplace:      k(u, v) = exp(-||u - v||_1 / (sigma d_eff))

    where d_eff = d if dim_normalize else 1. ``bandwidth_mode="median-heuristic"``
    ignores sigma and dim_normalize; resolve it against data with
    :func:`resolve_bandwidth` before building RFF maps.
    """

    family: str = "gaussian-rbf"
    sigma: float = 1.0
    bandwidth_mode: str = "fixed"
    dim_normalize: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidConfigError(f"unknown kernel family {self.family!r}")
        if self.bandwidth_mode not in ("fixed", "median-heuristic"):
            raise InvalidConfigError(f"unknown bandwidth mode {self.bandwidth_mode!r}")
        if self.family != "linear" and not self.sigma > 0:
            raise InvalidConfigError(f"bandwidth sigma must be positive, got {self.sigma}")

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "sigma": self.sigma,
            "bandwidth_mode": self.bandwidth_mode,
            "dim_normalize": self.dim_normalize,
        }

    @staticmethod
    def from_dict(d: dict) -> "KernelConfig":
        return KernelConfig(**d)


@dataclass
class GramMatrix:
    """n x n kernel matrix; ``centered`` records whether H K H was applied."""

    values: np.ndarray
    centered: bool = False

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class RffMap:
    """Random Fourier feature map: z(x) = sqrt(2/D) cos(x @ freq^T + phase)."""

    num_features: int
    frequencies: np.ndarray  # (D, d)
    phases: np.ndarray  # (D,)
    seed: int


def _check_samples(X, name: str = "X", min_n: int = 1) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidInputError(f"{name} must be a 2-D (n, d) sample matrix, got shape {X.shape}")
    if X.shape[0] < min_n:
        raise InvalidInputError(f"{name} needs at least {min_n} samples, got {X.shape[0]}")
    if not np.isfinite(X).all():
        raise InvalidInputError(f"{name} contains non-finite entries")
    return X


def _sq_dists(X: np.ndarray) -> np.ndarray:
    sq = np.sum(X * X, axis=1, keepdims=True)
    d2 = sq + sq.T - 2.0 * (X @ X.T)
    np.maximum(d2, 0.0, out=d2)
    d2 = 0.5 * (d2 + d2.T)  # exact symmetry
    np.fill_diagonal(d2, 0.0)
    return d2


def _l1_dists(X: np.ndarray) -> np.ndarray:
    n = X.shape[0]
    out = np.empty((n, n), dtype=np.float64)
    block = max(1, (1 << 22) // max(1, X.shape[1] * n))
    for i in range(0, n, block):
        out[i : i + block] = np.sum(np.abs(X[i : i + block, None, :] - X[None, :, :]), axis=2)
    out = 0.5 * (out + out.T)
    np.fill_diagonal(out, 0.0)
    return out


def resolve_bandwidth(X, cfg: KernelConfig) -> KernelConfig:
    """Fix a median-heuristic config against data.

    Returns a ``fixed`` config whose sigma is the median non-zero pairwise
    distance (Euclidean for gaussian-rbf, L1 for laplace), with
    dim-normalization off since the median already carries the scale.
    """
    if cfg.bandwidth_mode != "median-heuristic":
        return cfg
    if cfg.family == "linear":
        raise UnsupportedKernelError("median heuristic is undefined for the linear kernel")
    X = _check_samples(X, min_n=2)
    if cfg.family == "gaussian-rbf":
        d = np.sqrt(_sq_dists(X))
    else:
        d = _l1_dists(X)
    tri = d[np.triu_indices_from(d, k=1)]
    nz = tri[tri > 0]
    sigma = float(np.median(nz)) if nz.size else 1.0
    return replace(cfg, sigma=sigma, bandwidth_mode="fixed", dim_normalize=False)


def gram(X, cfg: KernelConfig) -> GramMatrix:
    """Pairwise kernel matrix over the rows of X (uncentered)."""
    X = _check_samples(X, min_n=2)
    cfg = resolve_bandwidth(X, cfg)
    d_eff = X.shape[1] if cfg.dim_normalize else 1
    if cfg.family == "gaussian-rbf":
        values = np.exp(_sq_dists(X) / (-2.0 * cfg.sigma ** 2 * d_eff))
    elif cfg.family == "laplace":
        values = np.exp(_l1_dists(X) / (-cfg.sigma * d_eff))
    else:
        k = X @ X.T
        values = 0.5 * (k + k.T)
    return GramMatrix(values=values, centered=False)


def _center_values(K: np.ndarray) -> np.ndarray:
    # H K H = K - row means - col means + grand mean
    row = K.mean(axis=1, keepdims=True)
    col = K.mean(axis=0, keepdims=True)
    return K - row - col + K.mean()


def center(K: GramMatrix) -> GramMatrix:
    """Apply the centering matrix on both sides: H K H. Idempotent."""
    if K.values.ndim != 2 or K.values.shape[0] != K.values.shape[1]:
        raise InvalidInputError(f"gram matrix must be square, got {K.values.shape}")
    if K.centered:
        return GramMatrix(values=K.values, centered=True)
    return GramMatrix(values=_center_values(K.values), centered=True)


def hsic_biased(K: GramMatrix, L: GramMatrix) -> float:
    """Biased HSIC estimate tr(K H L H) / (n-1)^2 from uncentered Grams.

    Bias is O(1/n); non-negative up to round-off for PSD kernels.
    """
    if K.centered or L.centered:
        raise InvalidInputError("hsic_biased expects uncentered gram matrices")
    kv, lv = K.values, L.values
    if kv.shape != lv.shape or kv.ndim != 2 or kv.shape[0] != kv.shape[1]:
        raise InvalidInputError(f"gram shapes mismatch: {kv.shape} vs {lv.shape}")
    n = kv.shape[0]
    if n < 2:
        raise InvalidInputError("HSIC needs at least 2 samples")
    # tr(K H L H) = <H K H, H L H> since H is an idempotent projector; the
    # two-sided form is exactly symmetric in its arguments
    return float(np.sum(_center_values(kv) * _center_values(lv)) / (n - 1) ** 2)


def _kernel_scalar(u: np.ndarray, v: np.ndarray, cfg: KernelConfig) -> float:
    # independent single-pair evaluation used only by the oracle path
    d_eff = u.size if cfg.dim_normalize else 1
    if cfg.family == "gaussian-rbf":
        return float(np.exp(-np.sum((u - v) ** 2) / (2.0 * cfg.sigma ** 2 * d_eff)))
    if cfg.family == "laplace":
        return float(np.exp(-np.sum(np.abs(u - v)) / (cfg.sigma * d_eff)))
    return float(np.sum(u * v))


def gram_oracle(X, cfg: KernelConfig) -> np.ndarray:
    """Entry-by-entry pairwise loop; test oracle for :func:`gram`."""
    X = _check_samples(X, min_n=2)
    cfg = resolve_bandwidth(X, cfg)
    n = X.shape[0]
    out = np.empty((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(n):
            out[i, j] = _kernel_scalar(X[i], X[j], cfg)
    return out


def hsic_oracle(U, V, cfg_k: KernelConfig, cfg_l: KernelConfig) -> float:
    """Naive empirical expansion of HSIC; test oracle only.

    Computes (1/n^2) sum_ij K_ij L_ij - (2/n^3) sum_ijm K_ij L_im
    + (1/n^4) (sum K)(sum L), which equals tr(K H L H) / n^2 algebraically;
    rescale by n^2/(n-1)^2 to compare against :func:`hsic_biased`.
    """
    U = _check_samples(U, "U", min_n=2)
    V = _check_samples(V, "V", min_n=2)
    if U.shape[0] != V.shape[0]:
        raise InvalidInputError(f"sample counts differ: {U.shape[0]} vs {V.shape[0]}")
    n = U.shape[0]
    K = gram_oracle(U, cfg_k)
    L = gram_oracle(V, cfg_l)
    term1 = np.sum(K * L) / n ** 2
    term2 = 2.0 * np.sum(K.sum(axis=1) * L.sum(axis=1)) / n ** 3
    term3 = K.sum() * L.sum() / n ** 4
    return float(term1 - term2 + term3)


# -- random Fourier features ---------------------------------------------------


def rff_map(d: int, D: int, cfg: KernelConfig, seed: int) -> RffMap:
    """Sample a feature map whose inner products approximate the kernel.

    Frequencies follow the kernel's spectral density (Gaussian for
    gaussian-rbf, per-dimension Cauchy for laplace); deterministic in seed.
    """
    if cfg.family == "linear":
        raise UnsupportedKernelError("random Fourier features need a shift-invariant kernel")
    if cfg.bandwidth_mode != "fixed":
        raise InvalidConfigError("resolve_bandwidth() against data before building an RFF map")
    if d < 1 or D < 1:
        raise InvalidConfigError(f"dimensions must be positive, got d={d}, D={D}")
    gen = rng(seed, 0xF0F)
    d_eff = d if cfg.dim_normalize else 1
    if cfg.family == "gaussian-rbf":
        scale = cfg.sigma * np.sqrt(d_eff)  # k = exp(-r^2 / (2 scale^2))
        freqs = gen.standard_normal((D, d)) / scale
    else:
        scale = cfg.sigma * d_eff  # k = prod_t exp(-|delta_t| / scale)
        freqs = gen.standard_cauchy((D, d)) / scale
    phases = gen.uniform(0.0, 2.0 * np.pi, size=D)
    return RffMap(num_features=D, frequencies=freqs, phases=phases, seed=seed)


def rff_features(X, fmap: RffMap) -> np.ndarray:
    """z(x)_j = sqrt(2/D) cos(w_j . x + b_j), one row per sample."""
    X = _check_samples(X)
    if X.shape[1] != fmap.frequencies.shape[1]:
        raise InvalidInputError(
            f"feature dim {X.shape[1]} does not match map dim {fmap.frequencies.shape[1]}"
        )
    return np.sqrt(2.0 / fmap.num_features) * np.cos(X @ fmap.frequencies.T + fmap.phases)


def hsic_rff(Zu, Zv) -> float:
    """Squared Frobenius norm of the empirical cross-covariance of RFF features.

    ||(1/n) Zu_c^T Zv_c||_F^2 with per-batch column-mean centering; O(n D^2)
    per pair, linear in the sample count. Approximates tr(K H L H) / n^2.
    """
    Zu = _check_samples(Zu, "Zu", min_n=2)
    Zv = _check_samples(Zv, "Zv", min_n=2)
    n = Zu.shape[0]
    if Zv.shape[0] != n:
        raise InvalidInputError(f"sample counts differ: {n} vs {Zv.shape[0]}")
    Zu = Zu - Zu.mean(axis=0, keepdims=True)
    Zv = Zv - Zv.mean(axis=0, keepdims=True)
    total = 0.0
    block = max(1, (1 << 23) // max(1, Zu.shape[1]))
    for j in range(0, Zv.shape[1], block):
        C = Zu.T @ Zv[:, j : j + block]
        total += float(np.sum(C * C))
    return total / n ** 2


# -- permutation dependence test ------------------------------------------------


@dataclass
class HsicTest:
    """Permutation-null HSIC independence test result."""

    stat: float
    p_value: float
    null: np.ndarray = field(repr=False)

    def reject(self, alpha: float = 0.05) -> bool:
        return self.p_value <= alpha


def hsic_permutation_test(
    U, V, cfg_k: KernelConfig, cfg_l: KernelConfig, permutations: int = 200, seed: int = 0
) -> HsicTest:
    """Test U independent-of V by permuting the pairing of V against U.

    The p-value uses the add-one convention (observed statistic counted
    into its own null), so it is never exactly zero.
    """
    if permutations < 1:
        raise InvalidConfigError("need at least one permutation")
    U = _check_samples(U, "U", min_n=2)
    V = _check_samples(V, "V", min_n=2)
    if U.shape[0] != V.shape[0]:
        raise InvalidInputError(f"sample counts differ: {U.shape[0]} vs {V.shape[0]}")
    n = U.shape[0]
    K = gram(U, cfg_k)
    L = gram(V, cfg_l)
    kc = _center_values(K.values)
    scale = 1.0 / (n - 1) ** 2
    stat = float(np.sum(kc * L.values) * scale)
    gen = rng(seed, 0x9E12)
    null = np.empty(permutations, dtype=np.float64)
    for t in range(permutations):
        p = gen.permutation(n)
        null[t] = np.sum(kc * L.values[np.ix_(p, p)]) * scale
    p_value = (1.0 + np.count_nonzero(null >= stat)) / (permutations + 1.0)
    return HsicTest(stat=stat, p_value=float(p_value), null=null)


# -- fixture serialization --------------------------------------------------------

GRAM_MAGIC = b"QGRM"


def save_gram(K: GramMatrix, path) -> None:
    """Flat binary dump: 8-byte header (magic, n as u32 LE), f64 LE row-major values."""
    n = K.n
    with open(path, "wb") as f:
        f.write(GRAM_MAGIC)
        f.write(np.uint32(n).astype("<u4").tobytes())
        f.write(np.ascontiguousarray(K.values, dtype="<f8").tobytes())


def load_gram(path, centered: bool = False) -> GramMatrix:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != GRAM_MAGIC:
        raise InvalidInputError(f"{path}: not a gram fixture (bad magic)")
    n = int(np.frombuffer(blob, dtype="<u4", count=1, offset=4)[0])
    want = 8 + 8 * n * n
    if len(blob) != want:
        raise InvalidInputError(f"{path}: expected {want} bytes for n={n}, got {len(blob)}")
    values = np.frombuffer(blob, dtype="<f8", count=n * n, offset=8).reshape(n, n).copy()
    return GramMatrix(values=values, centered=centered)
