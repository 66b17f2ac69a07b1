"""Synthetic paired (lesion cloud, mutation profile, cancer label) data.

Every sample draws three latent factors ``f ~ N(0, I)`` that drive both
domains:

* ``f[0]`` stretches the lesion along x and switches between the two halves
  of the type's signature genes,
* ``f[1]`` stretches the lesion along y and scales the total mutational load,
* ``f[2]`` sets the lobulation amplitude and boosts every third signature gene.

The cancer type picks the signature gene set and the load scale but leaves
the geometry distribution unchanged, so the label carries information the
cloud alone does not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

N_FACTORS = 3
AXIS_GAIN = 0.3
LOAD_GAIN = 0.35
SWITCH_GAIN = 1.2
LOBE_GAIN = 0.8
LOBE_MAX = 0.3
LOBE_COEFFS = (0.6, 0.5)


@dataclass(frozen=True)
class CancerLabel:
    index: int
    n_types: int

    def __post_init__(self):
        if not 0 <= self.index < self.n_types:
            raise ValueError(f"label {self.index} outside [0, {self.n_types})")

    @property
    def one_hot(self) -> np.ndarray:
        v = np.zeros(self.n_types, dtype=np.int64)
        v[self.index] = 1
        return v


@dataclass
class MutationProfile:
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if (self.counts < 0).any():
            raise ValueError("mutation counts must be nonnegative")

    @property
    def binary(self) -> np.ndarray:
        return (self.counts > 0).astype(np.int64)

    @property
    def tml(self) -> int:
        return int(self.counts.sum())


@dataclass
class PairedSample:
    sample_id: str
    cloud: np.ndarray
    profile: MutationProfile
    label: CancerLabel
    # generator factors; written to disk separately and never fed to a model
    latent_truth: np.ndarray = field(repr=False)


@dataclass
class SynthConfig:
    n_types: int = 4
    samples_per_type: int = 125
    vocab_size: int = 200
    points_per_cloud: int = 256
    signature_overlap: float = 0.0
    seed: int = 0
    signature_size: int | None = None
    tml_base: float = 80.0
    tml_growth: float = 1.5
    background_share: float = 0.03
    dispersion: float = 20.0
    tail_exponent: float = 1.5

    def __post_init__(self):
        if self.n_types < 2:
            raise ValueError("n_types must be >= 2")
        for name in ("samples_per_type", "vocab_size", "points_per_cloud"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.points_per_cloud < 8:
            raise ValueError("points_per_cloud must be >= 8")
        if not 0.0 <= self.signature_overlap <= 1.0:
            raise ValueError("signature_overlap must lie in [0, 1]")
        if self.tml_base <= 0 or self.tml_growth <= 0 or self.dispersion <= 0:
            raise ValueError("tml_base, tml_growth and dispersion must be positive")
        if not 0.0 <= self.background_share < 1.0:
            raise ValueError("background_share must lie in [0, 1)")
        if self.signature_size is None:
            self.signature_size = max(2, min(20, self.vocab_size // (2 * self.n_types)))
        if self.signature_size < 1:
            raise ValueError("signature_size must be positive")
        if self.vocab_size < self.n_types * self.signature_size:
            raise ValueError(
                f"vocab_size {self.vocab_size} cannot hold {self.n_types} signatures "
                f"of {self.signature_size} genes"
            )


@dataclass
class TypeParams:
    """Per-type generator parameters (gene-indexed arrays have length V)."""

    index: int
    tml_scale: float
    signature: np.ndarray  # weights over genes, sums to 1
    loadings: np.ndarray  # (V, N_FACTORS) log-rate loadings of signature genes
    background: np.ndarray  # power-law base rates, sums to 1
    background_share: float
    dispersion: float


@dataclass
class LesionShape:
    axes: np.ndarray
    lobulation: float = 0.0
    lobe_coeffs: tuple[float, float] = LOBE_COEFFS


def gene_names(vocab_size: int) -> list[str]:
    return [f"G{i:05d}" for i in range(vocab_size)]


def make_type_params(config: SynthConfig) -> list[TypeParams]:
    rng = np.random.default_rng([config.seed, 0])
    V, K, S = config.vocab_size, config.n_types, config.signature_size

    ranks = rng.permutation(V) + 1.0
    background = ranks ** -config.tail_exponent
    background /= background.sum()

    pool = list(rng.permutation(V))
    n_shared = int(round(config.signature_overlap * S))
    gene_sets: list[list[int]] = []
    for k in range(K):
        partner = k - 1 if k % 2 == 1 else None
        if partner is not None and n_shared:
            shared = gene_sets[partner][:n_shared]
            own = [pool.pop() for _ in range(S - n_shared)]
            gene_sets.append(shared + own)
        else:
            gene_sets.append([pool.pop() for _ in range(S)])

    position_weight = 1.0 / np.sqrt(np.arange(1, S + 1))
    position_weight /= position_weight.sum()
    # log-rate loadings by signature position, shared by all types
    pos_loadings = np.zeros((S, N_FACTORS))
    pos_loadings[:, 0] = SWITCH_GAIN * np.where(np.arange(S) % 2 == 0, 1.0, -1.0)
    pos_loadings[::3, 2] = LOBE_GAIN

    params = []
    for k, genes in enumerate(gene_sets):
        signature = np.zeros(V)
        signature[genes] = position_weight
        loadings = np.zeros((V, N_FACTORS))
        loadings[genes] = pos_loadings
        params.append(TypeParams(
            index=k,
            tml_scale=config.tml_base * config.tml_growth ** k,
            signature=signature,
            loadings=loadings,
            background=background.copy(),
            background_share=config.background_share,
            dispersion=config.dispersion,
        ))
    return params


def mutation_rates(tp: TypeParams, factors: np.ndarray) -> np.ndarray:
    """Expected count per gene given the sample's factors."""
    # normalise each gene's modulation to unit mean over the factor prior
    norm = np.exp(0.5 * (tp.loadings**2).sum(1))
    modulation = np.exp(tp.loadings @ factors) / norm
    mix = tp.background_share * tp.background + (1 - tp.background_share) * tp.signature * modulation
    return tp.tml_scale * math.exp(LOAD_GAIN * factors[1] - 0.5 * LOAD_GAIN**2) * mix


def expected_tml(tp: TypeParams) -> float:
    """Mean total mutational load of a type, averaged over the factor prior."""
    return tp.tml_scale * (tp.background_share + (1 - tp.background_share) * tp.signature.sum())


def nb_from_rates(rates: np.ndarray, dispersion: float) -> tuple[np.ndarray, np.ndarray]:
    """(r, p) under the ``mean = r p / (1 - p)`` convention."""
    r = np.full_like(rates, dispersion, dtype=float)
    return r, rates / (rates + r)


def gen_mutation_profile(tp: TypeParams, factors: np.ndarray, vocab_size: int,
                         rng: np.random.Generator) -> MutationProfile:
    if vocab_size < 1:
        raise ValueError("vocab_size must be >= 1")
    if len(tp.signature) != vocab_size:
        raise ValueError("type parameters do not match vocab_size")
    r, p = nb_from_rates(mutation_rates(tp, factors), tp.dispersion)
    return MutationProfile(sample_nb(r, p, rng))


def sample_nb(r: np.ndarray, p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Gamma-Poisson NB draw with ``P(0) = (1 - p)^r``."""
    r, p = np.broadcast_arrays(np.asarray(r, float), np.asarray(p, float))
    odds = np.divide(p, 1 - p, out=np.zeros_like(p), where=p < 1)
    lam = rng.gamma(shape=r, scale=1.0) * odds
    return rng.poisson(lam).astype(np.int64)


def lesion_shape(factors: np.ndarray) -> LesionShape:
    axes = np.array([math.exp(AXIS_GAIN * factors[0]), math.exp(AXIS_GAIN * factors[1]), 1.0])
    lobulation = LOBE_MAX / (1.0 + math.exp(-1.5 * factors[2]))
    return LesionShape(axes, lobulation)


def _lobe(u: np.ndarray, coeffs) -> tuple[np.ndarray, np.ndarray]:
    """Low-order harmonic pattern on unit vectors and its ambient gradient."""
    x, y, z = u.T
    c2, c3 = coeffs
    val = c2 * 0.5 * (3 * z**2 - 1) + c3 * (x**3 - 3 * x * y**2)
    grad = np.stack([
        c3 * (3 * x**2 - 3 * y**2),
        c3 * (-6 * x * y),
        c2 * 3 * z,
    ], axis=1)
    return val, grad


def surface_map(u: np.ndarray, shape: LesionShape) -> np.ndarray:
    """Map unit directions onto the lobulated ellipsoid surface."""
    val, _ = _lobe(u, shape.lobe_coeffs)
    rho = 1.0 + shape.lobulation * val
    return rho[:, None] * u * shape.axes


def _area_factor(u: np.ndarray, shape: LesionShape) -> np.ndarray:
    """Surface area element relative to the unit sphere at directions ``u``."""
    helper = np.where(np.abs(u[:, :1]) < 0.9, [[1.0, 0, 0]], [[0, 1.0, 0]])
    t1 = np.cross(u, helper)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(u, t1)
    val, grad = _lobe(u, shape.lobe_coeffs)
    rho = 1.0 + shape.lobulation * val
    a = shape.axes

    def tangent(t):
        drho = shape.lobulation * (grad * t).sum(1)
        return drho[:, None] * u * a + rho[:, None] * t * a

    return np.linalg.norm(np.cross(tangent(t1), tangent(t2)), axis=1)


def _unit_vectors(n: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def gen_lesion(shape: LesionShape, n_points: int, rng: np.random.Generator) -> np.ndarray:
    """Area-uniform sample of ``n_points`` on the lesion surface (origin-centred).

    Directions are drawn uniformly on the sphere and accepted with probability
    proportional to the local area stretch of the surface map.
    """
    if n_points < 8:
        raise ValueError("n_points must be >= 8")
    bound = 1.05 * _area_factor(_unit_vectors(20_000, rng), shape).max()
    out, have = [], 0
    while have < n_points:
        u = _unit_vectors(2 * n_points, rng)
        keep = rng.random(len(u)) * bound < _area_factor(u, shape)
        out.append(u[keep])
        have += int(keep.sum())
    u = np.concatenate(out)[:n_points]
    return surface_map(u, shape)


def gen_dataset(config: SynthConfig) -> list[PairedSample]:
    """``n_types * samples_per_type`` samples, identical for identical configs."""
    types = make_type_params(config)
    samples = []
    for k, tp in enumerate(types):
        for j in range(config.samples_per_type):
            i = k * config.samples_per_type + j
            rng = np.random.default_rng([config.seed, 1, i])
            factors = rng.standard_normal(N_FACTORS)
            cloud = gen_lesion(lesion_shape(factors), config.points_per_cloud, rng)
            profile = gen_mutation_profile(tp, factors, config.vocab_size, rng)
            samples.append(PairedSample(
                sample_id=f"S{i:06d}",
                cloud=cloud,
                profile=profile,
                label=CancerLabel(k, config.n_types),
                latent_truth=factors,
            ))
    return samples


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + 1e-9))


def split_sizes(n: int, ratios=(0.70, 0.15, 0.15)) -> tuple[int, int, int]:
    """Val and test sizes are ``n * ratio`` rounded half up; train takes the rest."""
    n_val, n_test = _round_half_up(n * ratios[1]), _round_half_up(n * ratios[2])
    return n - n_val - n_test, n_val, n_test


def split_dataset(samples: list[PairedSample], ratios=(0.70, 0.15, 0.15), seed: int = 0):
    """Stratified (train, val, test) split by cancer label."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError("ratios must be three nonnegative numbers summing to 1")
    by_type: dict[int, list[PairedSample]] = {}
    for s in samples:
        by_type.setdefault(s.label.index, []).append(s)
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for k in sorted(by_type):
        group = by_type[k]
        if len(group) < 3:
            raise ValueError(f"type {k} has {len(group)} samples; stratified split needs >= 3")
        order = rng.permutation(len(group))
        n_train, n_val, _ = split_sizes(len(group), ratios)
        train += [group[i] for i in order[:n_train]]
        val += [group[i] for i in order[n_train:n_train + n_val]]
        test += [group[i] for i in order[n_train + n_val:]]
    return train, val, test
