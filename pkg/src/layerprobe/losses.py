"""Desk-scale implementation of the contrastive pretraining objective.

Covers Gumbel-softmax code probabilities, product quantization over
codebook groups, the temperature-scaled contrastive loss over cosine
similarities, the codebook diversity penalty, and their weighted sum.
Everything is pure numpy in double precision; analytic gradients are
provided for the pieces that the self-check verifies against central
finite differences.  Nothing here trains a model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidDistribution, NonFiniteInput, ZeroVector

DEFAULT_DIVERSITY_WEIGHT = 0.1


def _require_finite(name: str, *arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteInput(f"{name}: non-finite input")


@dataclass(frozen=True)
class Codebook:
    """Product quantizer state.

    `entries` has shape (groups, entries_per_group, entry_dim); `logit_weights`
    (groups, entries_per_group, input_dim) maps an input vector to per-group
    selection logits; `projection` (output_dim, groups * entry_dim) maps the
    concatenated selected entries to the output space.
    """

    entries: np.ndarray
    logit_weights: np.ndarray
    projection: np.ndarray

    def __post_init__(self):
        if self.entries.ndim != 3:
            raise ValueError(f"entries must be (G, V, d_e), got shape {self.entries.shape}")
        g, v, d_e = self.entries.shape
        if g < 1 or v < 2:
            raise ValueError(f"need G >= 1 and V >= 2, got G={g}, V={v}")
        if self.logit_weights.shape[:2] != (g, v):
            raise ValueError("logit_weights must match entries in (G, V)")
        if self.projection.shape[1] != g * d_e:
            raise ValueError(
                f"projection expects input dim {g * d_e}, got {self.projection.shape[1]}"
            )
        _require_finite("codebook", self.entries, self.logit_weights, self.projection)

    @property
    def num_groups(self) -> int:
        return self.entries.shape[0]

    @property
    def entries_per_group(self) -> int:
        return self.entries.shape[1]


@dataclass
class GumbelConfig:
    """Selection temperature plus the explicit seeded noise source."""

    temperature: float
    rng: np.random.Generator

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    def draw_uniform(self, shape: tuple[int, ...]) -> np.ndarray:
        # open interval (0, 1): 0 would send the Gumbel transform to infinity
        return self.rng.uniform(np.nextafter(0.0, 1.0), 1.0, size=shape)


def gumbel_noise(u: np.ndarray | float) -> np.ndarray | float:
    """Gumbel(0, 1) noise -log(-log(u)) for u in the open interval (0, 1)."""
    arr = np.asarray(u, dtype=np.float64)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DomainError("u must lie strictly inside (0, 1)")
    out = -np.log(-np.log(arr))
    return float(out) if np.isscalar(u) else out


def gumbel_code_probs(logits: np.ndarray, noise: np.ndarray, temperature: float) -> np.ndarray:
    """Softmax of (logits + noise) / temperature over one codebook group."""
    logits = np.asarray(logits, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    _require_finite("gumbel_code_probs", logits, noise)
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    scaled = (logits + noise) / temperature
    scaled -= scaled.max()
    expd = np.exp(scaled)
    return expd / expd.sum()


def quantize(
    z: np.ndarray,
    codebook: Codebook,
    config: GumbelConfig,
    hard: bool = True,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """Selects one entry per group from noisy logits, concatenates, projects.

    Hard mode picks the argmax entry of each group's perturbed logits; soft
    mode uses the probability-weighted mixture.  `noise` overrides the
    config's sampler with explicit Gumbel noise of shape (G, V).
    """
    z = np.asarray(z, dtype=np.float64)
    _require_finite("quantize", z)
    g, v, _ = codebook.entries.shape
    logits = np.einsum("gvd,d->gv", codebook.logit_weights, z)
    if noise is None:
        noise = gumbel_noise(config.draw_uniform((g, v)))
    probs = np.stack(
        [gumbel_code_probs(logits[i], noise[i], config.temperature) for i in range(g)]
    )
    if hard:
        selected = codebook.entries[np.arange(g), probs.argmax(axis=1)]
    else:
        selected = np.einsum("gv,gvd->gd", probs, codebook.entries)
    return codebook.projection @ selected.reshape(-1)


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """a . b / (|a| |b|), clipped into [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _require_finite("cosine_sim", a, b)
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroVector("cosine similarity undefined for zero-norm input")
    return float(np.clip(a @ b / (norm_a * norm_b), -1.0, 1.0))


def _candidate_sims(context: np.ndarray, positive: np.ndarray, distractors) -> np.ndarray:
    return np.array([cosine_sim(context, positive)] + [cosine_sim(context, d) for d in distractors])


def contrastive_loss(
    context: np.ndarray,
    positive: np.ndarray,
    distractors: list[np.ndarray],
    temperature: float,
) -> float:
    """Negative log softmax weight of the positive among all candidates.

    Exactly 0 when there are no distractors; log K when all K candidates
    are equally similar to the context.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    sims = _candidate_sims(context, positive, distractors) / temperature
    m = sims.max()
    return float(m + np.log(np.exp(sims - m).sum()) - sims[0])


def contrastive_loss_grad(
    context: np.ndarray,
    positive: np.ndarray,
    distractors: list[np.ndarray],
    temperature: float,
) -> np.ndarray:
    """Analytic gradient of contrastive_loss with respect to the context vector."""
    context = np.asarray(context, dtype=np.float64)
    candidates = [np.asarray(positive, dtype=np.float64)] + [
        np.asarray(d, dtype=np.float64) for d in distractors
    ]
    sims = _candidate_sims(context, positive, distractors)
    scaled = sims / temperature
    scaled -= scaled.max()
    weights = np.exp(scaled)
    weights /= weights.sum()

    norm_c = np.linalg.norm(context)
    unit_c = context / norm_c
    grad = np.zeros_like(context)
    for j, candidate in enumerate(candidates):
        dloss_dsim = (weights[j] - (1.0 if j == 0 else 0.0)) / temperature
        dsim_dc = (candidate / np.linalg.norm(candidate) - sims[j] * unit_c) / norm_c
        grad += dloss_dsim * dsim_dc
    return grad


def _validate_distribution(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim == 1:
        p = p[None, :]
    if p.ndim != 2:
        raise InvalidDistribution(f"expected (G, V) rows, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise InvalidDistribution("non-finite probabilities")
    if np.any(p < 0.0):
        raise InvalidDistribution("negative probabilities")
    sums = p.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise InvalidDistribution(f"rows must sum to 1 within 1e-6, got sums {sums}")
    return p


def diversity_loss(p_hat: np.ndarray) -> float:
    """Mean negative entropy of the per-group code distributions.

    Equals (1 / (G V)) sum of p log p with 0 log 0 taken as 0; lies in
    [-log(V) / V, 0], minimized at uniform rows and 0 at one-hot rows.
    """
    p = _validate_distribution(p_hat)
    g, v = p.shape
    plogp = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return float(plogp.sum() / (g * v))


def diversity_loss_grad(p_hat: np.ndarray) -> np.ndarray:
    """Analytic gradient of diversity_loss at interior points (all p > 0)."""
    p = _validate_distribution(p_hat)
    g, v = p.shape
    if np.any(p <= 0.0):
        raise DomainError("gradient defined only for strictly positive probabilities")
    return (np.log(p) + 1.0) / (g * v)


def total_loss(
    contrastive: float, diversity: float, diversity_weight: float = DEFAULT_DIVERSITY_WEIGHT
) -> float:
    """Weighted sum of the two objectives."""
    if diversity_weight < 0:
        raise ValueError(f"diversity weight must be nonnegative, got {diversity_weight}")
    _require_finite("total_loss", np.array([contrastive, diversity]))
    return float(contrastive + diversity_weight * diversity)


# self-check suite (used by the `losses-selfcheck` CLI command and tests)


def central_difference_gradient(func, x: np.ndarray, step: float) -> np.ndarray:
    """Central finite differences of a scalar function, one coordinate at a time."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = grad.reshape(-1)
    for i in range(x.size):
        bump = np.zeros_like(x, dtype=np.float64).reshape(-1)
        bump[i] = step
        bump = bump.reshape(x.shape)
        flat[i] = (func(x + bump) - func(x - bump)) / (2.0 * step)
    return grad


def _relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def run_selfcheck(seed: int = 0, gradient_points: int = 100) -> list[tuple[str, bool, str]]:
    """Normalization, bound, extremum, and gradient checks; returns (name, ok, detail)."""
    rng = np.random.default_rng(seed)
    results: list[tuple[str, bool, str]] = []

    worst = 0.0
    for _ in range(200):
        v = int(rng.integers(2, 64))
        p = gumbel_code_probs(
            rng.normal(size=v) * 3, gumbel_noise(rng.uniform(1e-12, 1 - 1e-12, v)),
            float(rng.uniform(0.05, 5.0)),
        )
        worst = max(worst, abs(p.sum() - 1.0), -min(p.min(), 0.0))
    results.append(("code-probs normalization (1e-9)", worst <= 1e-9, f"worst {worst:.2e}"))

    ok = True
    for _ in range(50):
        logits = rng.normal(size=8)
        noise = gumbel_noise(rng.uniform(1e-6, 1 - 1e-6, 8))
        p = gumbel_code_probs(logits, noise, 1e-4)
        ok &= abs(p.max() - 1.0) <= 1e-3 and p.argmax() == (logits + noise).argmax()
    results.append(("code-probs one-hot limit at tau 1e-4", ok, ""))

    worst = 0.0
    for _ in range(50):
        logits = rng.normal(size=12)
        noise = gumbel_noise(rng.uniform(1e-6, 1 - 1e-6, 12))
        tau = float(rng.uniform(0.1, 3.0))
        shift = gumbel_code_probs(logits + rng.normal(), noise, tau)
        base = gumbel_code_probs(logits, noise, tau)
        worst = max(worst, float(np.abs(shift - base).max()))
    results.append(("code-probs shift invariance", worst <= 1e-12, f"worst {worst:.2e}"))

    ok = True
    for _ in range(100):
        g, v = int(rng.integers(1, 4)), int(rng.integers(2, 16))
        p = rng.dirichlet(np.ones(v), size=g)
        value = diversity_loss(p)
        ok &= -np.log(v) / v - 1e-12 <= value <= 1e-12
    uniform_ok = abs(diversity_loss(np.full((2, 4), 0.25)) + np.log(4) / 4) <= 1e-12
    onehot = np.zeros((2, 4))
    onehot[:, 0] = 1.0
    onehot_ok = diversity_loss(onehot) == 0.0
    results.append(("diversity bounds and extrema", ok and uniform_ok and onehot_ok, ""))

    empty_ok = contrastive_loss(np.array([1.0, 0.0]), np.array([1.0, 0.0]), [], 0.5) == 0.0
    sym_ok = True
    for k in (2, 5, 11):
        # K candidates identical to each other: every similarity ties, loss = log K
        base = rng.normal(size=4)
        loss = contrastive_loss(base, base.copy(), [base.copy() for _ in range(k - 1)], 0.7)
        sym_ok &= abs(loss - np.log(k)) <= 1e-12
    results.append(("contrastive empty-distractor zero and log-K symmetry", empty_ok and sym_ok, ""))

    worst = 0.0
    for _ in range(gradient_points):
        dim = int(rng.integers(2, 8))
        c = rng.normal(size=dim) + 0.1
        q = rng.normal(size=dim) + 0.1
        ds = [rng.normal(size=dim) + 0.1 for _ in range(int(rng.integers(1, 5)))]
        tau = float(rng.uniform(0.2, 2.0))
        analytic = contrastive_loss_grad(c, q, ds, tau)
        numeric = central_difference_gradient(
            lambda x: contrastive_loss(x, q, ds, tau), c, 1e-6
        )
        worst = max(worst, _relative_error(analytic, numeric))
    results.append(
        (f"contrastive gradient vs central differences ({gradient_points} pts)",
         worst < 1e-4, f"worst rel err {worst:.2e}")
    )

    worst = 0.0
    for _ in range(gradient_points):
        g, v = int(rng.integers(1, 4)), int(rng.integers(2, 8))
        p = rng.dirichlet(np.full(v, 5.0), size=g)  # concentrated away from the simplex boundary
        analytic = diversity_loss_grad(p)
        numeric = central_difference_gradient(diversity_loss, p, 1e-7)
        worst = max(worst, _relative_error(analytic, numeric))
    results.append(
        (f"diversity gradient vs central differences ({gradient_points} pts)",
         worst < 1e-4, f"worst rel err {worst:.2e}")
    )

    ok = True
    for _ in range(50):
        g, v, d_e, d_z = (int(rng.integers(1, 4)), int(rng.integers(2, 9)),
                          int(rng.integers(2, 6)), int(rng.integers(2, 6)))
        codebook = Codebook(
            entries=rng.normal(size=(g, v, d_e)),
            logit_weights=rng.normal(size=(g, v, d_z)),
            projection=rng.normal(size=(int(rng.integers(2, 6)), g * d_e)),
        )
        z = rng.normal(size=d_z)
        noise = gumbel_noise(rng.uniform(1e-6, 1 - 1e-6, (g, v)))
        config = GumbelConfig(temperature=0.5, rng=np.random.default_rng(0))
        q = quantize(z, codebook, config, hard=True, noise=noise)
        # brute force: scan every entry per group for the best perturbed logit
        logits = np.einsum("gvd,d->gv", codebook.logit_weights, z) + noise
        picked = []
        for gi in range(g):
            best, best_value = 0, -np.inf
            for vi in range(v):
                if logits[gi, vi] > best_value:
                    best, best_value = vi, logits[gi, vi]
            picked.append(codebook.entries[gi, best])
        expected = codebook.projection @ np.concatenate(picked)
        ok &= np.allclose(q, expected, atol=1e-12)
    results.append(("hard quantize equals brute-force argmax", ok, ""))

    return results
