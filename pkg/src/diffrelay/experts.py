"""Closed-form epsilon predictors over Gaussian-mixture frame targets.

Each "expert" is a denoiser that is analytically exact for one target
distribution over F frames of d dims each (D = F*d total). Instead of
trained networks we use posterior means under a known Gaussian mixture, so
a deliberately mis-specified target turns "skilled at spatial detail" or
"skilled at temporal coherence" into a controlled, measurable bias:

  * the spatial expert keeps every within-frame covariance block of a
    reference target but zeroes all inter-frame blocks,
  * the temporal expert keeps inter-frame blocks but isotropically blurs
    the within-frame blocks,
  * the control expert collapses the mixture to its moment-matched Gaussian.

All evaluation is vectorized over a leading batch axis: states have shape
(F, d) or (B, F, d).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .schedule import NoiseSchedule

# Eigenvalue floor used when repairing covariance blocks after surgery.
_PD_FLOOR = 1e-8

ROLES = ("control", "spatial", "temporal", "exact")


@dataclass(frozen=True)
class GaussianTarget:
    """A Gaussian mixture over flattened frame sequences.

    Attributes:
        frames: number of frames F.
        dims: dims per frame d; total dimensionality is D = F*d.
        means: component means, shape (K, D).
        covariances: component covariances, shape (K, D, D), each SPD.
        weights: mixture weights, shape (K,), summing to 1.
    """

    frames: int
    dims: int
    means: np.ndarray
    covariances: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        D = self.frames * self.dims
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        covs = np.asarray(self.covariances, dtype=np.float64)
        if covs.ndim == 2:
            covs = covs[None]
        weights = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)
        object.__setattr__(self, "weights", weights)
        if means.shape[1] != D:
            raise ValueError(f"means have dim {means.shape[1]}, expected {D}")
        if covs.shape[1:] != (D, D):
            raise ValueError(f"covariances have shape {covs.shape}, expected (K,{D},{D})")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        for k, cov in enumerate(covs):
            if np.max(np.abs(cov - cov.T)) > 1e-12:
                raise ValueError(f"component {k} covariance not symmetric")
            if np.linalg.eigvalsh(cov).min() <= 0:
                raise ValueError(f"component {k} covariance not positive definite")

    @property
    def total_dim(self) -> int:
        return self.frames * self.dims

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def moment_match(self) -> tuple[np.ndarray, np.ndarray]:
        """Overall mean and covariance of the mixture (law of total covariance)."""
        mean = self.weights @ self.means
        cov = np.zeros((self.total_dim, self.total_dim))
        for w, mu, sig in zip(self.weights, self.means, self.covariances):
            dm = mu - mean
            cov += w * (sig + np.outer(dm, dm))
        return mean, cov

    def frame_marginal_moments(self, f: int) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of frame ``f``'s marginal distribution."""
        mean, cov = self.moment_match()
        sl = slice(f * self.dims, (f + 1) * self.dims)
        return mean[sl], cov[sl, sl]

    def adjacent_cov_block(self, f: int) -> np.ndarray:
        """Cross-covariance block between frames ``f`` and ``f + 1``."""
        _, cov = self.moment_match()
        a = slice(f * self.dims, (f + 1) * self.dims)
        b = slice((f + 1) * self.dims, (f + 2) * self.dims)
        return cov[a, b]

    def frame_slice(self, start: int, stop: int) -> "GaussianTarget":
        """Marginal target over the frame window ``[start, stop)``."""
        if not 0 <= start < stop <= self.frames:
            raise ValueError(f"bad frame window [{start}, {stop})")
        sl = slice(start * self.dims, stop * self.dims)
        return GaussianTarget(
            frames=stop - start,
            dims=self.dims,
            means=self.means[:, sl],
            covariances=self.covariances[:, sl, sl],
            weights=self.weights,
        )

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` samples, returned with shape (n, F, d)."""
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        out = np.empty((n, self.total_dim))
        for k in range(self.n_components):
            idx = np.flatnonzero(comp == k)
            if len(idx):
                out[idx] = rng.multivariate_normal(
                    self.means[k], self.covariances[k], size=len(idx),
                    method="cholesky",
                )
        return out.reshape(n, self.frames, self.dims)

    def to_json(self) -> str:
        return json.dumps(
            {
                "frames": self.frames,
                "dims": self.dims,
                "means": self.means.tolist(),
                "covariances": self.covariances.tolist(),
                "weights": self.weights.tolist(),
            }
        )

    @staticmethod
    def from_json(doc: str) -> "GaussianTarget":
        d = json.loads(doc)
        return GaussianTarget(
            frames=d["frames"],
            dims=d["dims"],
            means=np.array(d["means"]),
            covariances=np.array(d["covariances"]),
            weights=np.array(d["weights"]),
        )


@dataclass(frozen=True)
class ExpertSpec:
    """An epsilon predictor: a role, a schedule, and the target it is exact for."""

    role: str
    schedule: NoiseSchedule
    target: GaussianTarget
    label: str = ""

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")

    def with_target(self, target: GaussianTarget) -> "ExpertSpec":
        return ExpertSpec(self.role, self.schedule, target, self.label)


def _flatten_states(x: np.ndarray, target: GaussianTarget) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-2:] != (target.frames, target.dims):
        raise ValueError(
            f"state shape {x.shape} incompatible with target "
            f"({target.frames}, {target.dims})"
        )
    return x.reshape(-1, target.total_dim)


def posterior_mean_x0(
    target: GaussianTarget, x_flat: np.ndarray, abar: float
) -> np.ndarray:
    """E[x0 | x_t] under x_t = sqrt(abar) x0 + sqrt(1-abar) eps, x0 ~ target.

    For a single component N(mu, Sigma) the posterior mean is
        mu + sqrt(abar) Sigma (abar Sigma + (1-abar) I)^-1 (x - sqrt(abar) mu)
    and for mixtures the component posterior means are averaged with
    responsibilities taken from the components' marginal likelihoods of x_t.

    ``x_flat`` has shape (B, D); returns shape (B, D).
    """
    D = target.total_dim
    sqrt_abar = np.sqrt(abar)
    K = target.n_components
    eye = np.eye(D)

    post_means = np.empty((K, len(x_flat), D))
    log_liks = np.empty((K, len(x_flat)))
    for k in range(K):
        sigma = target.covariances[k]
        marg_cov = abar * sigma + (1.0 - abar) * eye
        factor = cho_factor(marg_cov, lower=True)
        resid = x_flat - sqrt_abar * target.means[k]  # (B, D)
        solved = cho_solve(factor, resid.T).T  # marg_cov^-1 resid
        post_means[k] = target.means[k] + sqrt_abar * (solved @ sigma.T)
        logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
        log_liks[k] = -0.5 * (np.einsum("bi,bi->b", resid, solved) + logdet)

    if K == 1:
        return post_means[0]
    log_resp = np.log(target.weights)[:, None] + log_liks
    log_resp -= log_resp.max(axis=0, keepdims=True)
    resp = np.exp(log_resp)
    resp /= resp.sum(axis=0, keepdims=True)
    assert np.all(np.abs(resp.sum(axis=0) - 1.0) < 1e-12)
    return np.einsum("kb,kbd->bd", resp, post_means)


def exact_epsilon(expert: ExpertSpec, x_t: np.ndarray, t: int) -> np.ndarray:
    """The expert's noise prediction at timestep ``t`` of its own schedule.

    Inverts the forward process through the exact posterior mean of x0:
        eps_hat = (x_t - sqrt(abar_t) E[x0 | x_t]) / sqrt(1 - abar_t).
    """
    if not 1 <= t <= expert.schedule.total_steps:
        raise ValueError(f"timestep {t} outside expert schedule range")
    abar = expert.schedule.alpha_bar(t)
    flat = _flatten_states(x_t, expert.target)
    x0_mean = posterior_mean_x0(expert.target, flat, abar)
    eps = (flat - np.sqrt(abar) * x0_mean) / np.sqrt(1.0 - abar)
    return eps.reshape(np.asarray(x_t).shape)


def _pd_repair(cov: np.ndarray) -> np.ndarray:
    """Symmetrize and floor eigenvalues so surgery never leaves a non-SPD block."""
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() < _PD_FLOOR:
        vals = np.maximum(vals, _PD_FLOOR)
        cov = (vecs * vals) @ vecs.T
        cov = 0.5 * (cov + cov.T)
    return cov


def make_spatial_expert(
    reference: GaussianTarget, schedule: NoiseSchedule, label: str = "spatial"
) -> ExpertSpec:
    """Expert exact for the reference's per-frame marginals with no frame coupling.

    Every inter-frame covariance block is zeroed per component; within-frame
    blocks are kept exactly.
    """
    d, F = reference.dims, reference.frames
    covs = np.zeros_like(reference.covariances)
    for k, cov in enumerate(reference.covariances):
        for f in range(F):
            sl = slice(f * d, (f + 1) * d)
            covs[k][sl, sl] = cov[sl, sl]
    target = GaussianTarget(F, d, reference.means, covs, reference.weights)
    return ExpertSpec("spatial", schedule, target, label)


def make_temporal_expert(
    reference: GaussianTarget,
    schedule: NoiseSchedule,
    blur: float,
    label: str = "temporal",
) -> ExpertSpec:
    """Expert that keeps inter-frame blocks but spatially coarsens each frame.

    Each within-frame block B becomes (1-blur)*B + blur*tr(B)/d * I, a
    trace-preserving isotropization, followed by PD repair.
    """
    if not 0.0 <= blur <= 1.0:
        raise ValueError(f"blur must be in [0, 1], got {blur}")
    d, F = reference.dims, reference.frames
    covs = reference.covariances.copy()
    for k in range(reference.n_components):
        for f in range(F):
            sl = slice(f * d, (f + 1) * d)
            block = covs[k][sl, sl]
            iso = (np.trace(block) / d) * np.eye(d)
            covs[k][sl, sl] = (1.0 - blur) * block + blur * iso
        covs[k] = _pd_repair(covs[k])
    target = GaussianTarget(F, d, reference.means, covs, reference.weights)
    return ExpertSpec("temporal", schedule, target, label)


def make_control_expert(
    reference: GaussianTarget, schedule: NoiseSchedule, label: str = "control"
) -> ExpertSpec:
    """Expert exact for the single moment-matched Gaussian of the reference."""
    mean, cov = reference.moment_match()
    target = GaussianTarget(
        reference.frames, reference.dims, mean[None], _pd_repair(cov)[None],
        np.array([1.0]),
    )
    return ExpertSpec("control", schedule, target, label)
