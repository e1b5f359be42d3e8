"""Named synthetic frame-sequence targets shipped as JSON data files.

Targets are Gaussian (mixtures) over F frames of d dims with AR(1)-style
inter-frame correlation, built as a Kronecker product: the full covariance is
R ⊗ B with R[i, j] = rho^|i-j| across frames and B the within-frame
covariance. Both factors are SPD, so the product is too.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from .experts import GaussianTarget

_PRESET_PACKAGE = "diffrelay.data"


def ar_gaussian_target(
    frame_means: np.ndarray, within_cov: np.ndarray, rho: float
) -> GaussianTarget:
    """Single-Gaussian target with per-frame means and AR(1) frame coupling."""
    frame_means = np.asarray(frame_means, dtype=np.float64)
    within_cov = np.asarray(within_cov, dtype=np.float64)
    F, d = frame_means.shape
    idx = np.arange(F)
    R = rho ** np.abs(idx[:, None] - idx[None, :])
    cov = np.kron(R, within_cov)
    return GaussianTarget(F, d, frame_means.reshape(1, -1), cov[None], np.array([1.0]))


def ar_mixture_target(
    frame_means_per_component: list[np.ndarray],
    within_cov: np.ndarray,
    rho: float,
    weights: np.ndarray,
) -> GaussianTarget:
    """Mixture of AR(1)-coupled components sharing one within-frame covariance."""
    comps = [ar_gaussian_target(m, within_cov, rho) for m in frame_means_per_component]
    F, d = comps[0].frames, comps[0].dims
    return GaussianTarget(
        F,
        d,
        np.concatenate([c.means for c in comps]),
        np.concatenate([c.covariances for c in comps]),
        np.asarray(weights, dtype=np.float64),
    )


def _builtin_targets() -> dict[str, GaussianTarget]:
    b2 = np.array([[0.8, 0.2], [0.2, 0.4]])
    moving_blob = ar_gaussian_target(
        np.array([[0.0, 0.0], [0.6, 0.3]]), b2, rho=0.8
    )

    drift8 = np.array([[0.5 + 0.1 * f, -0.15 * f] for f in range(8)])
    two_mode = ar_mixture_target(
        [drift8, -drift8],
        np.array([[0.5, 0.1], [0.1, 0.3]]),
        rho=0.85,
        weights=np.array([0.5, 0.5]),
    )

    b4 = np.array(
        [
            [1.0, 0.3, 0.0, 0.1],
            [0.3, 0.6, 0.1, 0.0],
            [0.0, 0.1, 0.4, 0.05],
            [0.1, 0.0, 0.05, 0.25],
        ]
    )
    still4 = ar_gaussian_target(
        np.array([[0.4, -0.2, 0.1, 0.3]] * 4), b4, rho=0.7
    )
    drift4 = ar_gaussian_target(
        np.array([[0.4 + 0.2 * f, -0.2, 0.1 * f, 0.3] for f in range(4)]),
        b4,
        rho=0.9,
    )

    drift16 = ar_gaussian_target(
        np.array([[0.3 + 0.05 * f, 0.2 - 0.04 * f] for f in range(16)]),
        np.array([[0.7, 0.25], [0.25, 0.2]]),
        rho=0.92,
    )
    return {
        "moving-blob-2f": moving_blob,
        "two-mode-8f": two_mode,
        "still-gauss-4f": still4,
        "drift-gauss-4f": drift4,
        "drift-gauss-16f": drift16,
    }


def write_builtin_presets(out_dir: str | Path) -> list[Path]:
    """Regenerate the shipped preset JSON files (used at packaging time)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, target in _builtin_targets().items():
        path = out / f"{name}.json"
        path.write_text(target.to_json())
        written.append(path)
    return written


def preset_names() -> list[str]:
    files = resources.files(_PRESET_PACKAGE)
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".json"))


def load_target(name: str) -> GaussianTarget:
    """Load a named preset target from the package data files."""
    try:
        doc = resources.files(_PRESET_PACKAGE).joinpath(f"{name}.json").read_text()
    except FileNotFoundError:
        raise KeyError(
            f"unknown preset {name!r}; available: {', '.join(preset_names())}"
        ) from None
    return GaussianTarget.from_json(doc)
