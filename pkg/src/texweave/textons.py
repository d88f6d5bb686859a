"""Texton-based texture evaluation: dictionaries, histograms, distances.

Pixels are embedded as Weber-compressed filter-bank response vectors,
clustered into K textons with k-means, and a texture is summarized by the
normalized histogram of nearest-texton assignments.  Histograms are
compared with the chi-squared distance.  Everything here is evaluation
only and runs outside the differentiation graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint as ckpt
from .filterbank import FilterBank, normalize_image, respond
from .losses import DEFAULT_GRAM_WEIGHTS, gram_loss, lm_extractor
from .ndtensor import Tensor


@dataclass(frozen=True)
class TextonDictionary:
    centers: np.ndarray          # [K, L] cluster centers in response space
    bank_fingerprint: str

    @property
    def k(self) -> int:
        return self.centers.shape[0]


@dataclass(frozen=True)
class TextonHistogram:
    bins: np.ndarray             # [K], nonnegative, sums to 1


def pixel_features(image: np.ndarray, bank: FilterBank) -> np.ndarray:
    """Per-pixel Weber-normalized response vectors, [H*W, L]."""
    stack = respond(bank, normalize_image(Tensor(np.asarray(image, dtype=np.float64))),
                    weber=True)
    maps = stack.maps.data
    return maps.reshape(-1, maps.shape[2])


def _pairwise_sq(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # |x - c|^2 expanded; clip tiny negatives from cancellation.
    d2 = (points * points).sum(axis=1)[:, None] \
        - 2.0 * points @ centers.T + (centers * centers).sum(axis=1)[None, :]
    return np.maximum(d2, 0.0)


def kmeans(points: np.ndarray, k: int, rng, max_iter: int = 100,
           tol: float = 1e-6) -> tuple[np.ndarray, list[float]]:
    """Lloyd's algorithm with k-means++ seeding.

    Stops when the largest center shift drops below ``tol`` or after
    ``max_iter`` sweeps; an emptied cluster is reseeded to the point
    farthest from its assigned center.  Returns (centers, per-iteration
    objective values).
    """
    n = points.shape[0]
    if n < k:
        raise ValueError(f"need at least {k} points, got {n}")

    centers = np.empty((k, points.shape[1]))
    centers[0] = points[int(rng.integers(n))]
    best_d2 = _pairwise_sq(points, centers[:1])[:, 0]
    for i in range(1, k):
        total = best_d2.sum()
        if total <= 0.0:
            raise ValueError(f"fewer than {k} distinct points")
        centers[i] = points[int(rng.choice(n, p=best_d2 / total))]
        best_d2 = np.minimum(best_d2, _pairwise_sq(points, centers[i:i + 1])[:, 0])

    objectives: list[float] = []
    for _ in range(max_iter):
        d2 = _pairwise_sq(points, centers)
        labels = d2.argmin(axis=1)
        objectives.append(float(d2[np.arange(n), labels].sum()))
        new_centers = centers.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new_centers[j] = points[members].mean(axis=0)
        empties = [j for j in range(k) if not (labels == j).any()]
        if empties:
            farthest = np.argsort(d2[np.arange(n), labels])[::-1]
            for rank, j in enumerate(empties):
                new_centers[j] = points[farthest[rank]]
        shift = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        if shift < tol:
            break
    return centers, objectives


def learn_textons(images, bank: FilterBank, k: int = 32, seed: int = 0,
                  max_iter: int = 100, tol: float = 1e-6,
                  return_objective: bool = False):
    """Cluster pooled pixel features of the images into a texton dictionary."""
    features = np.concatenate([pixel_features(img, bank) for img in images])
    if features.shape[0] < k:
        raise ValueError(f"{features.shape[0]} pixels cannot support {k} textons")
    centers, objectives = kmeans(features, k, np.random.default_rng(seed),
                                 max_iter=max_iter, tol=tol)
    dictionary = TextonDictionary(centers=centers,
                                  bank_fingerprint=bank.fingerprint())
    if return_objective:
        return dictionary, objectives
    return dictionary


def assign_textons(image: np.ndarray, dictionary: TextonDictionary,
                   bank: FilterBank) -> np.ndarray:
    """Nearest-texton index per pixel (Euclidean; ties go to the lowest index)."""
    if dictionary.bank_fingerprint != bank.fingerprint():
        raise ValueError("texton dictionary was built with a different filter bank")
    features = pixel_features(image, bank)
    return _pairwise_sq(features, dictionary.centers).argmin(axis=1)


def texton_histogram(image: np.ndarray, dictionary: TextonDictionary,
                     bank: FilterBank) -> TextonHistogram:
    """Normalized histogram of texton assignments over all pixels."""
    labels = assign_textons(image, dictionary, bank)
    counts = np.bincount(labels, minlength=dictionary.k).astype(np.float64)
    return TextonHistogram(bins=counts / counts.sum())


def _bins(h) -> np.ndarray:
    return h.bins if isinstance(h, TextonHistogram) else np.asarray(h, dtype=np.float64)


def histogram_distance(h1, h2) -> float:
    """Chi-squared distance 0.5 * sum (a-b)^2 / (a+b), guarded at empty bins."""
    a, b = _bins(h1), _bins(h2)
    if a.shape != b.shape:
        raise ValueError(f"histogram sizes differ: {a.shape} vs {b.shape}")
    return float(0.5 * ((a - b) ** 2 / (a + b + 1e-12)).sum())


def gram_distance(x: np.ndarray, x_hat: np.ndarray, bank: FilterBank) -> float:
    """Gram texture distance over kind-partitioned bank features (no gradients)."""
    return gram_loss(Tensor(np.asarray(x, dtype=np.float64)),
                     Tensor(np.asarray(x_hat, dtype=np.float64)),
                     lm_extractor(bank), DEFAULT_GRAM_WEIGHTS).item()


def save_dictionary(path: str, dictionary: TextonDictionary) -> None:
    header = {"kind": "texton-dictionary",
              "bank_fingerprint": dictionary.bank_fingerprint,
              "k": dictionary.k}
    ckpt.write_container(path, header, [("centers", dictionary.centers)])


def load_dictionary(path: str) -> TextonDictionary:
    header, arrays = ckpt.read_container(path)
    if header.get("kind") != "texton-dictionary":
        raise ckpt.CheckpointError(f"{path} holds {header.get('kind')!r}, "
                                   f"expected a texton-dictionary")
    return TextonDictionary(centers=arrays["centers"],
                            bank_fingerprint=header["bank_fingerprint"])
