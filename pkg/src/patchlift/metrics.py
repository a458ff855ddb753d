"""Pixel, feature-distance, and semantic-similarity metrics.

Set distances (the FID/KID analogs) use features from a small convolutional
classifier trained to separate the procedural pattern families; any fixed,
expressive feature map yields a valid Frechet/MMD comparison at this scale.
"""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np
import scipy.linalg
import torch
import torch.nn.functional as F
from torch import nn

from patchlift import __version__
from patchlift.errors import ConfigError, ContractError, DataError
from patchlift.models import SemanticEncoder, encode_semantics
from patchlift.synthdata.patterns import make_asset


def mse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))


def psnr(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; inf for identical inputs."""
    err = mse(a, b)
    if err == 0:
        return float("inf")
    return float(10.0 * np.log10(data_range**2 / err))


# ---------------------------------------------------------------------------
# Frechet distance between Gaussian fits
# ---------------------------------------------------------------------------

def frechet_distance(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two feature sets.

    Sets smaller than the feature dimension get a warning and a +1e-6
    diagonal on both covariances to keep the matrix square root stable.
    """
    a = np.asarray(feats_a, dtype=np.float64)
    b = np.asarray(feats_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ContractError(f"feature sets must be (n, d) with equal d: {a.shape} vs {b.shape}")
    if len(a) == 0 or len(b) == 0:
        raise ContractError("feature sets must be non-empty")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False) if len(a) > 1 else np.zeros((a.shape[1], a.shape[1]))
    cov_b = np.cov(b, rowvar=False) if len(b) > 1 else np.zeros((b.shape[1], b.shape[1]))
    cov_a = np.atleast_2d(cov_a)
    cov_b = np.atleast_2d(cov_b)
    dim = a.shape[1]
    if min(len(a), len(b)) < dim:
        warnings.warn(
            f"feature set smaller than dimension ({min(len(a), len(b))} < {dim}); "
            "regularizing covariances",
            stacklevel=2,
        )
        cov_a = cov_a + 1e-6 * np.eye(dim)
        cov_b = cov_b + 1e-6 * np.eye(dim)
    diff = mu_a - mu_b
    covmean, _ = scipy.linalg.sqrtm(cov_a @ cov_b, disp=False)
    if not np.isfinite(covmean).all():
        offset = 1e-6 * np.eye(dim)
        covmean, _ = scipy.linalg.sqrtm((cov_a + offset) @ (cov_b + offset), disp=False)
    covmean = np.real(covmean)
    return float(diff @ diff + np.trace(cov_a + cov_b - 2.0 * covmean))


# ---------------------------------------------------------------------------
# Unbiased polynomial-kernel MMD (the KID analog)
# ---------------------------------------------------------------------------

def _poly_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = x.shape[1]
    return (x @ y.T / d + 1.0) ** 3


def _mmd2_unbiased(x: np.ndarray, y: np.ndarray) -> float:
    n, m = len(x), len(y)
    if n < 2 or m < 2:
        raise ContractError("unbiased MMD needs at least two samples per set")
    k_xx = _poly_kernel(x, x)
    k_yy = _poly_kernel(y, y)
    k_xy = _poly_kernel(x, y)
    sum_xx = (k_xx.sum() - np.trace(k_xx)) / (n * (n - 1))
    sum_yy = (k_yy.sum() - np.trace(k_yy)) / (m * (m - 1))
    return float(sum_xx + sum_yy - 2.0 * k_xy.mean())


def kid_distance(feats_a: np.ndarray, feats_b: np.ndarray, block_size: int = 50) -> float:
    """Block-averaged unbiased cubic-kernel MMD^2; may dip below zero."""
    a = np.asarray(feats_a, dtype=np.float64)
    b = np.asarray(feats_b, dtype=np.float64)
    n = min(len(a), len(b))
    if n < 2:
        raise ContractError("KID needs at least two samples per set")
    n_blocks = max(1, int(np.ceil(n / block_size)))
    bounds = np.linspace(0, n, n_blocks + 1).astype(int)
    estimates = [
        _mmd2_unbiased(a[lo:hi], b[lo:hi]) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi - lo >= 2
    ]
    return float(np.mean(estimates))


# ---------------------------------------------------------------------------
# Pattern-family feature extractor
# ---------------------------------------------------------------------------

class PatternFeatureNet(nn.Module):
    """Small conv classifier over pattern families; its pooled activations
    are the feature space for the set distances."""

    def __init__(self, n_classes: int, width: int = 16):
        super().__init__()
        self.width = width
        self.n_classes = n_classes
        self.conv1 = nn.Conv2d(3, width, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(width, 2 * width, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(2 * width, 4 * width, 3, stride=2, padding=1)
        self.classifier = nn.Linear(4 * width, n_classes)

    @property
    def feature_dim(self) -> int:
        return 4 * self.width

    def features(self, x: torch.Tensor) -> torch.Tensor:
        h = F.silu(self.conv1(x))
        h = F.silu(self.conv2(h))
        h = F.silu(self.conv3(h))
        return h.mean(dim=(2, 3))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.classifier(self.features(x))


def train_feature_extractor(
    image_size: int,
    families: tuple[str, ...],
    seed: int = 0,
    epochs: int = 3,
    per_family: int = 256,
) -> tuple[PatternFeatureNet, float]:
    """Train the family classifier on freshly drawn patterns.

    Returns (net, held-out accuracy). Deterministic in all arguments.
    """
    if len(families) < 2:
        raise ConfigError("feature extractor training needs at least two families")
    torch.manual_seed(seed)
    net = PatternFeatureNet(n_classes=len(families))

    def bank(offset: int, count: int) -> tuple[torch.Tensor, torch.Tensor]:
        images, labels = [], []
        for label, family in enumerate(families):
            for i in range(count):
                asset = make_asset(family, image_size, seed=offset + i)
                images.append(np.moveaxis(asset.pixels, -1, 0))
                labels.append(label)
        return torch.from_numpy(np.stack(images)), torch.tensor(labels)

    train_x, train_y = bank(offset=100_000, count=per_family)
    val_x, val_y = bank(offset=500_000, count=max(32, per_family // 4))

    optimizer = torch.optim.Adam(net.parameters(), lr=2e-3)
    gen = torch.Generator().manual_seed(seed)
    batch = 64
    for _ in range(epochs):
        perm = torch.randperm(len(train_x), generator=gen)
        for k in range(0, len(train_x), batch):
            idx = perm[k : k + batch]
            optimizer.zero_grad(set_to_none=True)
            loss = F.cross_entropy(net(train_x[idx]), train_y[idx])
            loss.backward()
            optimizer.step()

    net.eval()
    with torch.no_grad():
        pred = net(val_x).argmax(dim=1)
    accuracy = float((pred == val_y).float().mean())
    return net, accuracy


def save_feature_net(path: str | Path, net: PatternFeatureNet, accuracy: float,
                     families: tuple[str, ...]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in net.state_dict().items()}
    meta = {
        "format": 1,
        "package_version": __version__,
        "width": net.width,
        "n_classes": net.n_classes,
        "accuracy": accuracy,
        "families": list(families),
    }
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_feature_net(path: str | Path) -> tuple[PatternFeatureNet, dict]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"feature extractor checkpoint not found: {path}")
    with np.load(path) as archive:
        data = {k: archive[k] for k in archive.files}
    meta = json.loads(bytes(data.pop("__meta__")).decode())
    net = PatternFeatureNet(n_classes=meta["n_classes"], width=meta["width"])
    net.load_state_dict(
        {k[len("param/"):]: torch.from_numpy(v.copy()) for k, v in data.items()}
    )
    net.eval()
    return net, meta


def center_crop(images: np.ndarray, fraction: float) -> np.ndarray:
    """Center-crop a (n, H, W, C) stack to ``fraction`` of its side length."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"crop fraction must be in (0, 1], got {fraction}")
    h, w = images.shape[1:3]
    ch, cw = max(1, int(h * fraction)), max(1, int(w * fraction))
    top, left = (h - ch) // 2, (w - cw) // 2
    return images[:, top : top + ch, left : left + cw]


def extract_features(
    net: PatternFeatureNet, images: np.ndarray, crop_fraction: float = 1.0, batch: int = 64
) -> np.ndarray:
    """Pooled classifier features of an (n, H, W, 3) image stack in [0, 1]."""
    cropped = center_crop(np.asarray(images, dtype=np.float32), crop_fraction)
    tensor = torch.from_numpy(np.moveaxis(cropped, -1, 1))
    outs = []
    net.eval()
    with torch.no_grad():
        for k in range(0, len(tensor), batch):
            outs.append(net.features(tensor[k : k + batch]).numpy())
    return np.concatenate(outs, axis=0)


def feature_distance(
    set_a: np.ndarray,
    set_b: np.ndarray,
    feature_net: PatternFeatureNet,
    crop_fraction: float = 0.875,
    kid_block_size: int = 50,
) -> tuple[float, float]:
    """(Frechet-like, KID-like) distances between two image sets."""
    if len(set_a) == 0 or len(set_b) == 0:
        raise ContractError("feature_distance needs non-empty image sets")
    feats_a = extract_features(feature_net, set_a, crop_fraction)
    feats_b = extract_features(feature_net, set_b, crop_fraction)
    return frechet_distance(feats_a, feats_b), kid_distance(feats_a, feats_b, kid_block_size)


# ---------------------------------------------------------------------------
# Semantic similarity
# ---------------------------------------------------------------------------

def semantic_similarity(
    extracted: np.ndarray, ground_truth: np.ndarray, semantic_net: SemanticEncoder
) -> float:
    """Cosine similarity of embeddings of two asset images (full mask)."""
    def embed(img: np.ndarray) -> torch.Tensor:
        tensor = torch.from_numpy(np.moveaxis(np.asarray(img, dtype=np.float32), -1, 0))[None]
        mask = torch.ones((1, 1) + tensor.shape[2:])
        with torch.no_grad():
            return encode_semantics(semantic_net, tensor, mask)[0]

    e1, e2 = embed(extracted), embed(ground_truth)
    n1, n2 = float(e1.norm()), float(e2.norm())
    if n1 == 0.0 or n2 == 0.0:
        raise ContractError("semantic similarity undefined for a zero-norm embedding")
    return float((e1 @ e2) / (n1 * n2))
