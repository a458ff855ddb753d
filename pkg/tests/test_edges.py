import numpy as np
import pytest

from patchlift.errors import ShapeError
from patchlift.synthdata.edges import derive_edge_map, dilate_mask

LUMA = np.array([0.299, 0.587, 0.114])
KX = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
KY = KX.T


def oracle_edge(reference, mask):
    """Longhand reimplementation: per-pixel 3x3 correlation with clamped
    indexing, magnitude / 4, clipped, zeroed outside the dilated mask."""
    h, w = mask.shape
    gray = reference.astype(np.float64) @ LUMA
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            gx = gy = 0.0
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    yy = min(max(y + dy, 0), h - 1)
                    xx = min(max(x + dx, 0), w - 1)
                    gx += KX[dy + 1, dx + 1] * gray[yy, xx]
                    gy += KY[dy + 1, dx + 1] * gray[yy, xx]
            out[y, x] = min(1.0, np.hypot(gx, gy) / 4.0)
    dil = np.zeros((h, w), dtype=bool)
    for y in range(h):
        for x in range(w):
            y0, y1 = max(0, y - 1), min(h, y + 2)
            x0, x1 = max(0, x - 1), min(w, x + 2)
            dil[y, x] = mask[y0:y1, x0:x1].any()
    out[~dil] = 0.0
    return out


def block_mask(size, lo, hi):
    mask = np.zeros((size, size), dtype=np.uint8)
    mask[lo:hi, lo:hi] = 1
    return mask


def test_constant_interior_response_only_on_boundary_ring():
    size = 24
    mask = block_mask(size, 6, 18)
    reference = np.zeros((size, size, 3), dtype=np.float32)
    reference[mask.astype(bool)] = [0.5, 0.5, 0.5]  # flat inside, black outside
    edge = derive_edge_map(reference, mask)
    interior = block_mask(size, 8, 16).astype(bool)  # strictly inside the ring
    assert np.all(edge[interior] == 0.0)
    ring = dilate_mask(mask) & ~interior
    assert edge[ring].max() > 0.0
    assert np.all(edge[~dilate_mask(mask)] == 0.0)


def test_vertical_step_matches_convolution_oracle():
    size = 16
    mask = block_mask(size, 2, 14)
    reference = np.zeros((size, size, 3), dtype=np.float32)
    reference[:, :8] = 0.2
    reference[:, 8:] = 0.8
    edge = derive_edge_map(reference, mask)
    expected = oracle_edge(reference, mask)
    assert np.abs(edge - expected).max() < 1e-6
    # Maximal response along the step columns inside the mask.
    interior_rows = slice(4, 12)
    step_cols = edge[interior_rows, 7:9]
    away_cols = edge[interior_rows, 4:6]
    assert step_cols.min() > away_cols.max()


@pytest.mark.parametrize("seed", range(3))
def test_random_reference_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    reference = rng.uniform(0, 1, (12, 12, 3)).astype(np.float32)
    mask = (rng.uniform(0, 1, (12, 12)) < 0.5).astype(np.uint8)
    assert np.abs(derive_edge_map(reference, mask) - oracle_edge(reference, mask)).max() < 1e-6


def test_zero_mask_gives_zero_edge():
    reference = np.random.default_rng(0).uniform(0, 1, (8, 8, 3)).astype(np.float32)
    edge = derive_edge_map(reference, np.zeros((8, 8), dtype=np.uint8))
    assert np.all(edge == 0.0)


def test_output_range_and_dtype():
    rng = np.random.default_rng(1)
    reference = rng.uniform(0, 1, (16, 16, 3)).astype(np.float32)
    mask = np.ones((16, 16), dtype=np.uint8)
    edge = derive_edge_map(reference, mask)
    assert edge.dtype == np.float32
    assert edge.min() >= 0.0 and edge.max() <= 1.0


def test_shape_errors():
    reference = np.zeros((8, 8, 3), dtype=np.float32)
    with pytest.raises(ShapeError):
        derive_edge_map(reference, np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(ShapeError):
        derive_edge_map(np.zeros((8, 8), dtype=np.float32), np.zeros((8, 8), dtype=np.uint8))


def test_pure_function_of_inputs():
    rng = np.random.default_rng(2)
    reference = rng.uniform(0, 1, (16, 16, 3)).astype(np.float32)
    mask = block_mask(16, 3, 12)
    assert np.array_equal(derive_edge_map(reference, mask), derive_edge_map(reference, mask))
