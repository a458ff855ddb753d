import numpy as np
import pytest

from patchlift.errors import ConfigError
from patchlift.synthdata.patterns import FAMILIES, AssetImage, PatternBank, make_asset


@pytest.mark.parametrize("family", FAMILIES)
def test_assets_are_valid_and_deterministic(family):
    a = make_asset(family, 32, seed=5)
    b = make_asset(family, 32, seed=5)
    assert a.pixels.shape == (32, 32, 3)
    assert a.pixels.dtype == np.float32
    assert 0.0 <= a.pixels.min() and a.pixels.max() <= 1.0
    assert np.array_equal(a.pixels, b.pixels)
    assert a.id == b.id


def test_different_seeds_differ():
    a = make_asset("stripes", 32, seed=1)
    b = make_asset("stripes", 32, seed=2)
    assert not np.array_equal(a.pixels, b.pixels)


def test_families_visually_distinct():
    # Coarse check: mean absolute difference between family exemplars is
    # well above zero, so the family classifier has signal to work with.
    images = [make_asset(f, 32, seed=3).pixels for f in FAMILIES]
    for i in range(len(images)):
        for j in range(i + 1, len(images)):
            assert np.abs(images[i] - images[j]).mean() > 0.05


def test_unknown_family_rejected():
    with pytest.raises(ConfigError, match="unknown pattern family"):
        make_asset("plaid", 32, seed=0)
    with pytest.raises(ConfigError, match="unknown pattern family"):
        PatternBank(32, families=("stripes", "plaid"))


def test_bank_draw_is_deterministic():
    bank = PatternBank(32)
    a1, f1 = bank.draw(42)
    a2, f2 = bank.draw(42)
    assert f1 == f2 and np.array_equal(a1.pixels, a2.pixels)


def test_bank_covers_all_families():
    bank = PatternBank(32)
    seen = {bank.draw(seed)[1] for seed in range(60)}
    assert seen == set(FAMILIES)


def test_user_pattern_dir(tmp_path):
    from PIL import Image

    arr = (np.linspace(0, 255, 16 * 16 * 3).reshape(16, 16, 3)).astype(np.uint8)
    Image.fromarray(arr, "RGB").save(tmp_path / "tile.png")
    bank = PatternBank(32, pattern_dir=str(tmp_path))
    assert bank.user_images and bank.user_images[0].size == 32
    drawn_families = {bank.draw(seed)[1] for seed in range(120)}
    assert "user" in drawn_families


def test_empty_pattern_dir_rejected(tmp_path):
    with pytest.raises(ConfigError, match="no PNG files"):
        PatternBank(32, pattern_dir=str(tmp_path))


def test_asset_image_validation():
    with pytest.raises(Exception, match="square RGB"):
        AssetImage(pixels=np.zeros((8, 9, 3), dtype=np.float32), id="bad")
    with pytest.raises(Exception, match="outside"):
        AssetImage(pixels=np.full((8, 8, 3), 1.5, dtype=np.float32), id="bad")
