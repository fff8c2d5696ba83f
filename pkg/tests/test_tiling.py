import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sssdet.errors import DataError
from sssdet.inference import read_ppm, write_ppm
from sssdet.synthetic import rectangle_scene
from sssdet.tiling import TileSpec, merge_tile_labels, split_manifest, tile_boxes, write_tiles
from sssdet.training import GroundTruthBox, read_labels


def px_box(b, w, h):
    return (b.cx - b.w / 2) * w, (b.cy - b.h / 2) * h, (b.cx + b.w / 2) * w, (b.cy + b.h / 2) * h


def test_default_grid_has_sixteen_tiles():
    tiles = tile_boxes(1000, 800, [])
    assert len(tiles) == 16
    assert {(t.row, t.col) for t in tiles} == {(r, c) for r in range(4) for c in range(4)}
    # tiles cover the image exactly once without overlap
    cover = np.zeros((800, 1000), int)
    for t in tiles:
        cover[t.y0:t.y1, t.x0:t.x1] += 1
    assert np.all(cover == 1)


def test_box_inside_one_tile():
    b = GroundTruthBox(2, 0.1, 0.1, 0.05, 0.08)  # pixels 75..125 x 40..120 of 1000x1000
    tiles = tile_boxes(1000, 1000, [b])
    hits = [t for t in tiles if t.labels]
    assert len(hits) == 1 and (hits[0].row, hits[0].col) == (0, 0)
    (kept,) = hits[0].labels
    assert kept.class_id == 2
    # area preserved up to the 4x renormalization per axis
    assert kept.w * kept.h == pytest.approx(b.w * b.h * 16)
    assert kept.cx == pytest.approx(0.4) and kept.cy == pytest.approx(0.4)


def test_straddling_box_appears_in_both_tiles():
    # centred on the seam at x=250 of a 1000 px image, 50/50 split
    b = GroundTruthBox(0, 0.25, 0.1, 0.04, 0.04)
    tiles = tile_boxes(1000, 1000, [b], TileSpec(min_fraction=0.3))
    hits = sorted((t.col, t.labels[0]) for t in tiles if t.labels)
    assert [c for c, _ in hits] == [0, 1]
    for _, kept in hits:
        assert kept.w == pytest.approx(0.08)
    # a stricter fraction drops both halves
    assert not any(t.labels for t in tile_boxes(1000, 1000, [b], TileSpec(min_fraction=0.6)))


def test_overlap_windows():
    tiles = tile_boxes(100, 100, [], TileSpec(rows=1, cols=3, overlap=10))
    assert [(t.x0, t.x1) for t in tiles] == [(0, 40), (30, 70), (60, 100)]


def test_image_too_small():
    with pytest.raises(DataError, match="too small"):
        tile_boxes(3, 3, [], TileSpec())


def test_spec_validation():
    with pytest.raises(ValueError):
        TileSpec(rows=0)
    with pytest.raises(ValueError):
        TileSpec(min_fraction=0)


def _write_scene(tmp_path, seed, size=203):
    rng = np.random.default_rng(seed)
    img, labels = rectangle_scene(rng, size=size, max_boxes=6, min_side=8, max_side=60)
    write_ppm(tmp_path / "scene.ppm", img)
    (tmp_path / "scene.txt").write_text("".join(f"{c} {cx:.6f} {cy:.6f} {w:.6f} {h:.6f}\n"
                                                 for c, cx, cy, w, h in labels))
    return img, read_labels(tmp_path / "scene.txt")


@pytest.mark.parametrize("overlap", [0, 6])
@pytest.mark.parametrize("seed", range(6))
def test_tile_then_merge_recovers_boxes(tmp_path, seed, overlap):
    img, labels = _write_scene(tmp_path, seed)
    # a tiny fraction retains every fragment, so every box must come back whole
    spec = TileSpec(overlap=overlap, min_fraction=1e-6)
    paths = write_tiles(tmp_path / "scene.ppm", tmp_path / "scene.txt", tmp_path / "out", spec)
    assert len(paths) == 16
    # reload the written tiles so file precision is part of the round trip
    tiles = tile_boxes(img.shape[1], img.shape[0], labels, spec)
    for t, p in zip(tiles, paths):
        assert read_ppm(p).shape == (t.height, t.width, 3)
        t.labels = read_labels(p.with_suffix(".txt"))
    merged = merge_tile_labels(tiles)
    assert len(merged) == len(labels)
    for b in labels:
        ref = px_box(b, img.shape[1], img.shape[0])
        assert any(m[0] == b.class_id and max(abs(u - v) for u, v in zip(m[1:], ref)) <= 1.0 for m in merged)


def test_merge_survives_dropped_corner_fragment():
    # 54 x 49 px box over the seams at x=150, y=50; its 5 x 2 px corner falls below the cutoff
    w = h = 203
    b = GroundTruthBox(3, 172 / w, 72.5 / h, 54 / w, 49 / h)
    tiles = tile_boxes(w, h, [b], TileSpec(min_fraction=0.01))
    assert sum(len(t.labels) for t in tiles) == 3
    (m,) = merge_tile_labels(tiles)
    assert m[0] == 3 and m[1:] == pytest.approx((145, 48, 199, 97))


def test_adjacent_objects_off_seam_stay_apart():
    w = h = 400
    left = GroundTruthBox(0, 20 / w, 20 / h, 20 / w, 20 / h)
    right = GroundTruthBox(0, 40.5 / w, 20 / h, 20 / w, 20 / h)
    assert len(merge_tile_labels(tile_boxes(w, h, [left, right]))) == 2


def test_tile_pixels_match_source(tmp_path):
    img, _ = _write_scene(tmp_path, 9)
    paths = write_tiles(tmp_path / "scene.ppm", tmp_path / "scene.txt", tmp_path / "out")
    tiles = tile_boxes(img.shape[1], img.shape[0], [])
    for t, p in zip(tiles, paths):
        assert np.array_equal(read_ppm(p), img[t.y0:t.y1, t.x0:t.x1])


def test_split_ratios():
    paths = [f"img{i:03d}.ppm" for i in range(100)]
    train, test = split_manifest(paths, 0.9, seed=0)
    assert (len(train), len(test)) == (90, 10)
    assert sorted(train + test) == paths
    train, test = split_manifest([f"d{i}" for i in range(262)], 0.8, seed=0)
    assert (len(train), len(test)) == (209, 53)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 300), st.floats(0.05, 0.95), st.integers(0, 1000))
def test_split_partitions_deterministically(n, ratio, seed):
    paths = [f"p{i}" for i in range(n)]
    a = split_manifest(paths, ratio, seed)
    assert a == split_manifest(paths, ratio, seed)
    assert sorted(a[0] + a[1]) == sorted(paths)
    assert len(a[0]) == int(n * ratio + 1e-9)


def test_split_errors():
    with pytest.raises(DataError):
        split_manifest([], 0.9)
    with pytest.raises(ValueError):
        split_manifest(["a"], 1.0)
