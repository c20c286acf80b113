import json
import math

import numpy as np
import pytest

from oracles import box_area_iou
from suppress_detect.errors import ConfigError
from suppress_detect.ingest import load_manifest
from suppress_detect.synthgen import (
    BLONDEE, GALA, SceneConfig, export, generate, generate_scene)


def test_no_apples_no_clutter_gives_empty_scenes():
    scenes = generate(SceneConfig(n_apples=(0, 0), fp_rate=0.0), 5)
    assert all(not s.annotations and not s.detections for s in scenes)


def test_same_seed_identical_scenes():
    cfg = SceneConfig(seed=7)
    a, b = generate(cfg, 4), generate(cfg, 4)
    for x, y in zip(a, b):
        assert x.image.pixels.tobytes() == y.image.pixels.tobytes()
        assert x.annotations == y.annotations
        assert x.detections == y.detections
        assert x.provenance == y.provenance


def test_scene_is_independent_of_generation_order():
    cfg = SceneConfig(seed=3)
    batch = generate(cfg, 5)
    alone = generate_scene(cfg, 4, "img")
    assert alone.detections == batch[4].detections
    assert alone.image == batch[4].image


def test_different_seed_or_prefix_differs():
    base = generate_scene(SceneConfig(seed=0), 0, "train")
    assert generate_scene(SceneConfig(seed=1), 0, "train").image != base.image
    assert generate_scene(SceneConfig(seed=0), 0, "test").image != base.image


def test_counts_and_fp_rate():
    cfg = SceneConfig(n_apples=(5, 5), occlusion_fraction=(0.0, 0.0), fp_rate=2.0,
                      image_size=(200, 160))
    scenes = generate(cfg, 200)
    assert all(len(s.annotations) == 5 for s in scenes)
    assert all(s.provenance.count("truth") == 5 for s in scenes)
    mean_spurious = np.mean([s.provenance.count("spurious") for s in scenes])
    assert abs(mean_spurious - 2.0) <= 0.4


def test_score_distributions_overlap_but_differ():
    scenes = generate(SceneConfig(fp_rate=3.0), 60)
    t = [d.score for s in scenes for d, p in zip(s.detections, s.provenance) if p == "truth"]
    f = [d.score for s in scenes for d, p in zip(s.detections, s.provenance) if p == "spurious"]
    assert abs(np.mean(t) - 0.8) < 0.03
    assert abs(np.mean(f) - 0.625) < 0.04
    # a score threshold alone cannot separate them
    assert sum(x >= 0.7 for x in f) > 0.2 * len(f)


@pytest.mark.parametrize("kwargs", [
    dict(n_apples=(4, 2)),
    dict(n_apples=(-1, 2)),
    dict(apple_radius=(1, 5)),
    dict(apple_radius=(9, 80)),
    dict(occlusion_fraction=(0.0, 1.5)),
    dict(lighting=("dusk",)),
    dict(apple_palette=()),
    dict(fp_rate=-1.0),
    dict(image_size=(0, 10)),
])
def test_invalid_config(kwargs):
    with pytest.raises(ConfigError):
        generate(SceneConfig(**kwargs), 1)


def test_zero_scenes_rejected():
    with pytest.raises(ConfigError):
        generate(SceneConfig(), 0)


def test_annotation_boxes_bound_their_disks():
    for s in generate(SceneConfig(seed=11, occlusion_fraction=(0.0, 0.0)), 10):
        px = s.image.pixels
        for a in s.annotations:
            b = a.box
            assert b.w == b.h and b.w % 2 == 1
            r = (b.w - 1) / 2
            cx, cy = int(b.x + r), int(b.y + r)
            assert 0 <= b.x and 0 <= b.y and b.x2 <= px.shape[1] and b.y2 <= px.shape[0]
            assert {"variety=gala", "variety=blondee"} & a.tags
            assert any(t.startswith("lighting=") for t in a.tags)
            # apple centres are warm (red channel above the leaf greens' blue)
            assert int(px[cy, cx, 0]) > int(px[cy, cx, 2])


def test_truth_proposals_overlap_their_apple():
    for s in generate(SceneConfig(seed=5, localization_noise=2.0), 30):
        for d, src in zip(s.detections, s.sources):
            if src >= 0:
                box = s.annotations[src].box
                got = box_area_iou(d.box.as_list(), box.as_list())
                assert got >= 0.3


def test_spurious_proposals_avoid_apples():
    for s in generate(SceneConfig(seed=2, fp_rate=3.0, localization_noise=0.0), 30):
        for d, p in zip(s.detections, s.provenance):
            if p == "spurious":
                best = max((box_area_iou(d.box.as_list(), a.box.as_list())
                            for a in s.annotations), default=0.0)
                assert best < 0.5


def test_palettes():
    assert GALA.blush is not None and BLONDEE.blush is None
    seen = {s.variety for s in generate(SceneConfig(), 30)}
    assert seen == {"gala", "blondee"}


def test_export_round_trip(tmp_path):
    scenes = generate(SceneConfig(seed=4), 3, prefix="val")
    manifest = export(scenes, tmp_path, split="val")
    assert sorted(p.name for p in (tmp_path / "images").iterdir()) == \
        ["val_00000.ppm", "val_00001.ppm", "val_00002.ppm"]

    ds = load_manifest(manifest)
    assert ds.split == "val"
    assert ds.image_ids() == [s.image_id for s in scenes]
    by_img = ds.annotations_by_image()
    for s in scenes:
        assert ds.load_image(s.image_id) == s.image
        got = by_img.get(s.image_id, [])
        assert [a.box for a in got] == [a.box for a in s.annotations]
        assert all(a.tags == b.tags for a, b in zip(got, s.annotations))
    dets = [d for s in scenes for d in s.detections]
    assert len(ds.detections) == len(dets)
    for a, b in zip(ds.detections, dets):
        assert a.image_id == b.image_id and a.box == b.box
        assert math.isclose(round(a.score, 6), round(b.score, 6))
    prov = json.loads((tmp_path / "provenance.json").read_text())
    assert prov == [p for s in scenes for p in s.provenance]
