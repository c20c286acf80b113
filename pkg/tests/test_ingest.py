import json

import numpy as np
import pytest

from suppress_detect.core import Annotation, BBox, Detection, Image
from suppress_detect.errors import FormatError, ParseError, ScoreOutOfRange, UnsupportedShape
from suppress_detect.ingest import (
    Dataset, dump_detections, encode_ppm, load_image_ppm, load_manifest, parse_detections,
    parse_via, serialize_via, write_manifest, write_ppm)


def _rect(x, y, w, h, **attrs):
    return {"shape_attributes": {"name": "rect", "x": x, "y": y, "width": w, "height": h},
            "region_attributes": attrs}


def _via(files):
    return json.dumps({f"{name}123": {"filename": name, "size": 123, "regions": regions,
                                      "file_attributes": {}}
                       for name, regions in files.items()})


def test_parse_via_single_rect():
    anns = parse_via(_via({"a.jpg": [_rect(3, 4, 10, 12)]}))
    assert anns == [Annotation("a", BBox(3, 4, 10, 12))]


def test_parse_via_empty_regions():
    assert parse_via(_via({"a.jpg": []})) == []


def test_parse_via_two_files_two_rects_tagged():
    text = _via({
        "f1.png": [_rect(0, 0, 5, 5, variety="gala"), _rect(10, 10, 4, 6, variety="gala")],
        "f2.png": [_rect(1, 2, 3, 4, variety="gala"), _rect(7, 8, 9, 10, variety="gala")],
    })
    anns = parse_via(text)
    assert len(anns) == 4
    assert all(a.tags == {"variety=gala"} for a in anns)
    assert [a.image_id for a in anns] == ["f1", "f1", "f2", "f2"]
    assert [a.box.as_list() for a in anns] == [
        [0, 0, 5, 5], [10, 10, 4, 6], [1, 2, 3, 4], [7, 8, 9, 10]]


def test_parse_via_file_attributes_and_nonstring_skipped():
    doc = {"x.jpg1": {"filename": "x.jpg", "size": 1,
                      "file_attributes": {"lighting": "back", "n": 3},
                      "regions": [_rect(0, 0, 2, 2, kind={"a": True}, variety="blondee")]}}
    (a,) = parse_via(json.dumps(doc))
    assert a.tags == {"lighting=back", "variety=blondee"}


def test_parse_via_project_wrapper():
    inner = json.loads(_via({"a.jpg": [_rect(1, 1, 2, 2)]}))
    anns = parse_via(json.dumps({"_via_settings": {}, "_via_img_metadata": inner}))
    assert len(anns) == 1


def test_parse_via_rejects_polygon_with_location():
    poly = {"shape_attributes": {"name": "polygon", "all_points_x": [0, 1, 2],
                                 "all_points_y": [0, 1, 0]}, "region_attributes": {}}
    with pytest.raises(UnsupportedShape, match=r"'b.jpg' region 1"):
        parse_via(_via({"b.jpg": [_rect(0, 0, 1, 1), poly]}))


@pytest.mark.parametrize("text", ["{not json", "[1, 2]", json.dumps({"k": {"regions": []}}),
                                  json.dumps({"k": {"filename": "a", "regions": [
                                      {"shape_attributes": {"name": "rect", "x": 1}}]}})])
def test_parse_via_malformed(text):
    with pytest.raises(ParseError):
        parse_via(text)


def test_via_round_trip():
    anns = [Annotation("a", BBox(1, 2, 3, 4), {"variety=gala", "lighting=back"}),
            Annotation("a", BBox(5.5, 6, 7, 8.25), {"variety=gala"}),
            Annotation("b", BBox(0, 0, 1, 1))]
    once = parse_via(serialize_via(anns))
    assert once == anns
    assert parse_via(serialize_via(once, file_tags={"a": {"variety": "gala"}})) == anns


def test_parse_detections_basic():
    assert parse_detections("[]") == []
    (d,) = parse_detections('[{"image_id": "a", "bbox": [0, 0, 5, 5], "score": 0.9}]')
    assert d == Detection("a", BBox(0, 0, 5, 5), 0.9)


def test_parse_detections_preserves_order():
    dets = [Detection("i", BBox(k, k, 2, 2), s) for k, s in enumerate((0.2, 0.5, 0.8))]
    back = parse_detections(dump_detections(dets))
    assert back == dets
    assert [d.score for d in back] == [0.2, 0.5, 0.8]


def test_parse_detections_errors():
    with pytest.raises(ScoreOutOfRange):
        parse_detections('[{"image_id": "a", "bbox": [0, 0, 5, 5], "score": 1.2}]')
    with pytest.raises(ParseError):
        parse_detections('[{"image_id": "a", "bbox": [0, 0, 5], "score": 0.2}]')
    with pytest.raises(ParseError):
        parse_detections('{"image_id": "a"}')
    with pytest.raises(ParseError):
        parse_detections('[{"bbox": [0, 0, 5, 5], "score": 0.2}]')


def test_ppm_minimal_red():
    img = load_image_ppm(b"P6 1 1 255\n" + bytes([255, 0, 0]))
    assert (img.width, img.height) == (1, 1)
    assert img.pixels[0, 0].tolist() == [255, 0, 0]


def test_ppm_comment_in_header():
    payload = bytes(range(12))
    plain = load_image_ppm(b"P6\n2 2\n255\n" + payload)
    commented = load_image_ppm(b"P6\n# made by hand\n2 # width\n2\n# max\n255\n" + payload)
    assert plain == commented


def test_ppm_row_major_bytes():
    payload = bytes([1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12])
    img = load_image_ppm(b"P6\n2 2\n255\n" + payload)
    assert img.pixels[0, 0].tolist() == [1, 2, 3]
    assert img.pixels[0, 1].tolist() == [4, 5, 6]
    assert img.pixels[1, 0].tolist() == [7, 8, 9]
    assert img.pixels[1, 1].tolist() == [10, 11, 12]


def test_ppm_payload_may_start_with_whitespace_byte():
    payload = bytes([10, 32, 9])     # '\n', ' ', '\t' as pixel values
    img = load_image_ppm(b"P6\n1 1\n255\n" + payload)
    assert img.pixels[0, 0].tolist() == [10, 32, 9]


@pytest.mark.parametrize("data", [
    b"P3\n1 1\n255\n" + bytes(3),
    b"P6\n1 1\n65535\n" + bytes(6),
    b"P6\n2 2\n255\n" + bytes(11),
    b"P6\n2 2",
    b"P62 2 255\n" + bytes(12),
])
def test_ppm_format_errors(data):
    with pytest.raises(FormatError):
        load_image_ppm(data)


def test_ppm_round_trip(rng):
    img = Image(rng.integers(0, 256, (5, 7, 3)).astype(np.uint8))
    assert load_image_ppm(encode_ppm(img)) == img


def test_dataset_rejects_unknown_image():
    det = Detection("ghost", BBox(0, 0, 1, 1), 0.5)
    with pytest.raises(ValueError, match="ghost"):
        Dataset({"a": "a.ppm"}, [], [det], "test")


def test_dataset_background_only_image():
    ds = Dataset({"a": "a.ppm", "b": "b.ppm"}, [Annotation("a", BBox(0, 0, 1, 1))], [], "val")
    assert ds.annotations_by_image()["b"] == []


def test_manifest_round_trip(tmp_path):
    img = Image(np.full((4, 4, 3), 7, dtype=np.uint8))
    write_ppm(tmp_path / "a.ppm", img)
    anns = [Annotation("a", BBox(0, 0, 2, 2), {"lighting=overcast"})]
    (tmp_path / "ann.json").write_text(serialize_via(anns))
    dets = [Detection("a", BBox(1, 1, 2, 2), 0.75)]
    (tmp_path / "det.json").write_text(dump_detections(dets))
    write_manifest(tmp_path / "m.json", "val", {"a": "a.ppm"}, "ann.json", "det.json")
    ds = load_manifest(tmp_path / "m.json")
    assert ds.split == "val"
    assert list(ds.annotations) == anns and list(ds.detections) == dets
    assert ds.load_image("a") == img
    assert ds.has_detections

    write_manifest(tmp_path / "m2.json", "train", {"a": "a.ppm"}, "ann.json")
    assert not load_manifest(tmp_path / "m2.json").has_detections
