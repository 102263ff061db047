import copy
import json

import numpy as np
import pytest

from label_convergence.data_model import (
    IngestConfig,
    ReferentialIntegrityError,
    RosterError,
    SchemaError,
    dataset_from_coco,
    load_annotator_files,
    load_dataset,
    subsample,
    validate,
)
from label_convergence.geometry import Box, Mask, encode_rle
from label_convergence.synthetic import make_dataset


def test_minimal_load(minimal_coco, write_json):
    ds = load_dataset(write_json(minimal_coco))
    assert ds.roster(1) == ("R1", "R2")
    a, b = ds.instances_for(1, "R1")[0], ds.instances_for(1, "R2")[0]
    assert a.bbox == (10.0, 10.0, 20.0, 20.0)
    assert a.source_confidence == 0.99
    assert ds.region(b) == Box(12, 10, 20, 20)


def test_dangling_image_reference(minimal_coco):
    minimal_coco["annotations"][0]["image_id"] = 9
    with pytest.raises(ReferentialIntegrityError, match="image_id 9"):
        dataset_from_coco(minimal_coco)


def test_dangling_category_reference(minimal_coco):
    minimal_coco["annotations"][1]["category_id"] = 4
    with pytest.raises(ReferentialIntegrityError, match="category_id 4"):
        dataset_from_coco(minimal_coco)


def test_image_without_annotator(minimal_coco):
    minimal_coco["images"].append({"id": 2, "width": 10, "height": 10, "file_name": "b.jpg"})
    with pytest.raises(RosterError):
        dataset_from_coco(minimal_coco)


def test_schema_error_names_the_record(minimal_coco, write_json):
    del minimal_coco["annotations"][1]["bbox"]
    path = write_json(minimal_coco)
    with pytest.raises(SchemaError, match=r"annotations\[1\]"):
        load_dataset(path)


def test_invalid_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"images": [', encoding="utf-8")
    with pytest.raises(SchemaError, match="line 1"):
        load_dataset(path)


def test_explicit_roster_keeps_silent_annotator(minimal_coco):
    minimal_coco["images"][0]["annotators"] = ["R1", "R2", "R3"]
    ds = dataset_from_coco(minimal_coco)
    assert ds.roster(1) == ("R1", "R2", "R3")
    assert ds.instances_for(1, "R3") == ()


def test_round_trip_is_lossless(tmp_path):
    ds = make_dataset(5, 3, masks=True, jitter=0.1, seed=2)
    path = tmp_path / "rt.json"
    ds.save(path)
    back = load_dataset(path)
    assert back.to_coco() == ds.to_coco()
    assert back.instances == ds.instances


def test_validate_does_not_mutate(noisy):
    before = copy.deepcopy(noisy.to_coco())
    validate(noisy)
    assert noisy.to_coco() == before


def test_validate_counts_duplicates_and_degenerate_boxes():
    data = {
        "images": [{"id": 1, "width": 50, "height": 50, "file_name": "x"}],
        "categories": [{"id": 1, "name": "a"}],
        "annotations": [
            {"id": 1, "image_id": 1, "category_id": 1, "bbox": [1, 1, 5, 5], "annotator_id": "A"},
            {"id": 2, "image_id": 1, "category_id": 1, "bbox": [1, 1, 5, 5], "annotator_id": "B"},
            {"id": 3, "image_id": 1, "category_id": 1, "bbox": [9, 9, 0, 4], "annotator_id": "A"},
            {"id": 4, "image_id": 1, "category_id": 1, "bbox": [40, 40, 20, 5], "annotator_id": "B"},
        ],
    }
    report = validate(dataset_from_coco(data))
    assert report.suspected_duplicates == 1
    assert report.duplicate_pairs == [(1, 2)]
    assert report.degenerate_boxes == 1
    assert report.out_of_bounds == 1
    assert report.is_two_annotator
    assert report.has_findings


def test_validate_clean_dataset(duplicated):
    # a duplicated-annotator dataset is all duplicates by construction
    report = validate(duplicated)
    assert report.suspected_duplicates == len(duplicated.instances) // 2
    clean = validate(make_dataset(8, 3, jitter=0.2, seed=5))
    assert clean.degenerate_boxes == clean.out_of_bounds == clean.empty_masks == 0


def test_validate_lenient_load_reports_dangling(minimal_coco):
    minimal_coco["annotations"][0]["category_id"] = 7
    report = validate(dataset_from_coco(minimal_coco, strict=False))
    assert report.unresolved_refs == 1


def test_subsample_identity_and_single(noisy):
    full = subsample(noisy, noisy.image_ids)
    assert list(full.instances()) == list(noisy.instances)
    one = noisy.subsample([noisy.image_ids[3]])
    assert len(one) == 1
    assert all(i.image_id == noisy.image_ids[3] for i in one.instances())
    with pytest.raises(KeyError):
        noisy.subsample([10_000])


def test_subsample_size_for_ten_percent():
    ds = make_dataset(5000, 2, objects_per_image=(0, 1), seed=1)
    rng = np.random.default_rng(0)
    ids = rng.choice(ds.image_ids, size=round(0.1 * len(ds)), replace=False)
    assert len(ds.subsample(ids)) == 500


def test_annotator_files_merge_by_file_name(write_json):
    cats = [{"id": 1, "name": "a"}, {"id": 2, "name": "b"}]
    a = {
        "images": [{"id": 1, "width": 20, "height": 20, "file_name": "p.png"},
                   {"id": 2, "width": 20, "height": 20, "file_name": "q.png"}],
        "categories": cats,
        "annotations": [{"id": 50, "image_id": 2, "category_id": 1, "bbox": [0, 0, 4, 4]}],
    }
    b = {
        "images": [{"id": 7, "width": 20, "height": 20, "file_name": "q.png"}],
        "categories": cats,
        "annotations": [{"id": 3, "image_id": 7, "category_id": 2, "bbox": [1, 1, 4, 4]}],
    }
    ds = load_annotator_files({"ann1": write_json(a, "a.json"), "ann2": write_json(b, "b.json")})
    assert ds.image_ids == (1, 2)
    assert ds.roster(2) == ("ann1", "ann2")
    assert ds.roster(1) == ("ann1",)
    assert [i.id for i in ds.instances] == [1, 2]
    assert ds.instances_for(2, "ann2")[0].category_id == 2


def test_group_field_maps_to_two_annotators(minimal_coco):
    for ann, group in zip(minimal_coco["annotations"], ("g9", "g3")):
        del ann["annotator_id"]
        ann["group"] = group
    ds = dataset_from_coco(minimal_coco, IngestConfig(group_field="group"))
    assert ds.roster(1) == ("A", "B")
    # groups are labelled in sorted order
    assert ds.instances_for(1, "A")[0].id == 2


def test_category_map(minimal_coco, write_json):
    minimal_coco["categories"].append({"id": 2, "name": "cat_v1"})
    path = write_json({"1": 2}, "map.json")
    ds = dataset_from_coco(minimal_coco, IngestConfig(category_map=str(path)))
    assert {i.category_id for i in ds.instances} == {2}
    assert [c.id for c in ds.categories] == [2]


def test_segm_region_falls_back_to_box(minimal_coco):
    full = np.zeros((80, 100), bool)
    full[10:30, 10:30] = True
    minimal_coco["annotations"][0]["segmentation"] = encode_rle(full)
    minimal_coco["annotations"][1]["segmentation"] = []
    ds = dataset_from_coco(minimal_coco)
    a, b = ds.instances
    assert isinstance(ds.region(a, "segm"), Mask)
    assert ds.region(b, "segm") == Box(12, 10, 20, 20)


def test_region_clamps_to_image(minimal_coco):
    minimal_coco["annotations"][0]["bbox"] = [90, 70, 30, 30]
    ds = dataset_from_coco(minimal_coco)
    assert ds.region(ds.instances[0]) == Box(90, 70, 10, 10)
    # raw geometry is stored unchanged
    assert ds.instances[0].bbox == (90.0, 70.0, 30.0, 30.0)


def test_polygon_segmentation(minimal_coco):
    minimal_coco["annotations"][0]["segmentation"] = [[10, 10, 30, 10, 30, 30, 10, 30]]
    ds = dataset_from_coco(minimal_coco)
    region = ds.region(ds.instances[0], "segm")
    assert region.area == 400


def test_saved_file_is_plain_json(tmp_path, duplicated):
    path = tmp_path / "d.json"
    duplicated.save(path)
    data = json.loads(path.read_text())
    assert {"images", "categories", "annotations"} <= set(data)
    assert all("annotator_id" in a for a in data["annotations"])
