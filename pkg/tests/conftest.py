import json

import pytest

from label_convergence.data_model import Category, ImageRecord, Instance, MultiAnnotatedDataset
from label_convergence.synthetic import make_dataset


@pytest.fixture
def duplicated():
    """10 images, 3 categories, two annotators with identical boxes and masks."""
    return make_dataset(10, 3, masks=True, seed=7)


@pytest.fixture
def noisy():
    return make_dataset(60, 4, jitter=0.08, p_miss=0.1, p_wrong_class=0.1, seed=11)


@pytest.fixture
def write_json(tmp_path):
    def _write(obj, name="data.json"):
        path = tmp_path / name
        path.write_text(json.dumps(obj), encoding="utf-8")
        return path

    return _write


@pytest.fixture
def minimal_coco():
    return {
        "images": [{"id": 1, "width": 100, "height": 80, "file_name": "a.jpg"}],
        "categories": [{"id": 1, "name": "cat"}],
        "annotations": [
            {"id": 1, "image_id": 1, "category_id": 1, "bbox": [10, 10, 20, 20], "annotator_id": "R1"},
            {"id": 2, "image_id": 1, "category_id": 1, "bbox": [12, 10, 20, 20], "annotator_id": "R2"},
        ],
    }


def build(images, annotations, categories=(1, 2, 3), rosters=None, size=(100, 100)):
    """Small hand-made dataset: ``annotations`` are (annotator, category, bbox) per image id."""
    imgs = [ImageRecord(i, size[1], size[0], f"{i}.png") for i in images]
    cats = [Category(c, f"c{c}") for c in categories]
    insts = []
    k = 1
    for image_id, rows in annotations.items():
        for ann, cat, bbox in rows:
            insts.append(Instance(k, image_id, ann, cat, tuple(float(v) for v in bbox)))
            k += 1
    return MultiAnnotatedDataset(imgs, cats, insts, rosters or {i: ["A", "B"] for i in images})


# -- acceptance reporting -------------------------------------------------------

_criteria: dict[int, list[tuple[str, str]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _criteria.setdefault(int(marker.args[0]), []).append((item.name, rep.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        outcomes = [o for _, o in _criteria[n]]
        if all(o == "passed" for o in outcomes):
            status = "PASS"
        elif any(o == "failed" for o in outcomes):
            status = "FAIL"
        else:
            status = "SKIP"
        detail = ", ".join(f"{name}={o}" for name, o in _criteria[n])
        terminalreporter.write_line(f"criterion {n}: {status}  ({detail})")
