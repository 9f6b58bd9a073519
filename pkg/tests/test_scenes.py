import numpy as np
import pytest

from psdet.boxes import iou
from psdet.scenes import (MAX_OBJECT, MIN_OBJECT, SyntheticScene, class_color,
                          export_dataset, generate_scene, read_ppm, write_ppm)


class TestGenerateScene:
    def test_deterministic_for_fixed_seed(self):
        a = generate_scene(np.random.default_rng(42), 3)
        b = generate_scene(np.random.default_rng(42), 3)
        assert np.array_equal(a.image, b.image)
        assert a.gts == b.gts

    def test_forced_single_object_one_class(self):
        scene = generate_scene(np.random.default_rng(0), 1, num_objects=1)
        assert len(scene.gts) == 1
        assert scene.gts[0][1] == 1

    def test_image_shape_and_range(self):
        scene = generate_scene(np.random.default_rng(1), 3, image_size=64)
        assert scene.image.shape == (1, 3, 64, 64)
        assert scene.image.min() >= 0.0 and scene.image.max() <= 1.0

    def test_object_count_and_size_invariants(self):
        for seed in range(50):
            scene = generate_scene(np.random.default_rng(seed), 3)
            assert 1 <= len(scene.gts) <= 4
            for box, class_id in scene.gts:
                assert MIN_OBJECT <= box.w <= MAX_OBJECT
                assert MIN_OBJECT <= box.h <= MAX_OBJECT
                assert box.x0 >= 0 and box.y0 >= 0
                assert box.x1 <= 96 and box.y1 <= 96
                assert 1 <= class_id <= 3

    def test_objects_disjoint(self):
        for seed in range(30):
            scene = generate_scene(np.random.default_rng(seed), 3)
            boxes = [b for b, _ in scene.gts]
            for i in range(len(boxes)):
                for j in range(i + 1, len(boxes)):
                    assert iou(boxes[i], boxes[j]) == 0.0

    def test_gt_boxes_exactly_bound_shapes(self):
        """Within each gt box the class color appears on every edge row/col,
        and nowhere outside the box (objects are disjoint)."""
        for seed in range(20):
            scene = generate_scene(np.random.default_rng(seed), 3)
            img = scene.image[0]
            for box, class_id in scene.gts:
                color = np.array(class_color(class_id)).reshape(3, 1, 1)
                inside = img[:, int(box.y0):int(box.y1), int(box.x0):int(box.x1)]
                match = (np.abs(inside - color) < 1e-12).all(axis=0)
                assert match.any(axis=1).all(), "a row of the gt box misses the shape"
                # every edge of the box touches the shape
                assert match[0, :].any() and match[-1, :].any()
                assert match[:, 0].any() and match[:, -1].any()

    def test_class_frequencies_uniform(self):
        counts = np.zeros(3)
        total = 0
        for seed in range(1000):
            scene = generate_scene(np.random.default_rng((99, seed)), 3)
            for _, class_id in scene.gts:
                counts[class_id - 1] += 1
                total += 1
        expected = total / 3
        sigma = np.sqrt(total * (1 / 3) * (2 / 3))
        assert np.abs(counts - expected).max() < 3 * sigma

    def test_bad_class_count(self):
        with pytest.raises(ValueError):
            generate_scene(np.random.default_rng(0), 0)


class TestPpm:
    def test_round_trip(self, tmp_path, rng):
        img = rng.uniform(0, 1, size=(3, 8, 10))
        path = tmp_path / "img.ppm"
        write_ppm(img, path)
        back = read_ppm(path)
        assert back.shape == (3, 8, 10)
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-9

    def test_p6_header(self, tmp_path):
        path = tmp_path / "img.ppm"
        write_ppm(np.zeros((3, 4, 6)), path)
        data = path.read_bytes()
        assert data.startswith(b"P6\n6 4\n255\n")
        assert len(data) == len(b"P6\n6 4\n255\n") + 4 * 6 * 3

    def test_byte_identical_across_calls(self, tmp_path, rng):
        img = rng.uniform(0, 1, size=(3, 16, 16))
        p1, p2 = tmp_path / "a.ppm", tmp_path / "b.ppm"
        write_ppm(img, p1)
        write_ppm(img, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_shape_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_ppm(np.zeros((1, 4, 4)), tmp_path / "x.ppm")


class TestExportDataset:
    def test_writes_ppms_and_manifest(self, tmp_path):
        written = export_dataset(tmp_path / "ds", n_scenes=3, seed=5, num_classes=3)
        names = sorted(p.name for p in written)
        assert "gts.csv" in names
        assert sum(n.endswith(".ppm") for n in names) == 3
        manifest = (tmp_path / "ds" / "gts.csv").read_text().splitlines()
        assert manifest[0] == "image_id,class,x0,y0,w,h"
        assert len(manifest) > 3   # at least one object per scene

    def test_deterministic(self, tmp_path):
        export_dataset(tmp_path / "a", n_scenes=2, seed=5, num_classes=3)
        export_dataset(tmp_path / "b", n_scenes=2, seed=5, num_classes=3)
        for name in ("scene_00000.ppm", "scene_00001.ppm", "gts.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
