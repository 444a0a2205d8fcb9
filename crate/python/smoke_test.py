"""Smoke test for the ppc extension module."""

import os
import sys
import tempfile

import ppc


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    cats = ppc.categories()
    assert cats == ["coast", "forest", "parking_in", "parking_out", "residential", "urban"], cats

    depth, refl = ppc.project_scan([(0.0001, 0, 12.5, 0.25), (3.14159, 31, 99.75, 1.0)])
    assert (depth.width, depth.height) == (2166, 32)
    assert depth.range_at(0, 0) == 12.5
    assert refl.get(31, 1082) == 1.0
    assert depth.modality == "depth" and refl.modality == "reflectance"

    small = depth.downsample(384, 32)
    assert (small.width, small.height) == (384, 32)

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "d.pano")
        depth.save(path)
        loaded = ppc.Panorama.load(path)
        assert (loaded.width, loaded.height) == (2166, 32)
        assert loaded.range_at(0, 0) == 12.5 and loaded.range_at(31, 1082) == 99.75

    points = ppc.generate_scene("coast", 7)
    assert points and points == ppc.generate_scene("coast", 7)

    fused, label = ppc.fuse_average([0.7, 0.3], [0.2, 0.8])
    assert close(fused[0], 0.45) and close(fused[1], 0.55) and label == 1
    fused, label = ppc.fuse_with_weights([0.7, 0.3], [0.2, 0.8], 1.0)
    assert fused == [0.7, 0.3] and label == 0

    scans = ppc.generate_dataset(2, 2, 5, width=64, height=32)
    assert len(scans) == 12
    assert {s.label for s in scans} == set(cats)
    assert {s.location_set for s in scans} == {0, 1}

    folds = ppc.make_folds(scans, 2)
    assert len(folds) == 2
    for f in folds:
        held = set(f["test"])
        assert held.isdisjoint(f["train"]) and held.isdisjoint(f["validation"])

    model = ppc.Model("both", divisor=16, height=32, width=64, seed=1)
    probs = model.predict(scans[:3])
    assert len(probs) == 3 and all(close(sum(p), 1.0, 1e-5) for p in probs)

    single = ppc.Model("depth", divisor=16, height=32, width=64, seed=1)
    cam = single.grad_cam(scans[0])
    assert (cam.width, cam.height) == (64, 32) and min(cam.pixels) >= 0.0

    with tempfile.TemporaryDirectory() as tmp:
        single.save(tmp)
        trained = ppc.Trained.load(tmp)
        assert trained.method == "single"
        labels = trained.predict(scans)
        assert len(labels) == 12 and set(labels) <= set(cats)
        acc = trained.accuracy(scans)
        assert close(acc, sum(a == s.label for a, s in zip(labels, scans)) / 12)

    try:
        ppc.project_scan([])
    except ValueError as e:
        assert "no points" in str(e)
    else:
        raise AssertionError("empty cloud accepted")

    print("ppc smoke test ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
