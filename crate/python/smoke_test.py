"""Smoke test for the pysvolight extension.

Build and install first:

    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/pysvolight-*.whl
    python python/smoke_test.py
"""

import json
import math
import os
import tempfile

import pysvolight as sv


def pose_json(position):
    x, y, z = position
    return {"cam_to_world": [1, 0, 0, x, 0, 1, 0, y, 0, 0, 1, z, 0, 0, 0, 1]}


def main():
    tree = sv.Octree.scene("box", 4)
    stats = tree.stats()
    assert stats["max_depth"] == 4 and stats["total_nodes"] == tree.node_count
    print(tree, "leaves:", stats["leaf_count"])

    (w, h, c, rad), (_, _, _, depth) = tree.render_panorama([0.5, 0.5, 0.5], 32, 16, weight_mode="unit")
    assert (w, h, c) == (32, 16, 3) and len(rad) == w * h * 3
    assert all(math.isfinite(v) and v >= 0 for v in rad)
    assert max(depth) > 0

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "box.loc")
        tree.save(path)
        again = sv.Octree.load(path)
        assert again.node_count == tree.node_count

        image = (w, h, c, rad)
        sv.write_pfm(os.path.join(tmp, "pano.pfm"), image)
        back = sv.read_pfm(os.path.join(tmp, "pano.pfm"))
        assert back == image
        assert sv.log_l2(back, image) == 0.0
        sv.write_png(os.path.join(tmp, "pano.png"), image)

        views = os.path.join(tmp, "views")
        os.makedirs(views)
        for k, p in enumerate([[0.4, 0.5, 0.5], [0.6, 0.45, 0.55]]):
            pano, dep = tree.render_panorama(p, 16, 8, growth=2.0, weight_mode="unit")
            sv.write_pfm(os.path.join(views, f"pano_{k:03}.pfm"), pano)
            sv.write_pfm(os.path.join(views, f"depth_{k:03}.pfm"), dep)
            with open(os.path.join(views, f"pose_{k:03}.json"), "w") as f:
                json.dump(pose_json(p), f)

        config = json.loads(sv.default_fit_config())
        config.update(iterations=30, refine_at=[])
        fitted, history = sv.fit(tree.without_radiance(), views, json.dumps(config))
        assert len(history) == 30 and history[-1] < history[0]
        print(f"fit loss {history[0]:.4e} -> {history[-1]:.4e}")

    assert sv.scale_invariant_l2([2.0, 4.0], [1.0, 2.0], [True, True]) == 0.0
    try:
        sv.Octree.load("/nonexistent.loc")
    except OSError:
        pass
    else:
        raise AssertionError("missing file should raise OSError")
    print("smoke test passed")


if __name__ == "__main__":
    main()
