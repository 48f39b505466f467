"""Smoke test for the `kog` Python module.

Uses an installed `kog` (e.g. after `maturin develop -m crates/py/Cargo.toml`)
or falls back to target/release/libkog.so built with
`cargo build --release -p kog-py --features extension-module`.
"""

import importlib
import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_module():
    try:
        return importlib.import_module("kog")
    except ImportError:
        pass
    for lib in ("libkog.so", "libkog.dylib"):
        built = ROOT / "target" / "release" / lib
        if built.exists():
            tmp = Path(tempfile.mkdtemp())
            shutil.copy(built, tmp / "kog.so")
            sys.path.insert(0, str(tmp))
            return importlib.import_module("kog")
    sys.exit("kog module not found; build crates/py first")


def main():
    kog = load_module()

    body = kog.Skeleton.body16()
    h = body.signed_distance()
    assert h[8][7] == 4 and h[7][8] == -4
    assert body.relative_index_map(2)[8][7] == 4
    masks = body.order_masks(2)
    assert len(masks) == 3
    assert all(sum(masks[i][m][n] for i in range(3)) <= 1 for m in range(16) for n in range(16))

    chain = kog.Skeleton(3, [(0, 1), (1, 2)])
    assert chain.signed_distance()[0][2] == -2

    gt = [[[0.0, 0.0, 0.0], [10.0, 20.0, 30.0]]]
    pred = [[[0.0, 0.0, 0.0], [13.0, 24.0, 30.0]]]
    assert math.isclose(kog.mpjpe(pred, gt), 2.5)
    assert kog.pck_and_auc(gt, gt) == (100.0, 100.0)

    config = '{"kind": "kog-transformer", "num_layers": 1, "dim": 16, "heads": 2, "dropout": 0.0}'
    fresh = kog.Model(body, config)
    assert fresh.parameter_count > 0
    assert len(fresh.fusion_weights()) == 2

    data = kog.synth_poses(body, 32, seed=1)
    model = kog.train(body, config, data, '{"batch_size": 16, "max_steps": 20, "eval_every": 20}', seed=0)
    report = model.evaluate(data)
    assert report["samples"] == 32 and math.isfinite(report["mpjpe_mm"])
    out = model.predict([x for x, _ in data[:4]])
    assert len(out) == 4 and len(out[0]) == 16 and len(out[0][0]) == 3

    with tempfile.TemporaryDirectory() as d:
        path = str(Path(d) / "m.kogt")
        model.save(path)
        again = kog.Model.load(path)
        assert again.predict([data[0][0]]) == model.predict([data[0][0]])

    cases = kog.gradcheck(instances=2, only="softmax")
    assert cases and all(ok for _, _, ok in cases)

    print(f"python smoke test passed ({report['mpjpe_mm']:.1f} mm after 20 steps)")


if __name__ == "__main__":
    main()
