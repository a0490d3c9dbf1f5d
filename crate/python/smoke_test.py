"""Smoke test for the dfno extension module.

Build and install first:
    maturin build -m crates/python/Cargo.toml -o dist && pip install dist/dfno-*.whl
"""

import math
import sys
import tempfile
from pathlib import Path

import numpy as np

import dfno


def array(shape, flat):
    return np.asarray(flat, dtype=np.float64).reshape(shape)


def main():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)

        x = np.random.default_rng(0).random((2, 8, 8))
        path = tmp / "x.grd1"
        dfno.write_grd1(str(path), list(x.shape), x.ravel().tolist(), ["u", "v"])
        shape, flat, names = dfno.read_grd1(str(path))
        assert names == ["u", "v"]
        assert np.array_equal(array(shape, flat), x)

        a = x[0].ravel().tolist()
        assert dfno.ssim2d(a, a, 8, 8, 1.0) == 1.0
        p = [dfno.psnr([v + e for v in a], a, 1.0) for e in (0.01, 0.02, 0.04)]
        assert p[0] > p[1] > p[2]

        shape, flat = dfno.simulate_ns(resolution=32, frames=2, interval=0.1, seed=1)
        w = array(shape, flat)
        assert w.shape == (2, 32, 32) and np.isfinite(w).all()

        data = tmp / "data"
        assert dfno.gen_ns(str(data), sims=4, resolution=32, frames=10, interval=0.2, splits="50/25/25") == 4
        ckpt = tmp / "m.ckpt"
        score = dfno.train(str(data), "dfno", str(ckpt), epochs=2, batch=4, width=4, modes=[4, 4])
        assert math.isfinite(score)

        rows = dfno.evaluate(str(ckpt), str(data), [16, 32], str(tmp / "eval.csv"))
        assert {(m, r) for m, r, _ in rows} >= {("dfno", 32), ("bicubic", 32)}

        inp = tmp / "in.grd1"
        dfno.write_grd1(str(inp), [1, 8, 8], x[0].ravel().tolist())
        shape, flat = dfno.predict(str(ckpt), str(inp), 64, 64, str(tmp / "out.grd1"))
        assert shape == [1, 64, 64] and np.isfinite(flat).all()

        try:
            dfno.read_grd1(str(tmp / "missing.grd1"))
        except dfno.DfnoError:
            pass
        else:
            raise AssertionError("missing file should raise DfnoError")

    print("python smoke test ok")


if __name__ == "__main__":
    sys.exit(main())
