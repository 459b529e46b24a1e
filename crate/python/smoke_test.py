"""Smoke test for the `hyperfedzero` extension module.

Build the module first:

    cargo build --release -p hfz-python --features extension-module

then run `python3 python/smoke_test.py`. The script copies the compiled
library next to itself under the importable name before importing it.
"""

import importlib
import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_module():
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libhyperfedzero.so"
        if lib.exists():
            break
    else:
        sys.exit("libhyperfedzero.so not found; build the hfz-python crate first")
    where = Path(tempfile.mkdtemp())
    shutil.copy(lib, where / "hyperfedzero.so")
    sys.path.insert(0, str(where))
    return importlib.import_module("hyperfedzero")


def main():
    hfz = load_module()

    rows = hfz.softmax([[0.0, 0.0], [math.log(2.0), 0.0]])
    assert rows[0] == [0.5, 0.5]
    assert abs(rows[1][0] - 2.0 / 3.0) < 1e-15

    assert abs(hfz.balancing_penalty([[0.25] * 4] * 3) - math.log(4.0)) < 1e-15
    assert hfz.balancing_penalty([[1.0, 0.0], [0.0, 1.0]]) == 0.0
    assert hfz.balancing_penalty([[1.0, 0.0], [1.0, 0.0]], alpha=2.0) == 2.0

    assert hfz.chunk_layout(10, 4) == (3, 2)
    assert hfz.aggregate([[0.0], [4.0]], [1, 3]) == [3.0]
    assert abs(hfz.collapse([[[1.0 - 1e-12, 1e-12]], [[1e-12, 1.0 - 1e-12]]]) - math.sqrt(2.0)) < 1e-9

    cfg = hfz.FLConfig()
    budget = hfz.param_budget(cfg)
    assert 0.9 <= budget["ratio"] <= 1.1, budget

    data = hfz.synthetic(4, 50, 2, 2.0, 0)
    assert len(data) == 200 and data.num_classes == 4
    part = data.partition(3, 2, 1.0, seed=0, min_per_client=5)
    assert len(part["participating"]) == 3 and len(part["non_participating"]) == 2

    try:
        hfz.FLConfig(["no_such_key=1"])
    except hfz.HfzError as e:
        assert "exit code 1" in str(e)
    else:
        raise AssertionError("unknown key accepted")

    small = hfz.FLConfig([
        "n_participating=3", "m_nonparticipating=2", "rounds=2", "local_iters=2",
        "lr=0.05", "batch_size=16", "min_per_client=5", "embed_dim=4",
        "chunk_size=16", "chunk_dim=3", "classifier_hidden=[6]",
        "extractor_hidden=[5]", "trunk_hidden=[6]", "dataset.samples_per_class=40",
    ])
    first = hfz.train(small)
    second = hfz.train(small)
    assert first["csv"] == second["csv"]
    assert first["fingerprint"] == small.fingerprint()
    assert 0.0 <= first["zacc"] <= 100.0
    print(f"ok: {small!r} zACC={first['zacc']:.2f} pACC={first['pacc']:.2f}")


if __name__ == "__main__":
    main()
