#!/usr/bin/env python3
"""Builds the sdforge extension module and exercises every exposed surface."""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]


def import_sdforge():
    subprocess.run(["cargo", "build", "-p", "sdforge-py"], cwd=ROOT, check=True)
    staging = Path(tempfile.mkdtemp(prefix="sdforge-py-"))
    for name in ("libsdforge.so", "libsdforge.dylib"):
        lib = ROOT / "target" / "debug" / name
        if lib.exists():
            shutil.copy2(lib, staging / "sdforge.so")
            break
    else:
        sys.exit("no built extension library found under target/debug")
    sys.path.insert(0, str(staging))
    import sdforge

    return sdforge


def logistic(z):
    return 1.0 / (1.0 + math.exp(-z))


def stress_reference(v, b, p, e):
    return (
        2.0 * logistic((b - 30.0) / 12.0)
        + 1.5 * logistic((p - 12.0) / 6.0)
        - 1.8 * logistic((v - 18.0) / 10.0) * (1.0 - 0.5 * logistic((e - 3.8) / 0.15))
        + 0.35 * logistic((b - 40.0) / 10.0) * logistic((e - 3.6) / 0.2) * math.sin(0.45 * v)
    )


def main():
    sd = import_sdforge()

    for args in [(18.0, 30.0, 12.0, 3.8), (10.22, 24.7, 10.82, 3.5), (60.0, 5.0, 40.0, 5.0)]:
        got = sd.stress_surrogate(*args)
        want = stress_reference(*args)
        assert abs(got - want) < 1e-12, f"stress{args}: {got} vs {want}"

    try:
        sd.stress_surrogate(-1.0, 30.0, 12.0, 3.8)
    except ValueError:
        pass
    else:
        raise AssertionError("out-of-range vegetation must raise ValueError")

    design = sd.lhs(12, 3, 4)
    assert len(design) == 12 and all(len(p) == 3 for p in design)
    for d in range(3):
        bins = sorted(min(int(p[d] * 12), 11) for p in design)
        assert bins == list(range(12)), "one point per axis bin"
    scaled = sd.lhs(8, 2, 4, bounds=[(10.0, 20.0), (-1.0, 1.0)])
    assert all(10.0 <= p[0] <= 20.0 and -1.0 <= p[1] <= 1.0 for p in scaled)

    assert abs(sd.relative_density(200, 3) - 5.848) < 1e-3
    assert sd.relative_density(1, 5) == 1.0

    assert abs(sd.r_squared([1.0, 2.0, 3.0], [1.0, 2.0, 4.0]) - 0.5) < 1e-12

    points = sd.lhs(500, 2, 9)
    labels = [0.2 <= p[0] <= 0.5 and 0.6 <= p[1] <= 0.9 for p in points]
    outputs = [1.0 if l else -1.0 for l in labels]
    boxes = sd.discover(points, outputs, labels=labels)
    assert boxes, "oracle data must yield at least one box"
    top = boxes[0]
    assert top.density >= 0.85 and top.coverage >= 0.85, repr(top)
    (lo0, hi0), (lo1, hi1) = top.limits
    assert abs(lo0 - 0.2) < 0.1 and abs(hi0 - 0.5) < 0.1, repr(top)
    assert abs(lo1 - 0.6) < 0.1 and abs(hi1 - 0.9) < 0.1, repr(top)
    assert top.contains([0.35, 0.75]) and not top.contains([0.9, 0.1])

    leaves = sd.cart_boxes(points, outputs, labels=labels)
    assert leaves and all(leaf.density >= 0.8 for leaf in leaves)

    xs = sd.lhs(20, 1, 42)
    ys = [math.sin(2.0 * math.pi * p[0]) for p in xs]
    gp = sd.GpModel.fit_fixed(xs, ys, signal_variance=1.0, length_scales=[0.1], noise_variance=0.0)
    means, variances = gp.predict(xs)
    assert max(abs(m - y) for m, y in zip(means, ys)) < 1e-6
    assert max(variances) < 1e-6
    tuned = sd.GpModel.fit(xs, ys, budget=200, seed=7)
    grid = [[i / 99.0] for i in range(100)]
    tuned_means, _ = tuned.predict(grid)
    rmse = math.sqrt(
        sum((m - math.sin(2.0 * math.pi * q[0])) ** 2 for m, q in zip(tuned_means, grid)) / 100.0
    )
    assert rmse < 0.1, f"tuned GP RMSE {rmse}"
    assert math.isfinite(tuned.log_marginal_likelihood)

    exp = sd.Experiment.load(str(ROOT / "experiments" / "norrebro.experiment"))
    assert exp.dim_names == ["building", "person", "extraversion"]
    pts, deltas, vulnerable = exp.simulate(n=60)
    assert len(pts) == len(deltas) == len(vulnerable) == 60
    assert all((d >= 0.0) == v for d, v in zip(deltas, vulnerable))
    again, _, _ = exp.simulate(n=60)
    assert pts == again, "same seed, same design"

    counts, threshold = exp.sweep([float(d) for d in range(1, 31)], n=150)
    assert len(counts) == 30 and threshold is not None

    run = exp.adaptive(n_init=12, pool_size=60, n_iter=2, batch=2, seed=5, budget=16)
    assert run.true_calls == 16 and run.iterations == 2
    assert len(run.points) == 16 == len(run.deltas) == len(run.labels)
    mid_means, mid_vars = run.model.predict([[30.0, 12.0, 3.8]])
    assert len(mid_means) == 1 and mid_vars[0] >= 0.0
    assert isinstance(run.boxes, list)

    print("smoke test passed")


if __name__ == "__main__":
    main()
