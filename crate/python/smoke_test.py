"""Smoke test for the smfvo Python extension.

Build and install it first:
    pip install --no-build-isolation ./crates/python
"""

import math
import random
import tempfile
from pathlib import Path

import smfvo_py as smfvo


def cross(a, b):
    return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]


def ray_flow(r, d, w, v):
    # [r]x w + (r r^T - I) v / d
    rw = cross(r, w)
    rv = sum(ri * vi for ri, vi in zip(r, v))
    return [rw[i] + (r[i] * rv - v[i]) / d for i in range(3)]


def check_solver():
    rng = random.Random(1)
    w, v = [0.01, -0.02, 0.005], [0.05, 0.01, 0.1]
    rays, flows, depths = [], [], []
    for _ in range(50):
        p = [rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(2, 10)]
        d = math.sqrt(sum(x * x for x in p))
        r = [x / d for x in p]
        rays.append(r)
        depths.append(d)
        flows.append(ray_flow(r, d, w, v))
    got = smfvo.solve_twist(rays, flows, depths)
    err = max(abs(a - b) for a, b in zip(got, w + v))
    assert err < 1e-9, err


def check_ate(tmp):
    gt = [(0.05 * k, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0) for k in range(101)]
    est = [(0.05 * k, k / 100.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0) for k in range(101)]
    assert abs(smfvo.ate(est, gt) - 0.578792) < 1e-6
    path = Path(tmp) / "traj.txt"
    smfvo.write_trajectory(str(path), est)
    assert path.read_text().splitlines()[0] == "0.000000000 0 0 0 0 0 0 1"
    assert smfvo.read_trajectory(str(path))[-1][1] == 1.0


def check_pipeline(tmp):
    data = Path(tmp) / "seq"
    smfvo.synth(str(data), [0.0, 0.004, 0.0, 0.0, 0.0, 0.03], frames=10, seed=2, width=320, height=240)
    est = smfvo.run(str(data), format="synth", mode="ray")
    assert len(est) == 10
    gt = smfvo.read_trajectory(str(data / "groundtruth.txt"))
    ate = smfvo.ate(est, gt, "first")
    assert ate < 0.05, ate
    return ate


def main():
    print("smfvo", smfvo.__version__)
    check_solver()
    with tempfile.TemporaryDirectory() as tmp:
        check_ate(tmp)
        ate = check_pipeline(tmp)
    print(f"smoke test passed (synthetic ATE {ate:.4f} m)")


if __name__ == "__main__":
    main()
