"""Smoke test for the reachctl Python module.

Build and install it first:
    pip install --no-build-isolation ./crates/reachctl-py
then run:
    python python/smoke_test.py
"""

import json
import math
from pathlib import Path

import reachctl

FIXTURES = Path(__file__).resolve().parent.parent / "crates" / "reachctl" / "fixtures"


def check(cond, what):
    if not cond:
        raise SystemExit(f"FAIL: {what}")
    print(f"ok: {what}")


def main():
    di = reachctl.System.double_integrator()
    check((di.n, di.m) == (2, 1), "double integrator is 2-state, 1-input")
    check(di.is_controllable(), "double integrator is controllable")

    box = reachctl.Polytope([[0, 0], [2, 0], [2, 1], [0, 1]])
    check(math.isclose(box.volume(), 2.0), "box area")
    check(box.contains([1.0, 0.5]) and not box.contains([3.0, 0.5]), "membership")
    normals, offsets = box.halfspaces
    again = reachctl.Polytope.from_halfspaces(normals, offsets)
    check(math.isclose(again.volume(), 2.0), "halfspace round trip")
    check(di.beta(box) == [-1.0, 0.0], "beta points against x1")

    right = [[2, 0], [2, 1]]
    left = [[0, 0], [0, 1]]
    check(reachctl.analyze(di, box, right)["reachable"], "right edge is reachable")
    verdict = reachctl.analyze(di, box, left)
    check(not verdict["reachable"], "left edge is not reachable")

    ctrl = reachctl.synthesize(di, box, right)
    check(ctrl.num_pieces >= 1, f"synthesized {ctrl.num_pieces} pieces")
    piece, u = ctrl.control([0.5, 0.5])
    check(len(u) == 1, "control has one input")

    tr = reachctl.simulate(di, ctrl, [0.5, 0.5])
    check(tr["outcome"]["kind"] == "ReachedF", "trajectory reaches the target")
    check(abs(tr["states"][-1][0] - 2.0) < 1e-6, "trajectory ends on x1 = 2")

    rep = reachctl.verify(di, ctrl, nsamples=20, seed=3)
    check(rep["successes"] == 20, "all sampled states reach the target")

    reloaded = reachctl.Controller.from_json(ctrl.to_json())
    check(reloaded.control([0.5, 0.5]) == (piece, u), "controller JSON round trip")

    pb = reachctl.Problem.load(str(FIXTURES / "example1.json"))
    cut = reachctl.epsilon_cut(pb.system, pb.polytope, pb.target, pb.eps or 0.1)
    check(cut.volume() < pb.polytope.volume(), "epsilon cut trims the failure sets")
    ctrl1 = reachctl.synthesize(pb.system, pb.polytope, pb.target, pb.eps)
    rep1 = reachctl.verify(pb.system, ctrl1, nsamples=20, seed=1)
    check(rep1["successes"] == 20, "example1 controller verifies")
    json.loads(ctrl1.to_json())
    print("all checks passed")


if __name__ == "__main__":
    main()
