"""Smoke test for the pyvoltreg bindings.

Build first with `pip install --no-build-isolation -e crates/py`, then run
`python3 python/smoke.py` from the repository root.
"""

import json
import math
from pathlib import Path

import pyvoltreg as vr

DATA = Path(__file__).resolve().parent.parent / "crates" / "core" / "data"


def close(a, b, rel):
    return abs(a - b) <= rel * abs(b)


def main():
    net = vr.Network.load(str(DATA / "feeder5.json"))
    assert net.n == 5

    check = net.check()
    assert all(line["pass"] for line in check["lines"])
    assert len(check["buses"]) == net.n - 1

    central = vr.solve(net)
    assert central["classification"]["kind"] == "optimal"
    reference = central["classification"]["relaxed_objective"]

    cold = vr.dsolve(net)
    assert cold.converged and cold.status == "converged"
    assert close(cold.objective, reference, 5e-3)
    assert len(cold.voltages) == net.n and isinstance(cold.voltages[0], complex)

    hot = vr.dsolve(net, hot_start=cold)
    assert hot.converged and hot.iterations <= 2

    lossy = vr.dsolve(net, loss_prob=0.1, seed=3)
    assert lossy.converged
    assert lossy.to_dict()["messages"][1] < lossy.to_dict()["messages"][0]

    two = vr.Network.load(str(DATA / "two_bus.json"))
    exhaustive = vr.oracle(two, grid=2001)
    two_central = vr.solve(two)["classification"]["relaxed_objective"]
    assert exhaustive["feasible"]
    assert abs(exhaustive["best_loss"] - two_central) <= 1e-3

    again = vr.Network.from_json(net.to_json())
    assert json.loads(again.to_json()) == json.loads(net.to_json())

    experiment = vr.loss_experiment(net, [0.0, 0.1], [0, 1])
    assert [s["convergence_rate"] for s in experiment["summary"]] == [1.0, 1.0]

    nominal = vr.Network.load(str(DATA / "feeder5_nominal.json"))
    rows = vr.scenario(nominal, str(DATA / "irradiance_example.csv"), horizon=(600, 604))
    assert [r["minute"] for r in rows] == list(range(600, 605))

    g, b = 1.0, 2.0
    p_ik, p_ki, q_ik, q_ki = vr.line_flow(g, b, 0.2)
    h = vr.ellipse_map(g, b)
    assert abs(h[0][0] * p_ik + h[0][1] * p_ki - q_ik) < 1e-12
    bounds = vr.angle_bounds(g, b, p_flow_max=p_ik)
    assert abs(bounds["theta_p"] - 0.2) < 1e-9
    assert math.isinf(bounds["theta_l"])

    print(f"pyvoltreg smoke ok: central {reference:.6f}, distributed {cold.objective:.6f} in {cold.iterations} rounds")


if __name__ == "__main__":
    main()
