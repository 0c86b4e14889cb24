#!/usr/bin/env python3
"""Smoke test for the nonsmooth_nh_py extension module.

Builds nothing itself: it locates the cdylib produced by
`cargo build -p nonsmooth-nh-py` (release preferred), stages it under an
importable name, and exercises the main entry points.
"""

import json
import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parents[1]


def load_module():
    candidates = [
        ROOT / "target" / profile / name
        for profile in ("release", "debug")
        for name in ("libnonsmooth_nh_py.so", "nonsmooth_nh_py.so", "libnonsmooth_nh_py.dylib")
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit(
            "extension not built; run `cargo build -p nonsmooth-nh-py` (or --release) first"
        )
    stage = pathlib.Path(tempfile.mkdtemp(prefix="nonsmooth_nh_py_"))
    shutil.copy2(built, stage / "nonsmooth_nh_py.so")
    sys.path.insert(0, str(stage))
    import nonsmooth_nh_py

    return nonsmooth_nh_py


def main():
    m = load_module()

    names = [name for name, _, _ in m.list_scenarios()]
    assert names == [
        "rolling_disk",
        "spherical_pendulum",
        "reduced_pendulum",
        "free_billiard",
        "rigid_body_suslov",
    ], names
    for _, _, defaults in m.list_scenarios():
        json.loads(defaults)  # every schema is valid JSON

    # Billiard: impacts resolved, energy conserved, audit green.
    sim = m.simulate("free_billiard", t_final=5.0, audit=True)
    assert sim.mode == "full"
    assert len(sim.t) == len(sim.q) == len(sim.energy)
    assert len(sim.events) >= 1
    for ev in sim.events:
        assert abs(ev.e_plus - ev.e_minus) <= 1e-10
        # Specular reflection against the outward normal of the unit disk.
        n = ev.q
        scale = math.hypot(*n)
        n = [c / scale for c in n]
        dot = sum(a * b for a, b in zip(ev.v_minus, n))
        oracle = [a - 2.0 * dot * b for a, b in zip(ev.v_minus, n)]
        assert max(abs(a - b) for a, b in zip(ev.v_plus, oracle)) <= 1e-9
    assert sim.audit_passed is True
    report = json.loads(sim.audit_json)
    assert any(c["name"] == "energy_drift" for c in report["checks"])

    # Constrained pendulum: constraint residual stays tiny.
    sim = m.simulate(
        "spherical_pendulum",
        params=json.dumps({"cylinder_radius": 0.8}),
        t_final=2.0,
        audit=True,
    )
    assert max(sim.constraint_residual) <= 1e-8
    assert len(sim.events) >= 1
    assert sim.audit_passed is True

    # Reduced pendulum: vertical momentum conserved between impacts.
    sim = m.simulate("reduced_pendulum", params=json.dumps({"xi0": 0.5}), t_final=2.0)
    rho = [row[-1] for row in sim.p]
    assert abs(rho[0] - rho[len(rho) // 4]) <= 1e-8

    # Rigid body on so(3): Casimir |mu|^2 conserved.
    sim = m.simulate(
        "rigid_body_suslov",
        params=json.dumps({"suslov": False, "xi0": [0.35, -0.6, 0.45]}),
        t_final=2.0,
    )
    c0 = sum(x * x for x in sim.p[0])
    drift = max(abs(sum(x * x for x in row) - c0) for row in sim.p)
    assert drift <= 1e-9, drift

    # Reset-map separation identity at a boundary point.
    sep = m.reset_separation("free_billiard", [1.0, 0.0], [1.0, 0.5])
    assert abs(sep - 2.0) <= 1e-12

    print("smoke test OK")


if __name__ == "__main__":
    main()
