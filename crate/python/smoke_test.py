"""Smoke test for the octool extension module.

Build and install first, e.g.

    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/octool-*.whl
"""

import math

import octool


def close(a, b, tol):
    assert abs(a - b) <= tol, (a, b)


def main():
    lq = octool.Problem.builtin("lq_scalar")
    proc = octool.reference_process(lq, [0.0])
    close(octool.criterion(lq, proc), -0.5 * math.tanh(1.0), 1e-9)

    cert = octool.verify(lq, proc)
    assert cert["exit_code"] == 0, cert
    assert all(c["verdict"] == "pass" for c in cert["conditions"])

    shifted = octool.simulate_exprs(lq, ["-(exp(1 - t) - exp(t - 1))/(exp(1) + exp(-1)) + 0.1"], [0.0])
    assert octool.verify(lq, shifted)["exit_code"] == 2

    steer = octool.Problem.from_exprs("-(u1^2)/2", ["u1"], [0.0], 1.0, 1, param_dim=1, h=["x1 - p1"])
    shot = octool.shoot(steer, [0.9])
    close(shot["multipliers"]["mu"][0], 0.9, 1e-8)
    close(shot["process"].control(0.5)[0], 0.9, 1e-8)

    rep = octool.envelope(octool.Problem.builtin("steering"), [1.0], [1.0])
    close(rep["envelope"]["total"], -1.0, 1e-10)
    grad = octool.gradient(steer, [1.0])
    close(grad["gradient"][0], -1.0, 1e-8)

    study = octool.needle_study(lq, proc, [(0.2, [1.0]), (0.5, [-1.0])], [[0.01, 0.01], [0.001, 0.001]])
    rows = study["study"]["rows"]
    assert rows[1]["residual_norm"] < rows[0]["residual_norm"]

    value, partials = octool.eval_dual("x1*u1", [2.0], [3.0])
    assert value == 6.0 and partials[1:] == [3.0, 2.0]

    try:
        octool.Problem.from_exprs("-(u2^2)/2", ["u1"], [0.0], 1.0, 1)
    except ValueError as e:
        assert "u2" in str(e)
    else:
        raise AssertionError("undeclared control accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
