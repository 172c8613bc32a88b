"""Smoke test for the hypok extension module."""
import json
import math

import hypok


def close(a, b, tol):
    assert abs(a - b) <= tol * max(1.0, abs(b)), (a, b)


def main():
    heat = hypok.Operator.heat(1)
    # 1D kernel for u_t = u'': (4 pi t)^{-1/2} exp(-|x - y|^2 / 4t)
    close(heat.kernel([0.0], [1.0], 0.5), math.exp(-0.5) / math.sqrt(2 * math.pi), 1e-12)

    k = hypok.Operator.kolmogorov(1)
    assert k.dim == 2 and k.q == [[1.0, 0.0], [0.0, 0.0]] and k.is_hypoelliptic()
    g = k.gramians(1.0)
    close(g["det_tk"], 1.0 / 12.0, 1e-12)

    value, _ = heat.fractional_power(0.5, [0.0])
    close(value, 2.0 / math.sqrt(math.pi), 1e-6)

    per = heat.s_perimeter([0.0], [1.0], 0.25)
    assert per["consistent"] and per["value"] > 0

    assert hypok.Operator.ornstein_uhlenbeck(2).harnack_factor(0.5, [0.1, 0.2], 0.3, 1.0, [0.0, 0.0], 0.5, 2.0) > 1.0
    assert hypok.bessel_kernel(0.5, 0.2, 0.3, 1.0) > 0.0

    try:
        hypok.Operator([[1.0, 2.0], [0.0, 1.0]], [[0.0, 0.0], [0.0, 0.0]])
    except ValueError:
        pass
    else:
        raise AssertionError("non-symmetric Q accepted")

    cfg = json.dumps({"preset": "kolmogorov", "n": 1, "checks": ["kernel", "harnack_sharpness"]})
    report = hypok.verify(cfg)
    assert report["summary"]["failed"] == 0, report["summary"]
    assert hypok.verify_csv(cfg) == hypok.verify_csv(cfg)
    print(f"ok: {report['summary']['total']} checks passed")


if __name__ == "__main__":
    main()
