"""Time the compiled kernels against the plain numpy fallback.

Each mode runs in its own interpreter because the fallback is chosen at
import time through MSSG_DISABLE_NUMBA.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import json
import os
import subprocess
import sys
import time
from pathlib import Path

MODELS = Path(__file__).resolve().parent.parent / "models"


def _best(fn, repeat):
    fn()  # warm-up, includes compilation when jitted
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def worker(repeat):
    import numpy as np

    from mssg import _kernels as K
    from mssg.mixture import MixtureModel
    from mssg.solvability import find_solvable, perron_velocity
    from mssg.trajectory import type1_solve, type2_solve
    from mssg.einfty import dyson_solve

    asb = MixtureModel.load(MODELS / "asb_a3_h15.json", warn=False)
    ode = MixtureModel.load(MODELS / "ode_supersolvable.json", warn=False)
    x = find_solvable(asb, np.ones(2))
    v = perron_velocity(asb, x)
    out = {
        "jit": K.JIT_ENABLED,
        "type1_solve": _best(lambda: type1_solve(ode, np.ones(2), check_endpoint=False), repeat),
        "type2_solve": _best(lambda: type2_solve(asb, x, v, check_start=False), repeat),
        "dyson_solve": _best(lambda: dyson_solve([3, 2], [0.4, 0.6], 4.0, 0.5j), repeat),
        "poly_derivs_x1000": _best(
            lambda: [K.poly_derivs(asb.exponents, asb.coeffs, x) for _ in range(1000)], repeat
        ),
    }
    print(json.dumps(out))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.worker:
        worker(args.repeat)
        return
    rows = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, MSSG_DISABLE_NUMBA=flag)
        res = subprocess.run(
            [sys.executable, __file__, "--worker", "--repeat", str(args.repeat)],
            env=env, capture_output=True, text=True, check=True,
        )
        rows[label] = json.loads(res.stdout.strip().splitlines()[-1])
    print(f"{'kernel':<20}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}")
    for key in rows["numba"]:
        if key == "jit":
            continue
        a, b = rows["numba"][key], rows["numpy"][key]
        print(f"{key:<20}{a:>12.4g}{b:>12.4g}{b / a:>10.1f}")


if __name__ == "__main__":
    main()
