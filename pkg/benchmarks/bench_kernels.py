"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from jointlti.kernels import compiled_available, get_backend


def _cases():
    rng = np.random.default_rng(0)
    for d, T in ((5, 2000), (10, 2000), (25, 200)):
        A = rng.standard_normal((d, d))
        A *= 0.9 / np.max(np.abs(np.linalg.eigvals(A)))
        noise = rng.standard_normal((T, d))
        out = np.empty((T + 1, d))
        yield f"var_recursion d={d} T={T}", "var_recursion", (A, np.zeros(d), noise, out)
    for d in (8, 12, 16):
        yield f"max_sign_vertex d={d}", "max_sign_vertex", (np.ascontiguousarray(rng.standard_normal((d, d))),)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    names = ["python"] + (["compiled"] if compiled_available() else [])
    if len(names) == 1:
        print("compiled extension not built; timing the fallback only")
    print(f"{'case':32s}" + "".join(f"{n:>12s}" for n in names) + ("     speedup" if len(names) == 2 else ""))
    for label, fn, call_args in _cases():
        times = []
        for n in names:
            f = getattr(get_backend(n), fn)
            number = 1 if n == "python" and fn == "max_sign_vertex" else 10
            t = min(timeit.repeat(lambda: f(*call_args), number=number, repeat=args.repeat)) / number
            times.append(t)
        row = f"{label:32s}" + "".join(f"{t * 1e3:10.3f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
