"""Time the compiled editing kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Shapes follow one edited block of the default model (64 image tokens,
hidden 64, 4 heads) plus a larger case.
"""

import argparse
import timeit

import numpy as np

from rfedit import _kernels_py

try:
    from rfedit import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    for n, d, heads, keys in ((64, 64, 4, 65), (1024, 256, 8, 1040)):
        base, edit, prior = (rng.standard_normal((n, d)).astype(np.float32) for _ in range(3))
        mask = (rng.random(n) < 0.3).astype(np.uint8)
        q = rng.standard_normal((heads, n, d // heads)).astype(np.float32)
        k = rng.standard_normal((heads, keys, d // heads)).astype(np.float32)
        scale = 1.0 / np.sqrt(d // heads)
        yield f"{n}x{d}", {
            "orthogonal_rows": lambda m, e=edit, p=prior: m.orthogonal_rows(e, p),
            "fine_edit": lambda m, b=base, e=edit, p=prior, mk=mask: m.fine_edit(b, e, p, 5.0, mk),
            "first_token_map": lambda m, q=q, k=k, s=scale: m.first_token_map(q, k, s),
        }


def best(fn, repeat):
    number = 50
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    impls = {"python": _kernels_py}
    if _kernels is not None:
        impls["cython"] = _kernels
    else:
        print("compiled kernels not built; timing the numpy fallback only")
    print(f"{'case':<10} {'kernel':<16} " + " ".join(f"{k + ' us':>12}" for k in impls) + "   speedup")
    for name, fns in cases(rng):
        for kernel, fn in fns.items():
            times = {k: best(lambda m=m: fn(m), args.repeat) * 1e6 for k, m in impls.items()}
            ratio = times["python"] / times["cython"] if "cython" in times else float("nan")
            print(f"{name:<10} {kernel:<16} " + " ".join(f"{t:12.1f}" for t in times.values()) + f"   {ratio:6.2f}x")


if __name__ == "__main__":
    main()
