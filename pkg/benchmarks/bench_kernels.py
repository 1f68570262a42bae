"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one CSV row per (kernel, backend): median seconds per call.
"""

import argparse
import timeit

import numpy as np

from wav2text import _pykernels

try:
    from wav2text import _ckernels
except ImportError:
    _ckernels = None


def cases():
    rng = np.random.default_rng(0)
    frames = rng.uniform(-1, 1, size=(80, 1, 400))
    fmap = rng.normal(size=(80, 128, 81))
    cols = rng.normal(size=(80, 128 * 25, 29))
    z = rng.normal(size=(1, 1024))
    c = rng.normal(size=(1, 256))
    gates, _, tanh_c, _ = _pykernels.lstm_forward(z, c)
    a = rng.integers(0, 32, size=120)
    b = rng.integers(0, 32, size=110)
    return {
        "im2col conv1": lambda k: k.im2col(frames, 80, 4),
        "im2col conv2": lambda k: k.im2col(fmap, 25, 2),
        "col2im conv2": lambda k: k.col2im(cols, 128, 25, 81, 2),
        "lstm_forward": lambda k: k.lstm_forward(z, c),
        "lstm_state_backward": lambda k: k.lstm_state_backward(c, gates, c),
        "lstm_output_backward": lambda k: k.lstm_output_backward(c, gates, tanh_c),
        "levenshtein 120x110": lambda k: k.levenshtein(a, b),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5, help="timing repeats per kernel")
    args = parser.parse_args()
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    print("kernel,backend,seconds_per_call")
    for name, fn in cases().items():
        for label, mod in backends:
            number = max(1, int(0.2 / max(timeit.timeit(lambda: fn(mod), number=1), 1e-7)))
            times = timeit.repeat(lambda: fn(mod), number=number, repeat=args.repeat)
            print(f"{name},{label},{np.median(times) / number:.3e}")


if __name__ == "__main__":
    main()
