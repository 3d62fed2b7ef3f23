"""Excess risk vs n for the four recipes (minibatch high/low noise, strongly convex, local convex)."""
from _common import parser, save

from sgdlab.experiments import sample_size_sweep
from sgdlab.problems import GeneratorSpec

NS = [64, 128, 256, 512]
RECIPES = {
    "high_noise": (GeneratorSpec("LeastSquares", 128, 64, noise_level=1.0, decay=1.5), dict(b=2, c=4), 32),
    "low_noise": (GeneratorSpec("LeastSquares", 256, 64, noise_level=0.02, decay=1.5), dict(b=2, c=1), 32),
    "strong": (GeneratorSpec("RidgeLeastSquares", 8, 64, noise_level=0.5, reg=1.0), dict(b=2), 64),
    "local_convex": (GeneratorSpec("LeastSquares", 128, 64, noise_level=1.0, decay=1.5, x_cap=2.0),
                     dict(M=2, K=4, c=2), 32),
}

if __name__ == "__main__":
    args = parser(__doc__).parse_args()
    for name, (spec, kw, reps) in RECIPES.items():
        sweep = sample_size_sweep(spec.with_(seed=args.seed), NS, name, n_replicates=args.replicates or reps,
                                  seed=args.seed, threads=args.threads, **kw)
        save(args.out, f"risk_{name}", sweep)
        print(f"{name:13s} slope {sweep.fitted_exponent:+.3f} +/- {sweep.ci:.3f}")
