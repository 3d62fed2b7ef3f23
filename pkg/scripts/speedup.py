"""Matched excess risk across batch sizes (R ~ 1/b) and machine counts (K R ~ 1/M)."""
from _common import parser, save

from sgdlab.experiments import batch_speedup_sweep, machine_speedup_sweep
from sgdlab.problems import GeneratorSpec

if __name__ == "__main__":
    args = parser(__doc__).parse_args()
    reps = args.replicates or 32
    bs = batch_speedup_sweep(GeneratorSpec("LeastSquares", 128, 1024, noise_level=1.5, decay=1.5), [2, 4, 8, 16],
                             "high_noise", c=4, n_replicates=reps, seed=args.seed, threads=args.threads)
    ms = machine_speedup_sweep(GeneratorSpec("LeastSquares", 128, 256, noise_level=1.0, decay=1.5, x_cap=2.0),
                               [1, 2, 4], K=4, c=4, n_replicates=reps, seed=args.seed, threads=args.threads)
    save(args.out, "speedup_batch", bs)
    save(args.out, "speedup_machines", ms)
    for sweep in (bs, ms):
        base = sweep.points[0][1].excess_risk
        for v, pt in sweep.points:
            print(f"{sweep.axis}={v:3d} steps={pt.steps:5d} excess={pt.excess_risk:.5f} ratio={pt.excess_risk / base:.3f}")
