"""l1 stability vs t and n (convex, constant step) and the strongly convex plateau."""
from _common import parser, save

from sgdlab.experiments import stability_sweep
from sgdlab.optimizers import MinibatchConfig, StepSchedule
from sgdlab.problems import GeneratorSpec

if __name__ == "__main__":
    args = parser(__doc__).parse_args()
    reps = args.replicates or 64
    kw = dict(n_replicates=reps, index_subsample=32, threads=args.threads)
    ls = GeneratorSpec("LeastSquares", 100, 256, noise_level=0.5)
    cfg = MinibatchConfig(8, 100, StepSchedule.constant(0.05), seed=args.seed)
    for axis, values in (("rounds_R", [25, 50, 100, 200]), ("sample_n", [64, 128, 256, 512])):
        sweep = stability_sweep(ls, cfg, axis, values, **kw)
        save(args.out, f"stability_{axis}", sweep)
        print(f"l1 vs {axis}: slope {sweep.fitted_exponent:+.3f} +/- {sweep.ci:.3f}")
    ridge = GeneratorSpec("RidgeLeastSquares", 10, 256, noise_level=0.5, reg=0.05)
    plateau = stability_sweep(ridge, MinibatchConfig(4, 500, StepSchedule.constant(0.5), seed=args.seed),
                              "rounds_R", [250, 500, 1000, 2000], **kw)
    save(args.out, "stability_plateau", plateau)
    for v, est in plateau.points:
        print(f"ridge t={v:5d} l1={est.l1:.5f} +/- {est.l1_se:.5f}")
