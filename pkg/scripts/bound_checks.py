"""Monte-Carlo stability and optimization quantities against their bounds."""
from _common import parser, save, save_json

from sgdlab.experiments import check_gen_pl, check_opt_mb_convex, pl_rate_sweep, stability_bound_checks
from sgdlab.optimizers import LocalConfig, MinibatchConfig, StepSchedule
from sgdlab.problems import GeneratorSpec, draw_examples, make_instance
from sgdlab.sampling import StreamKey

if __name__ == "__main__":
    args = parser(__doc__).parse_args()
    reps, s = args.replicates or 64, args.seed
    kw = dict(n_replicates=reps, index_subsample=32, threads=args.threads)
    ls = GeneratorSpec("LeastSquares", 50, 256, noise_level=0.5)
    p = make_instance(ls)
    ridge = GeneratorSpec("RidgeLeastSquares", 20, 256, noise_level=0.5, reg=0.5)
    pr = make_instance(ridge)
    qpl = GeneratorSpec("QuadraticPL", 512, 256, noise_level=0.5)
    pq = make_instance(qpl, draw_examples(qpl, StreamKey(s, ("data",))))
    runs = [
        (p, ls, MinibatchConfig(8, 100, StepSchedule.constant(0.5), s),
         ["MB_CONVEX_L1", "MB_CONVEX_L2", "MB_CONVEX_L2_SIMPLE", "MB_CONVEX_L2_STRONGSB"]),
        (pr, ridge, MinibatchConfig(4, 200, StepSchedule.poly_strong(4 * pr.L / pr.mu, pr.mu), s),
         ["MB_STRONG_L1", "MB_STRONG_L2"]),
        (pq, qpl, MinibatchConfig(4, 30, StepSchedule.constant(0.2), s), ["MB_NONCONVEX_L1"]),
        (p, ls, LocalConfig(4, 4, 25, StepSchedule.constant(0.5), s), ["LOCAL_L1", "LOCAL_L2"]),
    ]
    checks = []
    for inst, spec, cfg, ids in runs:
        checks += stability_bound_checks(inst, spec, cfg, ids, **kw)[1]
    checks.append(check_opt_mb_convex(ls, MinibatchConfig(4, 200, StepSchedule.constant(0.9), s), n_replicates=reps))
    gen = GeneratorSpec("RidgeLeastSquares", 10, 256, noise_level=0.5, reg=0.05)
    pg = make_instance(gen)
    checks.append(check_gen_pl(gen, MinibatchConfig(2, 400, StepSchedule.poly_strong(4 * pg.L / pg.mu, pg.mu), s),
                               n_replicates=reps))
    for c in checks:
        print(f"{c.name:22s} measured {c.lhs:.4g} (se {c.lhs_se:.2g})  bound {c.rhs.value:.4g}  {c.verdict.value}")
    save_json(args.out, "bound_checks", {"checks": [c.to_dict() for c in checks]})
    for name, spec, Rs in (("pl_interpolating", GeneratorSpec("QuadraticPL", 512, 8, noise_level=0.5), [50, 100, 200, 400, 800]),
                           ("pl_noisy", GeneratorSpec("LeastSquares", 10, 256, noise_level=0.5), [200, 400, 800, 1600, 3200])):
        sweep = pl_rate_sweep(spec, Rs, seed=s)
        save(args.out, name, sweep)
        print(f"{name}: slope of F_S(w_R+1) - F_S(w_S) in R {sweep.fitted_exponent:+.3f}")
