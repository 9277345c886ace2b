"""
Convergence of the wall laws
============================

Solve the rough channel for a range of eps, measure the L2 error of each
approximation on the smooth cell and fit the orders. Output files land in
``demo-out/``.
"""

from walllaw.experiment import ExperimentPlan, run_experiment, write_outputs

plan = ExperimentPlan(jobs=2)
result = run_experiment(plan)

print(f"beta_bar={result.cells.beta_bar:.5f} gamma_bar={result.cells.gamma_bar:.5f}")
print("eps      " + "  ".join(f"{r.family:>11s}" for r in result.records))
for i, eps in enumerate(result.plan.epsilons):
    print(f"{eps:<8g} " + "  ".join(f"{r.l2_errors[i]:11.3e}" for r in result.records))
print("alpha    " + "  ".join(f"{r.alpha:11.4f}" for r in result.records))

write_outputs(result, "demo-out")
print("wrote demo-out/errors.csv, orders.csv, manifest.txt and plot_errors.gp")
