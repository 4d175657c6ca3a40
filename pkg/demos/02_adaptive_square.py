# # Adaptive run on a smooth manufactured solution
#
# u = (x(1-x)y(1-y))^2 on the unit square.  The loop solves, estimates,
# marks with the maximum strategy and bisects until the DOF budget is spent.
# The energy error should fall like N^(-1/2) in the number N of DOFs.

# %%
import numpy as np

from biharm import MarkingStrategy, adaptive_loop, get_problem
from biharm.cli import eoc_rows, format_eoc

problem = get_problem("square-smooth")
log = adaptive_loop(problem, sigma=20.0, strategy=MarkingStrategy("maximum", 0.5),
                    max_dofs=50_000, csv_path="square_run.csv")
print("stopped by", log.stop_reason)

# %%
n, eta, err = log.column("ndof"), log.column("eta_total"), log.column("energy_err")
print(format_eoc(eoc_rows(n.astype(int).tolist(), eta.tolist(), err.tolist())))

# %% [markdown]
# The estimator is an upper bound up to a constant: the ratio err / eta
# settles quickly.  The lower bound also involves the data oscillation,
# which dominates on the first, very coarse meshes.

# %%
osc = log.column("osc")
for k in range(len(n)):
    print(f"{k:3d} {int(n[k]):7d}  err/eta={err[k] / eta[k]:.3f}"
          f"  eta/(err+osc)={eta[k] / (err[k] + osc[k]):.3f}")

# %%
slope = np.polyfit(np.log(n[-4:]), np.log(err[-4:]), 1)[0]
print(f"energy error slope over the last four iterations: {slope:.3f}")
