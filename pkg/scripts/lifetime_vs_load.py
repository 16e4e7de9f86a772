"""Trap population decay with Majorana threshold losses for several loading fields.

The wedge is switched off so the field zeros above alternate stripes are
exposed.  Hotter loads (higher e_load) cross the zero tubes more often.

    python scripts/lifetime_vs_load.py --n 2000 --loads 2e6,3e6
"""

import argparse

import numpy as np

from microtrap.analysis import fit_exponential_lifetime
from microtrap.dynamics import LossModelConfig, Status, propagate
from microtrap.geometry_fields import TrapGeometry
from microtrap.protocols import ProtocolConfig, SourceConfig, build_storage_schedule, default_electrodes, load_ensemble


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--dt", type=float, default=2e-6)
    ap.add_argument("--hold", type=float, default=0.1)
    ap.add_argument("--loads", default="2e6,3e6")
    ap.add_argument("--e-critical", type=float, default=2e3)
    ap.add_argument("--wedge", type=float, default=0.0)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    geo = TrapGeometry()
    base = default_electrodes(wedge_bias=args.wedge)
    for e_load in (float(v) for v in args.loads.split(",")):
        sched, times = build_storage_schedule(ProtocolConfig(e_load=e_load, t_hold=args.hold, t_unload=0.0), base)
        ens = load_ensemble(SourceConfig(e_load=e_load, n_molecules=args.n), seed=args.seed, electrodes=sched.at(0.0))
        snaps = times.closed + np.linspace(0.0, args.hold, 8)
        prop = propagate(ens, sched, geo, LossModelConfig(e_critical=args.e_critical), args.dt,
                         times.closed + args.hold, args.seed, t_start=0.0, snapshot_times=snaps)
        alive = (prop.snapshot_status == Status.ALIVE).sum(axis=1)
        fit = fit_exponential_lifetime(np.column_stack([snaps - times.closed, alive]), weighting="poisson")
        print(f"e_load {e_load:.2e} V/m: tau = {fit.tau:.3f} +- {fit.tau_err:.3f} s   alive {list(alive)}   "
              f"{prop.ensemble.counts()}")


if __name__ == "__main__":
    main()
