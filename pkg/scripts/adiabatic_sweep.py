"""Cooling factor against ramp time for the region-1 expansion, losses off.

    python scripts/adiabatic_sweep.py --n 1000 --ramps 0.002,0.05,0.1,0.3,0.55
"""

import argparse
import json
import math
import time
from dataclasses import replace

from microtrap.analysis import cooling_sweep, optimal_cooling_factor
from microtrap.dynamics import LossModelConfig
from microtrap.geometry_fields import FieldModel
from microtrap.protocols import ExperimentConfig, ProtocolConfig, SourceConfig, default_electrodes, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--dt", type=float, default=2e-6)
    ap.add_argument("--e-load", type=float, default=1e6)
    ap.add_argument("--e-offset", type=float, default=4e5)
    ap.add_argument("--step", type=float, default=2e6, help="pre-ramp region-1 offset field (V/m)")
    ap.add_argument("--t-total", type=float, default=0.6)
    ap.add_argument("--ramps", default="0.002,0.05,0.1,0.2,0.3,0.55")
    ap.add_argument("--perimeter", default="quadrature")
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--json", help="write the table here")
    args = ap.parse_args()

    ramps = [float(r) for r in args.ramps.split(",")]
    base = ExperimentConfig(
        electrode_base=default_electrodes(e_offset=args.e_offset),
        model=FieldModel(perimeter=args.perimeter),
        source=SourceConfig(e_load=args.e_load, n_molecules=args.n),
        loss=LossModelConfig.lossless(),
        protocol=ProtocolConfig(e_load=args.e_load, t_total_constraint=args.t_total, t_unload=0.0,
                                step_offset_region1=args.step),
        dt=args.dt,
    )
    reports = []
    for tr in ramps:
        t0 = time.time()
        _, rep = run_experiment("adiabatic", replace(base, protocol=base.protocol.with_ramp(tr)), args.seed)
        reports.append(rep)
        print(f"t_ramp {tr:6.3f} s  T {rep.temperature_post * 1e3:6.1f} mK  alive {rep.counts['alive']:5d}  "
              f"spill {rep.counts['lost_barrier']:4d}  region1 {rep.migrated_fraction:.3f}  ({time.time() - t0:.0f} s)",
              flush=True)
    res = cooling_sweep(ramps, [r.temperature_post for r in reports])
    f_opt = optimal_cooling_factor(3)
    for r, c in zip(reports, res):
        err = c.cooling_factor * math.sqrt(4.0 / (3 * r.n_alive_at_unload))
        print(f"F({c.t_ramp:.3f}) = {c.cooling_factor:.3f} +- {err:.3f}   yield {c.yield_fraction:.2f}")
    print(f"F_opt(d=3) = {f_opt:.4f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump([{**vars(c), "counts": r.counts} for c, r in zip(res, reports)], fh, indent=1)


if __name__ == "__main__":
    main()
