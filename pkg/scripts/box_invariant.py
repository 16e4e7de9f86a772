"""One-dimensional box doubled in length at different speeds.

Mean kinetic energy falls by 4 when the wall moves slowly and is unchanged
when it jumps.  The crossover sits near one wall transit per particle.
"""

import argparse

import numpy as np


def box_expansion(n, t_ramp, seed=0, dt=2e-3, t_after=10.0):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=n)
    x = rng.uniform(0.0, 1.0, n)
    ke0 = np.mean(v * v)
    ramp_steps = max(int(round(t_ramp / dt)), 1)
    u = 1.0 / (ramp_steps * dt)
    for k in range(ramp_steps + int(round(t_after / dt))):
        moving = k < ramp_steps
        wall = 1.0 + u * (k + 1) * dt if moving else 2.0
        x += v * dt
        hi = x > wall
        x[hi] = 2 * wall - x[hi]
        v[hi] = (2 * u if moving else 0.0) - v[hi]
        lo = x < 0
        x[lo] = -x[lo]
        v[lo] = -v[lo]
    return np.mean(v * v) / ke0


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--ramps", default="0,0.3,1,3,10,30,100")
    args = ap.parse_args()
    for t in (float(v) for v in args.ramps.split(",")):
        print(f"t_ramp {t:7.2f}   KE ratio {box_expansion(args.n, t):.4f}")


if __name__ == "__main__":
    main()
