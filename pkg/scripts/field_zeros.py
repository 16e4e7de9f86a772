"""Locate the field zeros of the stripe + offset field and compare with (a/pi) ln(E_surf/E_off)."""

import argparse
import math

from microtrap.geometry_fields import FieldModel, TrapGeometry, find_field_zeros
from microtrap.schedule import ElectrodeConfig, RampSchedule, offset_voltage


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--v-micro", type=float, default=100.0)
    ap.add_argument("--e-offset", type=float, default=1e5)
    ap.add_argument("--wedge", type=float, default=0.0)
    ap.add_argument("--harmonics", type=int, default=1)
    args = ap.parse_args()

    geo = TrapGeometry()
    a = geo.stripe_period
    cfg = ElectrodeConfig(v_micro=args.v_micro, v_offset_region2=offset_voltage(args.e_offset, geo.gap_z),
                          wedge_bias=args.wedge)
    box = ((0.0301, 0.0331), (0.01, 0.01), (0.0, geo.gap_z / 2))
    zeros = find_field_zeros(box, 0.0, geo, RampSchedule.static(cfg), 1e3, FieldModel(n_harmonics=args.harmonics,
                                                                                   soft_perimeter=False))
    e_surf = 4 * args.v_micro / a
    if e_surf > args.e_offset:
        print(f"expected height {a / math.pi * math.log(e_surf / args.e_offset) * 1e6:.1f} um, spacing {2 * a * 1e6:.0f} um")
    for p in sorted(zeros, key=lambda q: q[0]):
        print(f"x = {p[0] * 1e3:8.4f} mm   z = {p[2] * 1e6:7.1f} um")
    print(f"{len(zeros)} zeros")


if __name__ == "__main__":
    main()
