#!/usr/bin/env python3
"""Regenerate the shipped default calibration file.

The bench curves below are synthetic placeholders chosen so that, with
the default 1.2 kg robot, hover sits near 1600 us per propeller and
hover electrical power exceeds 3x the wheel power at 1 m/s driving.
They are fitted through the same constrained pipeline users run on real
bench CSVs, so the shipped file is a genuine artifact of `calibrate`.

Run from the repo root:  python scripts/gen_default_calibration.py
"""
import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from hybridloco.actuation import fit_power_poly, fit_thrust_map
from hybridloco.config import save_calibration

# thrust: ~5.9 N per prop at 1600 us (hover for 1.2 kg), 16 N at full throttle
THRUST_A2 = 1.6875e-5
THRUST_A3 = -8.75e-10
# per-prop electrical power: 110 W at 1600 us, 280 W at full throttle
PPOW_B1 = 0.0383333333333
PPOW_B2 = 2.41666666667e-4
# per-wheel electrical power: 3 W at 318 rpm (1 m/s on 3 cm wheels)
WPOW_C1 = 9.36e-3
WPOW_C2 = 2.326e-7


def thrust_curve(pwm):
    u = pwm - 1000.0
    return THRUST_A2 * u**2 + THRUST_A3 * u**3


def prop_power_curve(pwm):
    u = pwm - 1000.0
    return PPOW_B1 * u + PPOW_B2 * u**2


def wheel_power_curve(rpm):
    return WPOW_C1 * rpm + WPOW_C2 * rpm**2


def main():
    pwm = np.linspace(1000.0, 2000.0, 41)
    rpm = np.linspace(0.0, 4775.0, 41)

    tmap, thrust_fit = fit_thrust_map(np.column_stack([pwm, thrust_curve(pwm)]))
    prop_fit = fit_power_poly(np.column_stack([pwm, prop_power_curve(pwm)]), kind="pwm")
    wheel_fit = fit_power_poly(np.column_stack([rpm, wheel_power_curve(rpm)]), kind="rpm")

    out = pathlib.Path(__file__).resolve().parents[1] / "src/hybridloco/data/default_calibration.yaml"
    save_calibration(
        out,
        thrust_fit,
        prop_fit,
        wheel_fit,
        provenance="synthetic placeholder",
        timestamp="2026-08-09T00:00:00Z",
    )
    print(f"wrote {out}")
    print(f"  thrust rmse {thrust_fit.rmse:.3e} N, hover thrust at 1600 us = {tmap.thrust(1600.0):.3f} N")
    print(f"  prop power rmse {prop_fit.rmse:.3e} W")
    print(f"  wheel power rmse {wheel_fit.rmse:.3e} W")


if __name__ == "__main__":
    main()
