"""MMC tracking errors for both circulating-current reference rules.

    python scripts/mmc_references.py [--t-end 1.0]

``lossless`` sets i_diff from the AC power alone; ``arm_loss`` also pays for
the arm resistance. The gap between them shows how much of the capacitor
voltage error comes from the reference rather than the controller.
"""

import argparse

from passivity_pi.config import load_preset
from passivity_pi.mmc import summarize
from passivity_pi.sim import run_closed_loop


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--t-end", type=float, default=1.0)
    args = ap.parse_args()
    print(f"{'i_diff rule':>11} {'i_diff ref':>10} {'i_diff mean':>11} {'i_v err %':>9} {'u_CU err %':>10} "
          f"{'u_CL err %':>10} {'rank flags':>10}")
    for rule in ("lossless", "arm_loss"):
        sc = load_preset("mmc_fig7", [f"plant.params.idiff_ref={rule}", f"sim.t_end={args.t_end}"])
        s = summarize(run_closed_loop(sc), sc)
        print(f"{rule:>11} {s['i_diff_ref']:10.4f} {s['i_diff_mean']:11.4f} {100 * s['i_v_rms_error_rel']:9.3f} "
              f"{100 * s['u_CU_rms_error_rel']:10.3f} {100 * s['u_CL_rms_error_rel']:10.3f} "
              f"{s['rank_deficient_samples']:10d}")


if __name__ == "__main__":
    main()
