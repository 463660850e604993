"""Compare the linear and tanh PI laws on the boost PFC preset.

    python scripts/boost_modes.py [--dt 1e-6] [--t-end 1.5] [--loadstep]
"""

import argparse
import time

from passivity_pi.boost import summarize
from passivity_pi.config import load_preset
from passivity_pi.sim import run_closed_loop


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--dt", type=float, default=None, help="override the integration step")
    ap.add_argument("--t-end", type=float, default=None)
    ap.add_argument("--loadstep", action="store_true", help="use the 30%% load-step preset")
    args = ap.parse_args()

    preset = "boost_loadstep" if args.loadstep else "boost_table1"
    print(f"{'mode':>7} {'PF':>7} {'THD %':>7} {'settle s':>9} {'v_C V':>7} {'ripple':>7} {'recovery':>9} {'wall s':>7}")
    for mode in ("linear", "tanh"):
        overrides = [f"controller.mode={mode}"]
        if args.dt:
            overrides.append(f"sim.dt={args.dt}")
        if args.t_end:
            overrides.append(f"sim.t_end={args.t_end}")
        sc = load_preset(preset, overrides)
        t0 = time.perf_counter()
        s = summarize(run_closed_loop(sc), sc)
        wall = time.perf_counter() - t0
        rec = s["events"][0]["recovery_time"] if s["events"] else float("nan")
        print(f"{mode:>7} {s['power_factor']:7.4f} {100 * s['thd']:7.2f} {s['settling_time']:9.3f} "
              f"{s['v_C_mean_final']:7.3f} {s['v_C_ripple_pp']:7.3f} {rec:9.3f} {wall:7.1f}")


if __name__ == "__main__":
    main()
