"""One predict + update cycle on the 5100-state quadrant with a dense covariance.

Prints a JSON line with timings (s) and the peak resident memory (MB).
"""

import argparse
import json
import resource
import time

import numpy as np

from pivotfusion.config import load_bundled
from pivotfusion.ekf import predict, update
from pivotfusion.pivot import measured_nodes, pivot_position
from pivotfusion.scenarios import build, prior


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dt", type=float, default=1920.0, help="prediction interval, s")
    ap.add_argument("--psd", action="store_true", help="also verify P is PSD after each phase")
    args = ap.parse_args()

    cfg = load_bundled("real_quadrant").model
    t_start = time.perf_counter()
    model, sched, output = build(cfg)
    belief = prior(cfg, model.grid)
    t0 = time.perf_counter()
    belief = predict(belief, sched.forcing(0.0, args.dt), args.dt, model, cfg.noise(), psd=args.psd)
    t1 = time.perf_counter()
    st = pivot_position(args.dt, cfg.pivot, model.grid)
    nodes = measured_nodes(model.grid, st.sector, cfg.sensor)
    truth = np.full(model.size, cfg.x0)
    values = output.observe(truth, nodes)
    belief, rec = update(belief, values, nodes, output, cfg.noise(), psd=args.psd)
    t2 = time.perf_counter()
    rss_mb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0
    print(
        json.dumps(
            {
                "states": model.size,
                "measurements": int(len(nodes)),
                "setup_s": round(t0 - t_start, 3),
                "predict_s": round(t1 - t0, 3),
                "update_s": round(t2 - t1, 3),
                "cycle_s": round(t2 - t0, 3),
                "max_rss_mb": round(rss_mb, 1),
                "trace": belief.trace,
            }
        )
    )


if __name__ == "__main__":
    main()
