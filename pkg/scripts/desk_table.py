"""Layer-wise errors of full PEEL on the desk ResNet-18, mean +- std over seeds.

Writes the table to standard output and, with --out, a JSON report holding
every run's per-block and image errors.
"""

import argparse
import json
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from peel.forward import network_forward
from peel.imageio import read_image
from peel.metrics import json_safe
from peel.pipeline import error_table, format_table, peel
from peel.presets import desk_configs, desk_resnet18

FACE = Path(__file__).resolve().parents[1] / "tests" / "data" / "face64.ppm"


def one_run(seed, model_seed, image):
    net = desk_resnet18(model_seed)
    trace = network_forward(read_image(image), net)
    block_cfg, shallow_cfg = desk_configs(seed)
    t = time.perf_counter()
    run = peel(trace.final, net, block_cfg, shallow_cfg, truth=trace,
               callback=lambda i, r: print(f"seed {seed} {r.block}: {r.relative_error:.2e}", flush=True))
    return run, time.perf_counter() - t


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2], help="solver seeds")
    ap.add_argument("--model-seed", type=int, default=0)
    ap.add_argument("--image", default=str(FACE))
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default=None, help="JSON report path")
    args = ap.parse_args()

    with ProcessPoolExecutor(args.jobs) as pool:
        results = list(pool.map(one_run, args.seeds, [args.model_seed] * len(args.seeds), [args.image] * len(args.seeds)))
    runs = [r for r, _ in results]
    print(format_table(error_table(runs)))
    print(f"wall time per run: {', '.join(f'{t:.0f} s' for _, t in results)}")
    if args.out:
        report = {"seeds": args.seeds, "runs": [r.report_dict() for r in runs], "wall_time": [t for _, t in results]}
        Path(args.out).write_text(json.dumps(json_safe(report), indent=2))


if __name__ == "__main__":
    main()
