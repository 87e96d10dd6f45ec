"""Bermudan swaption: value, exposure profile and CVA from three methods.

Trains the per-step networks on a reduced path count, then compares the
time-0 value with the trinomial lattice and the regression (AMC) estimator,
prints the exposure around each exercise date and the credit adjustments.

    python3 demos/bermudan_exposure.py [out_dir]

Takes about a minute on one core.  The full-size run is
`nnxva run --config bermudan.cfg`.
"""

import sys
import tempfile
from pathlib import Path

from _common import config
from nnxva.pipeline import run_pipeline


def main(out=None):
    out = Path(out or tempfile.mkdtemp(prefix="bermudan_"))
    cfg = config("bermudan.cfg", paths=2048, holdout_paths=1024, steps=400)
    nn = run_pipeline(cfg, out).results
    amc = run_pipeline(cfg, out, ["expose"], "amc").results
    lat = run_pipeline(cfg, out, ["expose"], "lattice").results["v0_lattice"]

    print(f"time-0 value   lattice {lat:10.3f}")
    print(f"               network {nn['v0_nn']:10.3f}  (SE {nn['se_nn']:.3f})")
    print(f"               AMC     {amc['v0_amc']:10.3f}  (SE {amc['se_amc']:.3f})")
    print(f"training loss  {nn['loss'][0]:.4g} -> {nn['loss'][-1]:.4g}")

    inst = cfg.instrument()
    print("\nexposure at exercise dates (network vs AMC)")
    print("  date   side       EPE nn     EPE amc      ENE nn")
    for d in inst.exercise_dates:
        for side in ("pre", "post"):
            e, _, g, _ = nn["profile_nn"].at(d, side)
            ea, _, _, _ = amc["profile_amc"].at(d, side)
            print(f"  {d:4.1f}   {side:4s} {e:11.3f} {ea:11.3f} {g:11.3f}")

    print(f"\nCVA  network {nn['cva_nn']:.4f}   AMC {amc['cva_amc']:.4f}")
    for d in cfg["analysis"]["bachelier_dates"]:
        fit = nn[f"bachelier_{d:g}"]
        print(f"Bachelier fit at {d:g}y: R2 {fit.r2:.4f}, " +
              ", ".join(f"{k} {v:.4g}" for k, v in fit.params.items()))
    print(f"\nartifacts in {out}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else None)
