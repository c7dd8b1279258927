from __future__ import annotations
import os, sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
SRC = ROOT / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

from dejavu.report import read_report

# --- knobs (env or argv[1]) ---
REPORT = sys.argv[1] if len(sys.argv) > 1 else os.environ.get("DEJAVU_REPORT", "out/grid.csv")
METRIC = os.environ.get("DEJAVU_METRIC", "recall")    # mean_abs_offset | precision | recall | f1 | mota | idsw

def varies(grid, axis)->bool:
    # axis 0: along k_cam with k_lidar fixed; axis 1: along k_lidar with k_cam fixed
    lines = {}
    for (kc, kl), v in grid.items():
        lines.setdefault(kl if axis == 0 else kc, set()).add(v)
    return any(len(vs) > 1 for vs in lines.values())

def main():
    rows = read_report(REPORT)
    if not rows:
        print(f"[GRID] {REPORT}: empty"); return
    grid = {(int(r["k_cam"]), int(r["k_lidar"])): r[METRIC] for r in rows}
    kcs = sorted({k for k, _ in grid})
    kls = sorted({k for _, k in grid})
    print(f"[GRID] {rows[0]['scenario']} {rows[0]['mode']} {rows[0]['delay_kind']} metric={METRIC}")
    print("cam\\lidar".rjust(10) + " " + " ".join(f"{kl:>9}" for kl in kls))
    for kc in kcs:
        print(f"{kc:>10} " + " ".join(f"{(grid.get((kc, kl)) or '-'):>9}" for kl in kls))
    print(f"  varies along k_cam:   {'yes' if varies(grid, 0) else 'no'}")
    print(f"  varies along k_lidar: {'yes' if varies(grid, 1) else 'no'}")

if __name__ == "__main__":
    main()
