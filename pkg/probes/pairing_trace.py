from __future__ import annotations
import os, sys
from collections import Counter
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
SRC = ROOT / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

from dejavu.report import read_trace

# --- knobs (env or argv[1]) ---
TRACE = sys.argv[1] if len(sys.argv) > 1 else os.environ.get("DEJAVU_TRACE", "out/trace.jsonl")
SHOW  = int(os.environ.get("DEJAVU_SHOW_TUPLES", "0"))    # also print the first N tuples

def ms(ns:int)->str:
    return f"{ns/1e6:.3f}ms"

def fmt_tuple(r)->str:
    mem = " ".join(f"{m['stream']}#{m['seq']}(content {m['payload']}{', forged' if m['forged'] else ''})"
                   for m in r["members"])
    return f"t_sys={ms(r['t_sys'])} spread={ms(r['spread'])} offsets={r['offsets']} | {mem}"

def main():
    recs = read_trace(TRACE)
    tuples = [r for r in recs if r["kind"] == "tuple"]
    if not tuples:
        print(f"[PAIRING] {TRACE}: no tuples"); return
    hist = {}
    for r in tuples:
        for name, off in r["offsets"].items():
            hist.setdefault(name, Counter())[off] += 1
    print(f"[PAIRING] {TRACE}: {len(tuples)} tuples")
    for name, c in sorted(hist.items()):
        print(f"  {name:<10} " + "  ".join(f"{k:+d}:{v}" for k, v in sorted(c.items())))
    first = next((r for r in tuples if any(r["offsets"].values()) or any(m["forged"] for m in r["members"])), None)
    print("  first attacked: " + (fmt_tuple(first) if first else "none"))
    for r in tuples[:SHOW]:
        print("  " + fmt_tuple(r))
    notes = Counter(r["text"] for r in recs if r["kind"] == "note")
    if notes:
        print("  notes: " + ", ".join(f"{k}={v}" for k, v in sorted(notes.items())))

if __name__ == "__main__":
    main()
