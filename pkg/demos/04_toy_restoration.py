"""End to end on the toy set: render, train, simulate, restore, evaluate.

This drives the command-line tool exactly as a user would, in a temporary
directory, and prints the sweep table for the buffer-conditioned model and
for the buffer-free ablation. Takes about half a minute.

    python demos/04_toy_restoration.py [workdir]
"""

import sys
import tempfile
from pathlib import Path

from lumen.cli import main

root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="lumen-demo-"))
data = root / "toy"


def run(*args):
    print("$ lumen", " ".join(str(a) for a in args))
    assert main([str(a) for a in args]) == 0


run("toygen", "--n-ids", 8, "--per-id", 6, "--seed", 0, "--out", data)
run("train", "--data", data, "--iters", 500, "--seed", 0, "--out", root / "buffers.dpgd")
run("train", "--data", data, "--iters", 500, "--seed", 0, "--no-buffers", "--out", root / "plain.dpgd")

fast = '{"sampler": "ddim", "steps": 100, "eta": 0}'
run("sweep", "--probes", data, "--checkpoint", root / "buffers.dpgd", "--ppp", "5,13,26", "--gallery-sizes", "1,3,6",
    "--sampler", fast, "--out", root / "sweep_buffers")
run("sweep", "--probes", data, "--checkpoint", root / "plain.dpgd", "--ppp", "5,13,26", "--gallery-sizes", "6",
    "--sampler", fast, "--out", root / "sweep_plain")

for name in ("sweep_buffers", "sweep_plain"):
    print(f"\n{name}")
    print((root / name / "sweep.csv").read_text())
print("artifacts in", root)
