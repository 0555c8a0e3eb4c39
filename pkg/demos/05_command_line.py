"""
The command-line workflow
=========================

Every stage is also a subcommand of ``weathergeo``: prepare a dataset,
caption it, train, evaluate, and compare reports. This script drives the
same entry point in-process inside a temporary directory. Running the
chain twice with the same seed gives byte-identical outputs.
"""

# %%
import tempfile
from pathlib import Path

from weathergeo.cli import main

small = ["--preset", "toy-overfit", "--set", "train.epochs=5", "--set", "seed=7"]

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    data, run = tmp / "data", tmp / "run"
    main(["prepare", "--toy", "--out", str(data)] + small)
    for split in ("train", "test"):
        main(["generate-captions", "--dataset", str(data), "--split", split] + small)
    main(["train", "--data", str(data), "--out", str(run)] + small)
    ckpt = sorted(run.glob("ckpt_epoch_*"))[-1]
    print("checkpoint:", ckpt.name)

    # %%
    # Evaluate prints the per-condition table and writes JSON next to it.
    main(["evaluate", "--ckpt", str(ckpt), "--direction", "d2s",
          "--out", str(run / "reports" / "d2s.json")])

    # %%
    # A failure prints a single JSON line on stderr and exits with status 1.
    code = main(["evaluate", "--ckpt", str(tmp / "missing"), "--direction", "s2d",
                 "--out", str(tmp / "x.json")])
    print("exit status:", code)

    # %%
    # Synthesise weather on a directory of images.
    main(["synthesize-weather", "--in", str(data / "test" / "drone"),
          "--out", str(tmp / "foggy"), "--condition", "Fog+Snow", "--intensity", "0.8"])
    print(len(list((tmp / "foggy").rglob("*.png"))), "images written")
