"""
File formats and the command line
=================================

Embeddings, score matrices and metadata round-trip through small binary
and CSV files, and every stage is reachable from the ``vocreid`` command.
This script drives the command through ``vocreid.cli.main`` so it runs
anywhere the package imports.
"""

# %%
import json
import tempfile
from pathlib import Path

from vocreid import fileio
from vocreid.cli import main

work = Path(tempfile.mkdtemp())

# %% A synthetic dataset directory: meta.csv plus one .voce file per branch
main(["synth", str(work / "ds"), "--fixture", "a2"])
print(sorted(p.name for p in (work / "ds").iterdir()))
print((work / "ds" / "meta.csv").read_text().splitlines()[:3])

# %% Header of an embedding file
raw = (work / "ds" / "vehicle.voce").read_bytes()
print("magic", raw[:4], "header bytes", raw[4:24].hex())
emb = fileio.read_embeddings(work / "ds" / "vehicle.voce")
print("shape", emb.data.shape, emb.data.dtype)

# %% Stage by stage: branch similarities, fusion, evaluation
for b in ("vehicle", "orientation", "camera"):
    main(["dist", str(work / "ds"), "--branch", b, "-o", str(work / f"{b}.vocs")])
main(["fuse", "--vehicle", str(work / "vehicle.vocs"), "--orientation", str(work / "orientation.vocs"),
      "--camera", str(work / "camera.vocs"), "-o", str(work / "fused.vocs")])
main(["eval", str(work / "ds"), str(work / "fused.vocs")])

# %% The whole ablation in one call
main(["pipeline", str(work / "ds"), "-o", str(work / "run"), "--rerank", "--track-agg"])
for line in (work / "run" / "report.jsonl").read_text().splitlines():
    rec = json.loads(line)
    print(rec["config"]["label"], round(rec["map"], 4))

# %% Errors come back as one line with a category
(work / "broken.vocs").write_bytes(b"XXXX" + bytes(28))
print("exit code", main(["eval", str(work / "ds"), str(work / "broken.vocs")]))
