"""
The same pipeline from the command line
=======================================

Drives ``forni phantom``, ``forni estimate`` and ``forni evaluate`` through
their Python entry point and prints the two reports side by side.
"""

import tempfile
from pathlib import Path

from forni.cli import main

work = Path(tempfile.mkdtemp(prefix="forni-demo-"))
ph = work / "phantom"
main(["phantom", "--snr", "20", "--seed", "42", "--out-dir", str(ph)])

dwi = ["--dwi", str(ph / "dwi.nii"), "--bval", str(ph / "dwi.bval"),
       "--bvec", str(ph / "dwi.bvec"), "--mask", str(ph / "mask.nii")]
main(["estimate", *dwi, "--alpha", "0", "--out-dir", str(work / "cfari")])
main(["estimate", *dwi, "--alpha", "0.8", "--beta", "0.5", "--mu", "3.0",
      "--out-dir", str(work / "forni")])

for name in ("cfari", "forni"):
    print(f"== {name}")
    main(["evaluate", "--est", str(work / name / "fos"), "--truth", str(ph / "truth"),
          "--out", str(work / f"{name}.csv")])

print("outputs in", work)
