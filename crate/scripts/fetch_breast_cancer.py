"""Write the Breast Cancer Wisconsin (Diagnostic) data as a headered CSV.

Uses the copy bundled with scikit-learn, so no network access is needed.
The target column `malignant` is 1 for malignant tumours (212 of 569 rows).

    python scripts/fetch_breast_cancer.py [out.csv]
"""

import hashlib
import sys
from pathlib import Path

from sklearn.datasets import load_breast_cancer


def main() -> None:
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "data/breast_cancer_diagnosis.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    bunch = load_breast_cancer(as_frame=True)
    frame = bunch.frame.copy()
    # sklearn encodes benign as 1; flip so the positive class is malignant
    frame["malignant"] = 1 - frame.pop("target")
    frame.columns = [c.replace(" ", "_") for c in frame.columns]
    frame.to_csv(out, index=False, float_format="%.10g")
    digest = hashlib.sha256(out.read_bytes()).hexdigest()
    positives = int(frame["malignant"].sum())
    print(f"{out}: {len(frame)} rows, {frame.shape[1] - 1} features, {positives} malignant, sha256 {digest}")


if __name__ == "__main__":
    main()
