"""Acoustic-to-articulatory inversion for real-time MRI vocal tract data.

Subpackages are plain modules: feature extraction (`features`), contour
normalization (`contour_prep`), the from-scratch Bi-LSTM regressor
(`network`, `training`), rigid registration (`registration`), tract
variables (`tract_variables`), evaluation statistics (`evaluation`),
experiment orchestration (`experiment`), and a synthetic corpus
generator (`synth`).  The `vt` console script lives in `cli`.
"""

__version__ = "0.1.0"
