# Multi-echo scans: when a snowflake hides a wall, keep the wall's later echo.
#
# Run from the repository root:  python3 demos/substitute_points.py

import numpy as np

from echodenoise import CsrConfig, DrorConfig, EncoderConfig, InferenceConfig, NetworkConfig, SnowSpec, TrainConfig
from echodenoise import denoise_scan, medror, synthetic_scans, train
from echodenoise.cloud import NOISE_PARTICLE, VALID_OBJECT
from echodenoise.inference import DI, PS, VS

# %% Two echoes per beam. A particle becomes the strongest echo and the
# surface behind it (unless lost) moves to the second slot.
snow = SnowSpec("heavy")
train_set = synthetic_scans(40, snow, multi_echo=True, seed=1)
cloud, labels = synthetic_scans(1, snow, multi_echo=True, seed=2)[0]
hidden = (labels[:, :, 0] == NOISE_PARTICLE) & (labels[:, :, 1] == VALID_OBJECT)
print("beams where a particle hides a surface:", int(hidden.sum()))

# %% Train briefly and classify every echo as VS (keep strongest),
# PS (substitute a later echo) or DI (drop).
enc = EncoderConfig()
result = train([c for c, _ in train_set], NetworkConfig(num_echoes=2, slots=enc.slots, features=16),
               TrainConfig(epochs=30), enc, CsrConfig())
out, scores, classes = denoise_scan(cloud, result.params, enc, InferenceConfig())

for name, cls in (("VS", VS), ("PS", PS), ("DI", DI)):
    print(name, int(((classes == cls) & cloud.valid).sum()))

# %% How many hidden surfaces came back, against the rule-based MEDROR.
ours = int((hidden & (classes[:, :, 1] == PS)).sum())
base = int((hidden & (medror(cloud, DrorConfig())[:, :, 1] == PS)).sum())
print(f"recovered surfaces: network {ours}, MEDROR {base}, of {int(hidden.sum())}")

# %% The output keeps one echo per beam and flags substitutes.
print("output echoes per beam:", out.cloud.num_echoes, " substitutes:", int(out.substitute.sum()))
r = cloud.ranges()
h, w = np.argwhere(hidden & out.substitute)[0] if (hidden & out.substitute).any() else (None, None)
if h is not None:
    print(f"example beam ({h}, {w}): particle at {r[h, w, 0]:.2f} m, kept wall at {r[h, w, 1]:.2f} m")
