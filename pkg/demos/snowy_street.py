# Denoising one snowy street scan, step by step.
#
# Run from the repository root:  python3 demos/snowy_street.py
# Writes PGM score maps into demos/out/.  Takes about two minutes.

from pathlib import Path

import numpy as np

from echodenoise import (
    CsrConfig,
    DrorConfig,
    EncoderConfig,
    InferenceConfig,
    NetworkConfig,
    SnowSpec,
    TrainConfig,
    denoise_scan,
    dror,
    evaluate,
    synthetic_scans,
    train,
)
from echodenoise.cloud import NOISE_PARTICLE
from echodenoise.evalkit import write_pgm
from echodenoise.inference import DI

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

# %% A handful of random streets with medium snowfall.
# Each pair is (cloud, labels); labels mark every particle exactly.
train_set = synthetic_scans(40, SnowSpec("medium"), multi_echo=False, seed=1)
test_cloud, test_labels = synthetic_scans(1, SnowSpec("medium"), multi_echo=False, seed=2)[0]
print("scan shape (rows, cols, echoes):", test_cloud.shape)
print("returns:", int(test_cloud.valid.sum()), " particles:", int((test_labels == NOISE_PARTICLE).sum()))

# %% Train the toy model. No labels are used: the coordinate learner
# predicts each hidden range from its neighbors, and the correlation
# learner learns how hard that prediction is.
enc = EncoderConfig()
net = NetworkConfig(num_echoes=1, slots=enc.slots, features=16)
def show(e):
    if e.epoch % 5 == 0:
        print(f"epoch {e.epoch}  loss {e.mean_loss:.3f}")


result = train([c for c, _ in train_set], net, TrainConfig(epochs=30), enc, CsrConfig(), progress=show)
print("parameters:", result.params.count())

# %% Score the held-out scan. Higher scores mean "harder to predict".
denoised, scores, classes = denoise_scan(test_cloud, result.params, enc, InferenceConfig())
valid = test_cloud.valid[:, :, 0]
noise = test_labels[:, :, 0] == NOISE_PARTICLE
print("mean score, particles: %.2f   scene points: %.2f" % (scores[:, :, 0][noise].mean(),
                                                           scores[:, :, 0][valid & ~noise].mean()))

# %% Compare with DROR on the same scan.
ours = evaluate([classes == DI], [test_labels], "medium", "smednet")
theirs = evaluate([dror(test_cloud, DrorConfig())[:, :, None]], [test_labels], "medium", "dror")
for row in (ours, theirs):
    print(f"{row.method:8s} IoU {row.iou_noise:.3f}  precision {row.precision:.3f}  recall {row.recall:.3f}")

# %% Score map and ground truth as images (rows = beams, columns = azimuth).
write_pgm(scores[:, :, 0], out / "scores.pgm", mask=valid)
write_pgm(noise.astype(float), out / "truth.pgm", 0.0, 1.0, mask=valid)
print("kept", int(denoised.cloud.valid.sum()), "of", int(valid.sum()), "returns; images in", out)
