"""What the evaluation numbers respond to.

A perfect prediction scores zero on every error metric. Adding noise to the
mouth raises the lip and pronunciation errors and barely moves the upper
face, and shifting lip motion away from the audio beats lowers the beat
alignment score.
"""

import numpy as np

from pestalk.blendshapes import BLENDSHAPE_NAMES
from pestalk.mesh import synthetic_face_basis
from pestalk.metrics import RegionConfig, evaluate_clip
from pestalk.signal import AudioClip

sr, fps = 16000, 30
audio = np.zeros(2 * sr)
for t in (0.25, 0.75, 1.25, 1.75):
    audio[int(t * sr) : int(t * sr) + 200] = 0.8  # short clicks
clip = AudioClip(audio, sr)

T = clip.num_frames
times = np.arange(T) / fps
gt = np.zeros((T, len(BLENDSHAPE_NAMES)))
jaw = BLENDSHAPE_NAMES.index("jawOpen")
gt[:, jaw] = 0.3 + 0.3 * np.sin(2 * np.pi * times)
mouth = [i for i, n in enumerate(BLENDSHAPE_NAMES) if n.startswith("mouth")]
gt[:, mouth] = 0.2 + 0.2 * np.sin(2 * np.pi * times)[:, None]

basis = synthetic_face_basis()
regions = RegionConfig()
rng = np.random.default_rng(0)
noisy = gt.copy()
noisy[:, mouth] += rng.normal(0, 0.05, (T, len(mouth)))
late = np.roll(gt, 8, axis=0)

for label, pred in [("exact", gt), ("noisy mouth", noisy), ("late by 8 frames", late)]:
    r = evaluate_clip(pred, gt, regions, clip=clip, basis=basis, name=label)
    print(f"{label:>17}: LBE {r.lbe:.4f}  PBE {r.pbe:.4f}  LVE {r.lve:.2e}  EVE {r.eve:.2e}  BA {r.ba:.3f}")
