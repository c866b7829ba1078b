"""Carry a blendshape basis over to a differently shaped face.

Deformation transfer copies the local triangle deformations of each source
template onto a new neutral mesh, so the target smiles the way the source
does while keeping its own proportions. Here the target is the synthetic face
stretched and bulged, and the transferred basis is checked on a mixed
expression.
"""

import numpy as np

from pestalk.blendshapes import BLENDSHAPE_NAMES
from pestalk.mesh import TriangleMesh, apply_blendshapes, build_templates, synthetic_face_basis

src = synthetic_face_basis()
v = src.neutral.vertices.copy()
v[:, 0] *= 1.3
v[:, 2] += 0.2 * (1 - v[:, 0] ** 2 / 1.69) * (1 - v[:, 1] ** 2)
target = TriangleMesh(v, src.neutral.triangles, src.neutral.region_masks)

tgt = build_templates(src, target)
print(f"transferred {len(tgt.templates)} templates onto a {len(v)}-vertex face")

# Transferring onto the source itself must reproduce the source basis.
same = build_templates(src, src.neutral)
err = max(np.abs(a.vertices - b.vertices).max() for a, b in zip(same.templates, src.templates))
print(f"self-transfer max vertex error: {err:.2e}")

coeffs = np.zeros((1, len(BLENDSHAPE_NAMES)))
for name, w in [("jawOpen", 0.6), ("mouthSmileLeft", 0.8), ("browInnerUp", 0.5)]:
    coeffs[0, BLENDSHAPE_NAMES.index(name)] = w
src_move = apply_blendshapes(src, coeffs)[0] - src.neutral.vertices
tgt_move = apply_blendshapes(tgt, coeffs)[0] - tgt.neutral.vertices
lip = src.neutral.region_masks["lip"]
print(f"lip displacement, source {np.linalg.norm(src_move[lip], axis=1).mean():.4f}, "
      f"target {np.linalg.norm(tgt_move[lip], axis=1).mean():.4f}")
