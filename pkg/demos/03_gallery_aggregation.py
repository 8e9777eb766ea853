"""From a handful of photos to one albedo and one normal map.

Every gallery photo is encoded into a code and per-channel weights; the
weights are softmax-normalised across the gallery for each channel, so sharp
photos outvote blurred ones channel by channel. More photos average out
lighting and tend to give buffers closer to the ground truth.

    python demos/03_gallery_aggregation.py
"""

import numpy as np
from scipy import ndimage

from lumen.gallery import extract_with_codes
from lumen.image import ImageBuffer
from lumen.pipeline import default_codecs
from lumen.rng import SeededRng
from lumen.toy import ToyIdentity

ident = ToyIdentity.from_seed(0, 3)
codecs = default_codecs((16, 16, 3))
photos = [ident.render(SeededRng(0, "demo", k), blur_prob=0.0) for k in range(6)]
truth_albedo = ident.albedo(16)
truth_normal = ident.normals(16)

# the codec keeps a coarse 8x8 summary, so distances are measured in code
# space against the code of the true albedo, plus the decoded normal angle
truth_code = codecs[0].encode(ImageBuffer(truth_albedo))[0]
print("N   albedo code distance   mean normal angle error (deg)")
for n in range(1, 7):
    ex = extract_with_codes(photos[:n], *codecs)
    dist = np.linalg.norm(ex.albedo_global - truth_code) / np.linalg.norm(truth_code)
    nm = ex.buffers.normal.data.astype(float)
    ang = np.degrees(np.arccos(np.clip((nm * truth_normal).sum(-1), -1, 1))).mean()
    print(f"{n}   {dist:.4f}                 {ang:5.2f}")

# a blurred photo in the gallery gets less weight
blurred = ImageBuffer(ndimage.gaussian_filter(photos[0].data, (1.2, 1.2, 0)))
ex = extract_with_codes([blurred, *photos[1:4]], *codecs)
share = ex.albedo_weights.mean(axis=1)
print("\nmean albedo weight per photo (photo 0 blurred):", np.round(share, 3))
