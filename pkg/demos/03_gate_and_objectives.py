"""
Text-driven gating and the four training objectives
===================================================

The caption embedding decides, channel by channel, how much of the fused
vector comes from the image and how much from the text. Training pulls on
that fused vector with four losses: an image-text contrastive term, a
matching head fed hard negatives, box regression for the caption's region
hints, and location classification.
"""

# %%
import numpy as np

from weathergeo import fusion, objectives
from weathergeo.layers import l2_normalize

rng = np.random.default_rng(0)
B, D, r = 4, 16, 4
f_I = l2_normalize(rng.normal(size=(B, D)))[0]
f_T = l2_normalize(rng.normal(size=(B, D)))[0]

# %%
# A freshly initialised gate sits near one half. A zero gate is exactly the
# static variant, and each fused channel lies between its two inputs.
gate = fusion.GateParams.from_dict(fusion.init_gate_params(D, r, rng))
g = fusion.gate_forward(gate, f_T)
print("gate range:", g.min().round(3), g.max().round(3))
zero = fusion.GateParams.zeros(D, r)
same = np.array_equal(fusion.fuse_variant("dynamic", f_I, f_T, zero),
                      fusion.fuse_variant("static", f_I, f_T))
print("zero gate == static:", same)
fused = fusion.fuse(f_I, f_T, g)
print("convex:", bool(np.all((fused >= np.minimum(f_I, f_T)) & (fused <= np.maximum(f_I, f_T)))))
print("concat width:", fusion.fuse_variant("concat", f_I, f_T).shape[1])

# %%
# Contrastive loss and the temperature. Matching pairs on the diagonal give
# a small loss at low temperature and drift toward log B as it warms up.
for tau in (0.05, 0.1, 0.3, 1.0):
    print(f"tau={tau:<5} ITC(aligned)={objectives.itc_loss(f_I, f_I, tau)[0]:.4f}"
          f"  ITC(random)={objectives.itc_loss(f_I, f_T, tau)[0]:.4f}")
print("log B =", np.log(B).round(4))

# %%
# Hard negatives: for every image, the most similar wrong caption, and the
# other way round. The matching head then sees B positives and 2B negatives.
S = objectives.similarity_matrix(f_I, f_T, 0.1)
text_neg, image_neg = objectives.mine_hard_negatives(S)
print("hardest text per image:", text_neg, " hardest image per text:", image_neg)
img_idx, txt_idx, labels = objectives.itm_pairs(text_neg, image_neg)
print("pairs:", list(zip(img_idx.tolist(), txt_idx.tolist(), labels.astype(int).tolist())))

# %%
# Box loss is (1 - IoU) + L1 on centre-size boxes.
gt = np.array([0.5, 0.5, 0.4, 0.4])
for pred in ([0.5, 0.5, 0.4, 0.4], [0.6, 0.5, 0.4, 0.4], [0.1, 0.1, 0.1, 0.1]):
    pred = np.array(pred)
    loss, _ = objectives.box_loss(gt, pred)
    print(f"pred={pred}  IoU={objectives.iou(gt, pred):.3f}  loss={loss:.3f}")
