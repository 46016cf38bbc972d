# DEBS against the similarity-only ablation, sharing the phase-1 prefix.
# One seed of the toy profile takes roughly 8 minutes on one core.
import json
import sys

from debs.config import toy_profile
from debs.experiment import reference_cohorts, run_comparison

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
cfg = toy_profile().override(train={"seed": seed})
cmp = run_comparison(cfg, reference_cohorts(cfg.data), f"/tmp/debs_ablation/seed{seed}", eval_every=500)

print("DEBS            %.1f%%" % cmp.debs.accuracy)
print("similarity-only %.1f%%" % cmp.similarity_only.accuracy)
print("delta           %+.1f" % cmp.delta)
for (it, a), (_, b) in zip(cmp.curves["debs"], cmp.curves["similarity_only"]):
    print("%5d  %.1f  %.1f" % (it, a, b))
json.dump(cmp.to_dict(), open(f"/tmp/debs_ablation/seed{seed}/compare.json", "w"), indent=2)
