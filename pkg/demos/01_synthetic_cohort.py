# A look at the synthetic cohort: what the generator plants and whether it is learnable.
import numpy as np

from debs.config import DataSpec
from debs.data import generate_dataset, load_records, sample_triplet, segment_rr_cv, write_records

spec = DataSpec(n_subjects=6, seed=0)
ds = generate_dataset(spec)
print(ds.n_segments, "segments of", ds.segment_seconds, "s from", len(ds.subjects), "subjects")

# static factors differ per subject, dynamic ones are the event intervals
for s in ds.subjects[:3]:
    st = s.factors["static"]
    print(s.subject_id, "hr %.1f" % st["heart_rate"], "events", s.factors["dynamic"]["events"])

# inter-beat irregularity alone separates the labels (the generator's own oracle)
cv = np.concatenate([segment_rr_cv(s, ds.sampling_rate) for s in ds.subjects])
labels = np.concatenate([s.labels for s in ds.subjects])
print("RR-cv threshold detector accuracy: %.3f" % ((cv > 0.08) == labels).mean())

# how many label changes a triplet span sees
rng = np.random.default_rng(0)
changes = []
for _ in range(2000):
    k, t, i, j = sample_triplet(ds, 15, rng)
    lab = ds.subjects[k].labels[t - i : t + j + 1]
    changes.append(int((lab[1:] != lab[:-1]).sum()))
print("transitions per triplet span:", np.bincount(changes) / len(changes))

write_records(ds, "/tmp/cohort.debs")
assert load_records("/tmp/cohort.debs") == ds
print("record file round trip ok")
