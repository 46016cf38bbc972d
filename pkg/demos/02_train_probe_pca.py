# Short DEBS run on the toy profile, then the two read-outs: event probe and PCA structure.
# Full toy schedule is 2K + 2K iterations (about 8 minutes on one core); this uses a quarter.
import sys

from debs.config import toy_profile
from debs.experiment import evaluate_probe, make_eval_hook, reference_cohorts, representation_structure
from debs.trainer import run_training

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
cfg = toy_profile().override(train={"total_iters": iters, "phase_switch_iter": iters // 2, "eval_every": iters // 10})
cohorts = reference_cohorts(cfg.data)

tr = run_training(cfg, cohorts.pretrain, "/tmp/debs_demo", eval_hook=make_eval_hook(cohorts.probe_train, cohorts.probe_eval))
for r in tr.rows:
    if "probe_accuracy" in r:
        print("iter %5d phase %d loss %.4f  probe %.1f%%  rep std %.3f"
              % (r["iteration"] + 1, r["phase"], r["loss"], r["probe_accuracy"], r["rep_std"]))

res = evaluate_probe(tr.student, cohorts.probe_train, cohorts.probe_eval)
print("held-out probe:", res.to_dict())

rep = representation_structure(tr.student, cohorts.probe_eval, k=8)
print("subject silhouette per PC:", rep.subject_scores.round(3))
print("event separation per PC:  ", rep.event_scores.round(3))
print("subject PC%d, event PC%d" % (rep.subject_component + 1, rep.event_component + 1))
