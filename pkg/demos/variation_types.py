"""
What annotators disagree about
==============================

Matched pairs, wrong classes, merged or split objects and plain misses are
separated by a staged matching. Sweeping the IoU threshold shows which
kind of disagreement takes over as matching gets stricter.
"""

from label_convergence import Instance, make_dataset, validate, variation_report
from label_convergence.variation_analysis import classify_pair

# two adjacent boxes from one annotator, their enclosing box from the other
a = [Instance(1, 1, "A", 1, (0.0, 0.0, 4.0, 4.0)), Instance(2, 1, "A", 1, (6.0, 0.0, 4.0, 4.0))]
b = [Instance(3, 1, "B", 1, (0.0, 0.0, 10.0, 4.0))]
out = classify_pair(a, b, 0.5)
print("merge case:", out.counts.to_dict())

data = make_dataset(400, 6, jitter=0.06, p_miss=0.05, p_wrong_class=0.08, seed=3)
report = variation_report(data, thresholds=(0.5, 0.6, 0.7, 0.8, 0.9))

print("threshold  correct  boundary  class  missed  merge")
for t in report.thresholds:
    s = report.counts[t].shares()
    print(
        f"{t:9.2f}  {s['correct']:7.1%}  {s['type1_bad_boundary']:8.1%}  "
        f"{s['type2_wrong_class']:5.1%}  {s['type3_missed_or_additional']:6.1%}  {s['type5_merge']:5.1%}"
    )

# boundary quality of same-class matches at IoU 0.5
print(report.histogram.to_csv())

# a copied annotation file shows up as a spike at IoU 1.0
copied = make_dataset(100, 3, seed=4)
print("duplicate spike:", variation_report(copied, thresholds=(0.5,)).histogram.duplicate_spike)
print("suspected duplicates:", validate(copied).suspected_duplicates)
