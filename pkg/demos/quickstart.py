"""Generate a small log, run the whole chain in memory and compare with baselines.

    python3 demos/quickstart.py [n_users]
"""
import sys

from tmpp.datagen import click_buy_ratio, dataset_stats, generate
from tmpp.eval import BASELINES, baseline_predict, early_share, evaluate, histogram_csv
from tmpp.pipeline import RunConfig, run_pipeline

n_users = int(sys.argv[1]) if len(sys.argv) > 1 else 5000
cfg = RunConfig(seed=3, gen={"n_users": n_users})
log = generate(cfg.gen_config())
print(f"{len(log):,} records, click:buy = {click_buy_ratio(log):.1f}")
print(dataset_stats(log).to_text())

result = run_pipeline(log, cfg)
print(f"removed {len(result.removed)} crawler users")
for group, row in result.tune_report["groups"].items():
    members = ", ".join(f"{m} {f:.4f}" for m, f in row["members"].items())
    print(f"group {group:<8} blend {row['blend_f1']:.4f}  members: {members}")
print(result.ensemble.to_dict()["weights"], "tau", result.ensemble.tau, "k", result.ensemble.k)
print(result.report.to_text())

# baselines read the same visible months and are scored on the same answer set
for kind in BASELINES:
    params = {"random": {"n_pairs": result.report.total_predicted, "seed": 0},
              "popularity": {"top_brands": 1, "recent_days": 3},
              "repeat-buyer": {"recent_days": 30}}[kind]
    rep = evaluate(baseline_predict(kind, result.visible, params), result.answer)
    print(f"{kind:<13} F1 {rep.f1:.4f}")

print(f"hits in the first quarter of the answer month: {early_share(result.histogram):.0%}")
print("\n".join(histogram_csv(result.histogram).splitlines()[:8]), "\n...")
