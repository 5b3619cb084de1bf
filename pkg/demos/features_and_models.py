"""Features of one hand-written pair, then each model kind on a tiny training set."""
import numpy as np

from tmpp.features import extract
from tmpp.instances import InstanceSet, TimeSpanConfig, build_training_set
from tmpp.log_model import ActionRecord, ActionType, Log, parse_date
from tmpp.models import REGISTRY, global_score, make_model

C, B, K, T = ActionType.CLICK, ActionType.BUY, ActionType.COLLECT, ActionType.CART
rows = [
    (1, 10, C, "05-01"), (1, 10, C, "05-02"), (1, 10, T, "05-02"), (1, 10, B, "05-03"),
    (1, 10, C, "06-10"), (1, 20, C, "06-18"), (2, 10, B, "06-01"), (2, 10, B, "06-15"),
]
log = Log.from_records([ActionRecord(u, b, a, parse_date(d)) for u, b, a, d in rows]).sorted()

# one pair, features computed from everything before June 21
inst = InstanceSet(np.array([1]), np.array([10]), np.array([parse_date("06-21")]))
out = extract(inst, log, buckets=(7, 30, 1000))
for name, v in zip(out.schema.names, out.X[0]):
    if v and name.startswith("pair_"):
        print(f"{name:<32} {v:g}")

print("global score of the pair:", global_score(log.take((log.user == 1) & (log.brand == 10))))

# a toy training set: fixed span ending at the start of June
rng = np.random.default_rng(0)
n = 3000
toy = Log.from_arrays(rng.integers(1, 40, n), rng.integers(1, 6, n) * 10,
                      rng.choice(4, n, p=[0.7, 0.1, 0.1, 0.1]), rng.integers(0, 95, n)).sorted()
train = extract(build_training_set(toy, TimeSpanConfig.fixed_for(95), window=(0, 95)), toy)
print(f"{len(train)} instances, {train.label.mean():.1%} positive")
for spec in REGISTRY:
    if spec.scheme == "sliding":
        continue
    model = make_model(spec.kind, spec.scheme).fit(train, toy)
    s = model.score(train, toy)
    print(f"{spec.name:<10} score range [{s.min():.3f}, {s.max():.3f}]")
