# %% [markdown]
# # Offline scores and online statistics
# Published confusion counts in, published percentages out.

# %%
from localnews.evaluation import (
    ConfusionMatrix,
    GroupStats,
    implicit_split,
    local_share,
    metrics,
    render_t_test,
    t_test_pooled,
    weighted_lift,
)
from localnews.model import Label

for name, cm in {"standalone": (1829, 415, 498, 31138), "enriched": (1897, 413, 430, 31140)}.items():
    print(name, metrics(ConfusionMatrix(*cm)).as_percentages())
print("local share", f"{100 * local_share(2327, 33880):.2f}%")

# %% [markdown]
# Recall split between explicit and implicit local articles.

# %%
ids = [f"a{i}" for i in range(2327)]
ner = {a: Label.LOCAL if i < 955 else Label.NATIONAL for i, a in enumerate(ids)}
kg_ner = {a: Label.LOCAL if i < 1467 else Label.NATIONAL for i, a in enumerate(ids)}
s = implicit_split(ids, ner, kg_ner)
print(f"explicit {100 * s.explicit_recall:.2f}%  implicit {100 * s.implicit_recall:.2f}%  "
      f"total {100 * s.total_recall:.2f}%")

# %% [markdown]
# Equal group sizes are not published; df = 222 pins them to 112 each.

# %%
import numpy as np

n = np.arange(2, 400)
pooled = np.sqrt(((n - 1) * 39.12 ** 2 + (n - 1) * 24.99 ** 2) / (2 * n - 2))
print("n with df 222:", n[2 * n - 2 == 222], "pooled sd:", pooled[2 * n - 2 == 222].round(3))
print(render_t_test(t_test_pooled(GroupStats(70.52, 39.12, 112), GroupStats(55.57, 24.99, 112)),
                    "local views per user"), end="")

# %% [markdown]
# Weighted lift depends entirely on the weights.

# %%
lifts = [43.35, 19.28, 22.23]
print("equal weights:", round(weighted_lift((v, 1) for v in lifts), 2))
for w in (0.5, 1.37, 3.0):
    print(f"middle weight {w}:", round(weighted_lift([(43.35, 1), (19.28, w), (22.23, 1)]), 2))
