# %% [markdown]
# # The asynchronous pipeline in one process
# Articles flow through a queue, prompts are deduplicated against a key-value
# store, and the read path serves whatever is finished.

# %%
import tempfile
from pathlib import Path

from localnews.cli import build_pipeline
from localnews.config import RunConfig
from localnews.fixtures import DATA_DIR, load_demo_world

world = load_demo_world()
tmp = Path(tempfile.mkdtemp())
cfg = RunConfig.load(None, model="kg_llm", store_path=tmp / "kv.db",
                     llm={"mock": str(DATA_DIR / "mock_llm.json")})
pipe, clf = build_pipeline(cfg)

for art in world.corpus + world.corpus:   # every article twice
    pipe.submit(art)
pipe.run_until_idle()
print(pipe.metrics.render())
print("LLM attempts:", len(clf.endpoint.calls), "for", len(clf.endpoint.prompt_calls()), "prompts")

# %% [markdown]
# Reads come from the store through a cache and never wait on the LLM.

# %%
for aid in ("artiles", "henderson", "markets"):
    d = pipe.read_path(aid)
    print(aid, d.label.value if d else None, d.evidence if d else "")

# %% [markdown]
# Threaded mode with a slow endpoint: the read path answers immediately for
# articles still in flight.

# %%
import time

from localnews.llm import MockLLM

slow_cfg = RunConfig.load(None, model="llm", runs=1, llm={"mock": str(DATA_DIR / "mock_llm.json")})
slow, slow_clf = build_pipeline(slow_cfg)
slow_clf.endpoint = MockLLM(world.mock_scripts(), latency=0.3)
slow.start(llm_workers=2)
for art in world.corpus[:4]:
    slow.submit(art)
time.sleep(0.1)
t0 = time.perf_counter()
print("in flight:", slow.read_path(world.corpus[0].id), f"{1000 * (time.perf_counter() - t0):.2f} ms")
slow.stop(drain=True)
print("after drain:", slow.read_path(world.corpus[0].id).label.value)

# %% [markdown]
# Backfill re-injects old articles; completed prompts cost nothing.

# %%
from localnews.pipeline import ListSource, backfill

before = len(clf.endpoint.calls)
result = backfill(ListSource(world.corpus), pipe.new_articles, page_size=5)
pipe.run_until_idle()
print(result, "new LLM attempts:", len(clf.endpoint.calls) - before)
