# %% [markdown]
# # Four classifiers on the demo corpus
# Standalone NER, graph-enriched NER, standalone LLM and graph-enriched LLM.

# %%
from localnews.evaluation import evaluate_models, knowledge_noise_diff, render_report
from localnews.fixtures import load_demo_world
from localnews.model import ground_truth_label

world = load_demo_world()
clf = world.classifier(world.mock_llm(), backoff=0)
truth = {a.id: ground_truth_label(a) for a in world.corpus if ground_truth_label(a) is not None}

predictions = {}
for model in ("ner", "kg_ner", "llm", "kg_llm"):
    predictions[model] = {}
    for aid in truth:
        art = world.article(aid)
        predictions[model][aid] = clf.classify(model, art, world.profiles[art.publisher_id]).label

print(render_report(evaluate_models(predictions, truth)))

# %% [markdown]
# Per-article view, with the evidence the graph-enriched NER found.

# %%
for aid in truth:
    art = world.article(aid)
    d = clf.classify("kg_ner", art, world.profiles[art.publisher_id])
    print(f"{aid:20} {truth[aid].value:9} ner={predictions['ner'][aid].value:9} "
          f"kg_ner={d.label.value:9} {d.evidence[:1]}")

# %% [markdown]
# Enrichment helps and hurts: one article is fixed, one is broken.

# %%
for flip in knowledge_noise_diff(predictions["llm"], predictions["kg_llm"], truth):
    print(flip.article_id, flip.direction.value)
