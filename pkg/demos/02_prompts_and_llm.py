# %% [markdown]
# # Prompts, runs and answer cleanup

# %%
from localnews.fixtures import load_demo_world
from localnews.llm import merge_runs, parse_response, resolve_prompt, validate_answer
from localnews.model import Diagnostics, LocationAnswer

world = load_demo_world()
clf = world.classifier(world.mock_llm(), backoff=0)
art = world.article("artiles")

plain = clf.prompt_for(art, enrich=False)
rich = clf.prompt_for(art, enrich=True)
print(len(plain.prompt_text), plain.prompt_key[:16], plain.enriched)
print(len(rich.prompt_text), rich.prompt_key[:16], rich.enriched)
print(rich.prompt_text[-520:])

# %% [markdown]
# The scripted endpoint knows nothing without graph hints, and Miami with them.

# %%
for req in (plain, rich):
    outcome = resolve_prompt(clf.endpoint, req, world.gazetteer, runs=3, sleep=lambda s: None)
    print(req.enriched, outcome.merged)

# %% [markdown]
# Replies are parsed leniently: prose around the object, trailing commas,
# lists and the "null" sentinel are all handled.

# %%
for body in ['Sure! {"item_city": "Tampa", "item_state": "FL",}',
             '{"item_city": ["Miami", "Tampa"], "item_state": "florida"}',
             '{"item_city": "null", "item_state": "null", "item_country": "null"}',
             "no idea"]:
    print(repr(body[:40]), "->", parse_response(body))

# %% [markdown]
# Validation drops names the gazetteer does not know and cities outside the stated state.

# %%
diag = Diagnostics()
print(validate_answer(LocationAnswer("miami", "texas", "united states"), world.gazetteer, diag))
print(validate_answer(LocationAnswer("miami", "miami-dade", "united states"), world.gazetteer, diag))
print(list(diag))

# %% [markdown]
# Three runs are merged field by field.

# %%
runs = [LocationAnswer("miami", "florida"), LocationAnswer("tampa", "florida"), LocationAnswer("miami", None)]
print(merge_runs(runs))
