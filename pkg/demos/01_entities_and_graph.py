# %% [markdown]
# # Entities, linking and located-in walks
# Tag a few demo articles, link each mention to the fixture graph and see
# what the graph says about it.

# %%
from localnews.fixtures import load_demo_world
from localnews.kg import format_triplets, link_entity, lookup_candidates, traverse_p131, triplets_for_prompt
from localnews.model import Diagnostics
from localnews.ner import EntityTag

world = load_demo_world()
art = world.article("thompson")
mentions = world.ner.extract_entities(art)
print(art.title)
print([str(m) for m in mentions])

# %% [markdown]
# A quarterback is not a place, but his team is located in one. Two hops:
# person -> team (member of) -> city (located in).

# %%
player = link_entity(lookup_candidates(world.kg, "Skylar Thompson", EntityTag.PERSON))
team = world.kg.get(player.values("P54")[0])
match = traverse_p131(world.kg, team, "miami", "florida")
print(team.label, "->", " -> ".join(match.path), match.matched_on.value, f"{match.hops} hop(s)")

# %% [markdown]
# Ambiguous toponyms are linked by population, the largest place wins.

# %%
for cand in lookup_candidates(world.kg, "Henderson", EntityTag.LOCATION):
    print(cand.entity_id, cand.population)
print("linked:", link_entity(lookup_candidates(world.kg, "Henderson", EntityTag.LOCATION)).entity_id)

# %% [markdown]
# Triplets handed to the LLM for three articles.

# %%
for aid in ("artiles", "henderson", "charlotte-sarasota"):
    ms = world.ner.extract_entities(world.article(aid))
    print(aid, format_triplets(triplets_for_prompt(world.kg, ms)))

# %% [markdown]
# The walk is capped at four edges and stops on cycles.

# %%
from localnews.kg import FixtureKG

loop = FixtureKG.from_mapping({
    "a": {"label": "A", "claims": {"P131": ["b"]}},
    "b": {"label": "B", "claims": {"P131": ["a"]}},
})
diag = Diagnostics()
print(traverse_p131(loop, loop.get("a"), "nowhere", None, max_hops=10, diagnostics=diag), list(diag))
