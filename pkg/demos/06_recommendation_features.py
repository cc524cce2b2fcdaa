# %% [markdown]
# # Features for the recommender
# Where is a newspaper, is this user in its market, and is the article local?

# %%
from localnews.classify import UserGeo, emit_features, infer_newspaper_location, is_in_market
from localnews.fixtures import load_demo_world

visits = {("Miami", "FL", 528): 9200, ("Fort Lauderdale", "FL", 528): 2100,
          ("Tampa", "FL", 539): 800, ("New York", "NY", 501): 650}
profile = infer_newspaper_location(visits, "miami-herald")
print(profile)

# %%
users = [UserGeo("United States", 528), UserGeo("United States", 501, "miami"),
         UserGeo("Canada", geo_affinity="Florida"), UserGeo("Canada", geo_affinity="Ontario")]
for u in users:
    print(u, is_in_market(u, profile))

# %% [markdown]
# The locality bit comes from whatever decision lookup is plugged in.

# %%
world = load_demo_world()
clf = world.classifier()
lookup = lambda aid: clf.classify_kg_ner(world.article(aid), profile)
for aid in ("thompson", "swift"):
    print(aid, emit_features(world.article(aid), profile, users[0], lookup))
