"""
Weather-aware captions with a reasoning prompt chain
====================================================

Captions are produced in two phases. The weather phase describes visibility
and conditions and has to commit to a label; the spatial phase then
describes the scene, with the label folded into its prompts. A validator
rejects hedged or incomplete weather text and the chain is retried.

The mock client answers from the scene facts and the weather that was
actually applied, so everything here is deterministic and offline.
"""

# %%
from weathergeo.captions import (CotConfig, MockLvlmClient, ScriptedClient, build_prompts,
                                 generate_caption_record, validate_caption)
from weathergeo.dataset import generate_toy_world, render_views
from weathergeo.weather import parse_condition

world = generate_toy_world(seed=5, num_locations=2, drones_per_location=1)
scene = world.scenes[1]
image, regions = render_views(scene, "drone", scene.drone_jitter_seeds[0])
fog = parse_condition("Fog+Rain").reseeded(2)

# %%
# The prompt chain grows with the step budget. Zero steps is a single
# one-shot question.
for steps in (0, 2, 4, 6):
    keys = [p.key for p in build_prompts(CotConfig(step_count=steps))]
    print(f"{steps} steps -> {keys}")

# %%
rec = generate_caption_record(image, scene.facts, MockLvlmClient(), CotConfig(6),
                              location_id=1, condition="Fog+Rain", weather=fog, regions=regions)
print(rec.status, "after", rec.attempts, "attempt(s)")
print("label:", rec.weather_label)
print("text :", rec.text)
print("hints:", rec.region_hints)

# %%
# What the validator objects to.
for text in ("Visibility is low. It might be foggy.",
             "Visibility is low. Dense fog. Weather: fog.",
             "The scene shows two buildings."):
    rep = validate_caption(text)
    print(f"{rep.accepted!s:<5} {rep.reasons}  <- {text!r}")

# %%
# A client that hedges twice before committing. The record shows the
# retries; a client that never commits ends up marked as exhausted.
good = rec.weather_text
hedging = ScriptedClient([["Weather: maybe fog, hard to say."]] * 2 + [[good, rec.spatial_text]])
again = generate_caption_record(image, scene.facts, hedging, CotConfig(2), weather=fog)
print(again.status, again.attempts)
stubborn = ScriptedClient([["no idea"]])
print(generate_caption_record(image, scene.facts, stubborn, CotConfig(2)).status)
