"""
Training on a toy world and scoring retrieval under weather
===========================================================

The ``toy-overfit`` preset trains for 200 SGD steps on 16 locations. Scoring
on the same world should then be close to perfect under every condition;
it is a wiring check, not a generalisation result. The second half runs a
held-out comparison of the three fusion variants with one seed.

Takes a minute or two on one core.
"""

# %%
from weathergeo import config, pipeline
from weathergeo.retrieval import evaluate
from weathergeo.trainer import TrainingSet, train
from weathergeo.weather import condition_suite

cfg = config.build({"seed": 7}, preset="toy-overfit")
world = pipeline.make_worlds(cfg)["train"]
suite = condition_suite(cfg["weather"]["intensity"])
captions = pipeline.caption_toy_world(world, 6, suite, seed=config.derive_seed(7, "captions"))
model_cfg, train_cfg = config.model_config(cfg), config.train_config(cfg)

result = train(train_cfg, model_cfg, TrainingSet(world), captions, suite)
first, last = result.history[0], result.history[-1]
print(f"{result.steps} steps; total loss {first['total']:.3f} -> {last['total']:.3f}; "
      f"tau {first['tau']:.3f} -> {last['tau']:.3f}")

# %%
print(evaluate(result.params, model_cfg, world, captions, "D2S", suite).to_table())

# %%
# Held-out fusion comparison at full-strength weather. One seed is noisy;
# the acceptance test averages three.
ablation = config.build({"seed": 0, "eval.directions": ["D2S"]}, preset="toy-ablation")
table = pipeline.ablate(ablation, "fusion")
print(table.to_table("ap"))
