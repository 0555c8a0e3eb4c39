"""
Toy worlds and synthetic weather
================================

A toy world is a set of locations. Each one is a flat-coloured scene with a
few buildings, a road and a pond, seen once from straight above (the
satellite view) and several times from a jittered drone camera. Weather is
painted on afterwards, layer by layer, from a seed.

Run with ``python3 demos/01_toy_world_and_weather.py``. A contact sheet is
written next to this file as ``weather_sheet.png``.
"""

# %%
from pathlib import Path

import numpy as np
from PIL import Image

from weathergeo.dataset import generate_toy_world, render_views
from weathergeo.weather import apply_weather, condition_suite, parse_condition

world = generate_toy_world(seed=3, num_locations=4, drones_per_location=2)
scene = world.scenes[0]
print("location 0 facts:", scene.facts)

# %%
# Same scene, two cameras. Region boxes follow the drone transform, so the
# localisation targets stay attached to the objects.
sat, _ = render_views(scene, "satellite", size=96)
drone, regions = render_views(scene, "drone", scene.drone_jitter_seeds[0], size=96)
for r in regions[:3]:
    print(f"  {r.label_text:<40} box={np.round(r.box, 3)}")

# %%
# The ten evaluation conditions at the default strength. Mean brightness is a
# crude but telling summary: fog and over-exposure wash the image out, dark
# pulls it down.
tiles = [sat, drone]
for name, spec in condition_suite():
    img = apply_weather(drone, spec.reseeded(11))
    tiles.append(img)
    print(f"{name:<10} mean={img.mean():.3f}  std={img.std():.3f}")

# %%
# Fog is monotone in intensity: more fog, less contrast.
for t in (0.0, 0.25, 0.5, 0.75, 1.0):
    print(f"fog {t:.2f}: std={apply_weather(drone, parse_condition('Fog', t)).std():.3f}")

# %%
sheet = np.concatenate(tiles, axis=1)
out = Path(__file__).with_name("weather_sheet.png")
Image.fromarray((np.clip(sheet, 0, 1) * 255).astype(np.uint8)).save(out)
print("wrote", out)
