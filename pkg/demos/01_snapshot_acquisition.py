"""Walk through the snapshot acquisition pipeline step by step.

A hyperspectral cube is coded by a random binary mask, each spectral
channel is sheared sideways by the disperser, and the detector integrates
the sheared stack into a single 2D measurement that is wider than the
scene.  Everything here is deterministic.

Run:  python3 demos/01_snapshot_acquisition.py
"""

from pathlib import Path

import numpy as np

from aspun import (
    CodedMask,
    DispersionSpec,
    SyntheticSceneSpec,
    disperse,
    forward,
    generate_scene,
    integrate,
    measurement_width,
    modulate,
    shift_back,
    simulate,
)
from aspun.io import write_cube_file, write_pgm

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

H, W, C, D = 32, 32, 8, 1

print("== scene ==")
scene = generate_scene(SyntheticSceneSpec(H, W, C, blob_count=6, seed=7))
print(f"cube {scene.height}x{scene.width}x{scene.channels}, "
      f"values in [{scene.data.min():.3f}, {scene.data.max():.3f}]")
print(f"wavelength grid {scene.wavelengths[0]:.0f}..{scene.wavelengths[-1]:.0f} nm")

print("\n== coding mask ==")
rng = np.random.default_rng(7)
mask = CodedMask((rng.uniform(0, 1, (H, W)) > 0.5).astype(float))
print(f"binary mask, open fraction {mask.values.mean():.3f}")

print("\n== the three acquisition stages ==")
spec = DispersionSpec(step=D)
coded = modulate(scene, mask)
sheared = disperse(coded, spec)
snapshot = integrate(sheared)
print(f"modulate: {coded.shape} (mask applied per channel)")
print(f"disperse: {sheared.shape} (channel n shifted {D}*n columns)")
print(f"integrate: {snapshot.data.shape} "
      f"(width {W} + {D}*({C}-1) = {measurement_width(W, D, C)})")

composed = forward(scene, mask, spec)
print(f"forward() equals the composition exactly: "
      f"{np.array_equal(composed.data, snapshot.data)}")

print("\n== detector noise ==")
noisy = simulate(scene, mask, spec, noise_sigma=0.05, seed=123)
print(f"noisy snapshot std of added noise: {np.std(noisy.data - snapshot.data):.4f} "
      f"(sigma = 0.05)")

print("\n== naive inversion: shift-back ==")
start = shift_back(snapshot, spec, C)
print(f"shift_back cube {start.shape}; each channel is the measurement's own "
      f"window, so channel sums leak across bands (a solver must undo this)")

write_cube_file(OUT / "scene.hsc", scene.data)
write_cube_file(OUT / "mask.hsc", mask.values)
write_cube_file(OUT / "snapshot.hsc", noisy.data)
write_pgm(OUT / "snapshot.pgm", np.clip(noisy.data / noisy.data.max(), 0, 1))
print(f"\nwrote scene.hsc, mask.hsc, snapshot.hsc, snapshot.pgm to {OUT}")
