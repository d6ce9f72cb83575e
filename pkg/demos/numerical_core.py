"""Check the hand-written FFT and the image resize against slow references.

Run: python demos/numerical_core.py
"""
import numpy as np

from prismnet.fft import fft, naive_dft
from prismnet.image import bilinear_resize, bilinear_weights, quantize

rng = np.random.default_rng(0)

print("FFT against a direct DFT")
for n in (8, 24, 100, 480):
    x = rng.normal(size=n)
    got = fft(x)
    err = np.max(np.abs(got.spectrum - naive_dft(x)))
    print(f"  n={n:4d}  pad={got.pad:4d}  max |error| = {err:.2e}")

# a daily cycle in hourly data shows up as one spectral line
t = np.arange(480)
mags = fft(np.sin(2 * np.pi * t / 24)).magnitudes
print("  strongest bin for a 24-step sine over 480 steps:", int(np.argmax(mags[:240])), "(expect 20)")

print("\nBilinear resize, corners aligned")
img = rng.normal(size=(5, 7))
big = bilinear_resize(img, 9, 13)
print("  corners kept:", np.allclose(big[[0, 0, -1, -1], [0, -1, 0, -1]], img[[0, 0, -1, -1], [0, -1, 0, -1]]))
lo, frac = bilinear_weights(5, 9)
print("  neighbour weights (1 - frac, frac) stay in [0, 1]:", bool(np.all((frac >= 0) & (frac <= 1))))
print("  a constant image stays constant:", np.allclose(bilinear_resize(np.full((5, 7), 2.5), 9, 13), 2.5))

print("\nQuantization to 8-bit")
q = quantize(np.array([[-3.0, 0.0, 5.0]]))
print("  extremes ->", q.min(), q.max(), "; constant image ->", quantize(np.full((2, 2), 1.5))[0, 0])
