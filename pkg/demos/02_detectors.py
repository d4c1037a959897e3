"""
The three reference detectors on synthetic signals
===================================================

A tone burst for the connected-region detector, a frequency sweep for the
template detector and a click train for the pulse-train detector.
"""
import numpy as np

from delma.detectors import (
    BlockData,
    SpectrogramTemplate,
    detect_connected_region,
    detect_pulse_train,
    detect_template,
)
from delma.detectors.connected import block_spectrogram
from delma.dsp import SpectrogramParams
from delma.synth import add_signal, amplitude_for_snr, click_train, sweep, tone_burst

rate = 2000
rng = np.random.default_rng(0)
amp = amplitude_for_snr(20, 0.01)  # 20 dB over the noise


def noise(seconds):
    return 0.01 * rng.standard_normal(int(seconds * rate))


# energy detection: one 0.5 s burst at 500 Hz, planted at t = 4 s
x = noise(10)
add_signal(x, tone_burst(rate, 500, 0.5, amp), 4 * rate)
for e in detect_connected_region(BlockData(x, rate)):
    print(f"region   {e.t_start:6.3f}-{e.t_end:6.3f} s  {e.f_low:5.1f}-{e.f_high:5.1f} Hz  "
          f"score {e.score:.2f}")

# template matching: cut a template from one sweep, find two copies
y = noise(8)
s = sweep(rate, 200, 600, 0.8, amp)
add_signal(y, s, 1 * rate)
add_signal(y, s, 5 * rate)
block = BlockData(y, rate)
spec, first = block_spectrogram(block, SpectrogramParams(), 63)
template = SpectrogramTemplate.from_spectrogram(spec, (rate - first) // 128 - 1, 15, 150, 650)
for e in detect_template(block, {"template": template}):
    print(f"template {e.t_start:6.3f}-{e.t_end:6.3f} s  score {e.score:.4f}")

# pulse trains: six clicks every 0.5 s are accepted, irregular ones are not
regular = 2.0 + 0.5 * np.arange(6)
irregular = 0.5 + np.cumsum(rng.uniform(0.1, 2.0, 6))
for name, onsets in (("regular", regular), ("irregular", irregular)):
    z = click_train(rate, 16, onsets, 0.5, seed=1)
    found = detect_pulse_train(BlockData(z, rate))
    print(f"{name:9s} train: {len(found)} event(s)",
          *(f"{e.t_start:.3f}-{e.t_end:.3f} s score {e.score:.1f}" for e in found))
