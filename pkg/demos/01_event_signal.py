"""The event signal and its debounced edge detector.

Every policy emits a scalar sigma in [0, 1] each tick.  Control handoffs
happen only on debounced threshold crossings, so a noisy model output
cannot flap the task state machine.
"""

import numpy as np

from handoff import Edge, EdgeDetector, EventSample, detect_edge

rng = np.random.default_rng(0)

# A plausible model output: low plateau, noisy ramp, high plateau, drop.
trace = np.concatenate([
    np.full(8, 0.03) + rng.normal(0, 0.02, 8),
    np.linspace(0.1, 0.95, 6) + rng.normal(0, 0.05, 6),
    np.full(10, 0.97) + rng.normal(0, 0.02, 10),
    np.full(8, 0.04) + rng.normal(0, 0.02, 8),
])

detector = EdgeDetector()  # 0.9 / 0.1 thresholds, 3-tick debounce
print("tick  sigma  event")
for tick, sigma in enumerate(trace):
    event = detect_edge(detector, EventSample(sigma=float(sigma), tick=tick))
    marker = "" if event is Edge.NONE else f"  <-- {event.value.upper()}"
    print(f"{tick:4d}  {max(0, min(1, sigma)):.3f}{marker}")

print()
print("Note the single RISING edge despite noise near the threshold, and the")
print("FALLING edge only after three consecutive low ticks.")
