"""Learn the relaxation factor of min-sum and sweep BER over fixed factors."""
import numpy as np

from neuralbp import codes, harness, training
from neuralbp.decoder import PRESETS, Parameters, tanner_for

code = codes.get_code("bch63_45")
spec = PRESETS["relaxed-ms"]
result = training.train(code, spec, training.LossConfig("final"),
                        training.OptimizerConfig("adam", 0.01, 120, 300), seed=0)
print("learned gamma trace:", " ".join(f"{g:.3f}" for g in result.gammas[::50]),
      f"final {result.gammas[-1]:.3f}")

gammas = [0.0, 0.5, 0.7, 0.8, 0.875, 0.95]
decoders = []
for g in gammas:
    p = Parameters.default(spec, tanner_for(code))
    p.gamma_raw[:] = -np.inf if g == 0 else np.log(g / (1 - g))
    decoders.append(harness.BpFrameDecoder(spec, p))
points = harness.compare_decoders(code, decoders, [6.0], seed=2)
for g, (pt,) in zip(gammas, points):
    print(f"gamma {g:5.3f}: BER {pt.ber:.3e} +- {pt.ber_stderr:.1e}")
