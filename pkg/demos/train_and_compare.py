"""Train a recurrent neural BP decoder and compare it with plain BP.

Usage: python demos/train_and_compare.py [code] [steps]

Defaults to BCH(63,36) with 300 minibatches, which takes about half a minute;
2000 steps gives the larger gain quoted in the README.
"""
import sys
import time

from neuralbp import codes, harness, training
from neuralbp.decoder import PRESETS

name = sys.argv[1] if len(sys.argv) > 1 else "bch63_36"
steps = int(sys.argv[2]) if len(sys.argv) > 2 else 300
code = codes.get_code(name)

t0 = time.perf_counter()
result = training.train(code, PRESETS["bp-rnn"], training.LossConfig("multiloss"),
                        training.OptimizerConfig("rmsprop", 0.001, 120, steps), seed=0)
print(f"trained {steps} steps in {time.perf_counter() - t0:.0f}s; "
      f"loss {result.losses[0]:.4f} -> {result.losses[-1]:.4f}")

snrs = [3.0, 4.0, 5.0, 6.0]
plain, neural = harness.compare_decoders(
    code, [harness.BpFrameDecoder(PRESETS["bp"]),
           harness.BpFrameDecoder(PRESETS["bp-rnn"], result.params)], snrs, seed=1)
print("Eb/N0   plain BP     neural BP    ratio")
for p, q in zip(plain, neural):
    print(f"{p.ebno_db:4.1f}   {p.ber:.3e}    {q.ber:.3e}    {p.ber / q.ber:.2f}")
