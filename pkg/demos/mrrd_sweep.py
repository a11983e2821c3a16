"""Permutation decoding with 1, 3 and 5 branches on BCH(63,36)."""
from neuralbp import codes, harness
from neuralbp.mrrd import MrrdConfig

code = codes.get_code("bch63_36")
decoders = [harness.MrrdFrameDecoder(MrrdConfig(m=m, c=30, inner_iterations=2, seed=0))
            for m in (1, 3, 5)]
results = harness.compare_decoders(code, decoders, [3.0, 4.0, 5.0], seed=3)
for dec, pts in zip(decoders, results):
    print(dec.describe())
    for p in pts:
        print(f"  {p.ebno_db:.1f} dB  BER {p.ber:.3e}  FER {p.fer:.3e}  "
              f"mean iterations {p.mean_iterations:.2f}")
