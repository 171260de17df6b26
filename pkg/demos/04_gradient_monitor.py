"""The client-side gradient monitor: spotting a hijacked server.

A label-aware training server sends back gradients that are more alike
within a label class than across classes. A hijacking server optimizing its
own feature objective loses that signature. The monitor scores the gap and
aborts the session when it collapses.
"""

from sll import Rng, SessionConfig, SyntheticSpec, gen_synthetic
from sll.detection import GsConfig, make_monitor
from sll.protocol import run_training
from sll.rng import STREAM_DATA

# short warmup so the demo finishes quickly; the defaults (warmup 450,
# window 32) suit real session lengths
gs = GsConfig(warmup=40, window=16)


def session(seed, hijack):
    priv = gen_synthetic(SyntheticSpec(), 128, Rng(seed).spawn(STREAM_DATA))
    cfg = SessionConfig(split_point=2, batch_size=32, iterations=120,
                        client_monitor=make_monitor(gs), hijack_stub=hijack)
    return run_training(cfg, priv, Rng(seed))


honest = session(0, hijack=False)
print(f"honest server:   status={honest.status}  abort={honest.abort_iteration}")

hijack = session(0, hijack=True)
print(f"hijacked server: status={hijack.status}  abort={hijack.abort_iteration}")

# the per-iteration verdicts live in the transcript
rows = [r for r in hijack.transcript.records if "gs_score" in r]
print("\nlast monitor rows before the abort:")
for r in rows[-4:]:
    print(f"  iter {r['iteration']:>3}  score {r['gs_score']:+.3f}  "
          f"verdict {r['gs_verdict']}")
