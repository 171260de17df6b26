"""Client-side defenses vs the reconstruction attack at identical budgets.

Each run is the same toy session; only the client's defense hook changes.
Watch two numbers move in opposite directions: reconstruction SSIM (the
attacker's gain, lower is safer) and final task loss (the client's cost).
"""

import numpy as np

from sll import Rng, SessionConfig, SyntheticSpec, gen_synthetic
from sll.attack import AttackConfig, AttackObserver
from sll.defenses import DefenseConfig, make_defense
from sll.metrics import ssim
from sll.protocol import run_training
from sll.rng import STREAM_ATTACK, STREAM_DATA, STREAM_DEFENSE


def attacked_session(defense_cfg, seed=0, iters=600):
    rng = Rng(seed)
    spec = SyntheticSpec()
    priv = gen_synthetic(spec, 128, rng.spawn(STREAM_DATA))
    aux = gen_synthetic(spec, 256, rng.spawn(STREAM_DATA))
    ob = AttackObserver(AttackConfig(inverse_epochs=10), aux, 2, 16, 8,
                        Rng(seed).spawn(STREAM_ATTACK))
    defense = None
    if defense_cfg is not None:
        defense = make_defense(defense_cfg, Rng(seed).spawn(STREAM_DEFENSE))
    cfg = SessionConfig(split_point=2, batch_size=32, iterations=iters,
                        server_observer=ob, client_defense=defense)
    res = run_training(cfg, priv, Rng(seed))
    ob.finish_observation()
    ob.fit_inverse()
    recon = ob.reconstruct(res.snapshot)
    pairs = res.snapshot.evaluation_pairs()
    truth = np.concatenate([p[1] for p in pairs])
    mean_ssim = float(np.mean([ssim(recon[i], truth[i])
                               for i in range(len(truth))]))
    task_loss = res.transcript.iteration_records()[-1]["task_loss"]
    return mean_ssim, task_loss


candidates = [
    ("none", None),
    ("noise sigma=2", DefenseConfig(kind="noise", sigma=2.0)),
    ("noise sigma=5", DefenseConfig(kind="noise", sigma=5.0)),
    ("dcor alpha=0.8", DefenseConfig(kind="dcor", alpha=0.8)),
    ("dp C=1 b=0.5", DefenseConfig(kind="dp", clip=1.0, scale=0.5)),
]

print(f"{'defense':<16} {'recon ssim':>10} {'task loss':>10}")
for name, dcfg in candidates:
    s, l = attacked_session(dcfg)
    print(f"{name:<16} {s:>10.3f} {l:>10.3f}")
print("\nlower ssim = stronger privacy; higher task loss = utility paid for it")
