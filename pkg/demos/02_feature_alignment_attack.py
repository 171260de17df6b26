"""The three-phase reconstruction attack, run against a short toy session.

Phase a: while the session trains, the server-side observer fits a substitute
client so its features become indistinguishable from the real smashed data
(critic loss) while staying distributionally close (multi-kernel MMD).
Phase b: an inverse network learns to decode the substitute's features.
Phase c: the inverse decodes the captured final-pass smashed data.
"""

import os

import numpy as np

from sll import Rng, SessionConfig, SyntheticSpec, gen_synthetic
from sll.attack import AttackConfig, AttackObserver
from sll.metrics import feature_similarity, psnr, ssim, write_grid_ppm
from sll.protocol import run_training
from sll.rng import STREAM_ATTACK, STREAM_DATA

rng = Rng(0)
spec = SyntheticSpec()
priv = gen_synthetic(spec, 128, rng.spawn(STREAM_DATA))   # the victim's data
aux = gen_synthetic(spec, 256, rng.spawn(STREAM_DATA))    # attacker's own data

observer = AttackObserver(AttackConfig(inverse_epochs=15), aux,
                          split_point=2, image_size=16, base_channels=8,
                          rng=Rng(0).spawn(STREAM_ATTACK))

cfg = SessionConfig(split_point=2, batch_size=32, iterations=800,
                    server_observer=observer)
print("training the split session (the observer shadows every batch)...")
res = run_training(cfg, priv, Rng(0))

hist = observer.loss_history
print(f"critic loss   first/last: {hist['attack_l_disc'][0]:+.3f} / "
      f"{hist['attack_l_disc'][-1]:+.3f}")
print(f"mk-mmd        first/last: {hist['attack_l_mmd'][0]:.3f} / "
      f"{hist['attack_l_mmd'][-1]:.3f}")

observer.finish_observation()
print("\nfitting the inverse decoder on substitute features...")
observer.fit_inverse()

recon = observer.reconstruct(res.snapshot)
pairs = res.snapshot.evaluation_pairs()
truth = np.concatenate([p[1] for p in pairs])
z_tgt = np.concatenate([p[0] for p in pairs])
z_sub = observer.sub.forward(truth.astype(np.float32), train=False)

cos, _ = feature_similarity(z_sub, z_tgt)
print(f"substitute vs victim feature cosine: {cos:.3f}")
print(f"mean reconstruction ssim: "
      f"{np.mean([ssim(recon[i], truth[i]) for i in range(len(truth))]):.3f}")
print(f"mean reconstruction psnr: "
      f"{np.mean([psnr(recon[i], truth[i]) for i in range(len(truth))]):.2f} dB")

out = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(out, exist_ok=True)
write_grid_ppm(truth[:16], 8, os.path.join(out, "attack_truth.ppm"))
write_grid_ppm(recon[:16], 8, os.path.join(out, "attack_recon.ppm"))
print(f"\nimage grids written to {out}/attack_*.ppm")
