"""Train two small motion tokenizers, with and without the wavelet wrap.

Both see the same jittery training clips, the same seed and step count.
Reconstructions of clean held-out clips are compared on joint error and on
how far their mean acceleration strays from the ground truth.  Takes a few
minutes on one core.
"""
import time

import numpy as np

from motionkit import fsq, synthetic
from motionkit import representation as rep
from motionkit.geom import Skeleton
from motionkit.wavelet import WaveletConfig

body = Skeleton.default()
rng = np.random.default_rng(11)
train = [synthetic.add_jitter(synthetic.random_motion(rng, 120, body), rng, 0.02) for _ in range(40)]
held_out = [synthetic.random_motion(rng, 120, body) for _ in range(10)]
feats = [rep.encode_features(m, body) for m in train]
norm = rep.fit_norm_stats(feats)

cfg = fsq.FsqConfig()
print(f"levels {cfg.levels}: {cfg.vocab_size} codes, one token per {cfg.downsample} frames")
for name, wav in (("db4, 2 levels", WaveletConfig("db4", 2, "periodic")), ("no wavelet", None)):
    t0 = time.time()
    model = fsq.init_tokenizer(cfg, wav, norm, seed=0)
    model, losses = fsq.train_reconstruction(model, feats, fsq.TrainConfig(steps=1000), seed=0)
    r = fsq.eval_reconstruction(model, held_out, body)
    print(f"{name:14s} loss {losses[0]:.3f} -> {losses[-1]:.3f}  MPJPE {r['mpjpe_mm']:.1f} mm  "
          f"acc {r['acc_mean']:.2f} vs true {r['gt_acc_mean']:.2f} m/s^2  ({time.time() - t0:.0f}s)")

tokens = fsq.encode_motion(model, rep.encode_features(held_out[0], body))
print(f"\nfirst held-out clip -> {len(tokens)} tokens: {tokens.codes[:8].tolist()} ...")
