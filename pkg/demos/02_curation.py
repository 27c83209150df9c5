"""Find planted flips and jitter bursts in a synthetic corpus.

Two isolation forests are fitted on the pooled per-frame root rotation
change and joint jerk.  Flips become split points; jitter frames are cut
out with a small margin; what remains is returned as clip spans.
"""
import numpy as np

from motionkit import curation, synthetic
from motionkit.geom import Skeleton



def runs(frames):
    """[3, 4, 5, 9] -> '3..5, 9..9'"""
    if not frames:
        return "none"
    breaks = [i for i in range(1, len(frames)) if frames[i] != frames[i - 1] + 1]
    edges = zip([0] + breaks, breaks + [len(frames)])
    return ", ".join(f"{frames[a]}..{frames[b - 1]}" for a, b in edges)


body = Skeleton.default()
clips, outlier = synthetic.curation_corpus(np.random.default_rng(1), 60, body)
forests = curation.fit_curation_forests([c.motion for c in clips], body, seed=0)
print(f"{len(clips)} clips, global outlier planted in clip {outlier}")

shown = 0
for i, c in enumerate(clips):
    if not (c.flip_frames or c.burst_frames) or shown == 4:
        continue
    shown += 1
    v = curation.analyze_clip(c.motion, body, forests.orientation, forests.jerk)
    print(f"\nclip {i} ({v.num_frames} frames)")
    print(f"  planted flip at {c.flip_frames}, detected splits {v.orientation_frames}")
    if c.burst_frames:
        print(f"  planted bursts {runs(c.burst_frames)}; rejected {runs(v.rejected_frames)}")
    print(f"  spans kept: {[(s.start, s.end) for s in v.spans]}")

# the frame that isolates fastest in the whole corpus
scores = [forests.jerk.score(curation.jerk_series(c.motion.joint_positions(body), c.motion.fps)) for c in clips]
best = int(np.argmax([s.max() for s in scores]))
print(f"\nhighest jerk score {scores[best].max():.3f} is in clip {best}")
