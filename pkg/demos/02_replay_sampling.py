"""Fill a prioritized buffer and compare empirical draw frequencies with the target distribution."""
import numpy as np

from ssdkd.losses import TeacherPrediction
from ssdkd.replay import ReplayBuffer

if __name__ == "__main__":
    rng = np.random.default_rng(0)
    buf = ReplayBuffer(8, 2, alpha=0.6, beta=0.4, rng=1)
    for kl in rng.exponential(1.0, 8):
        buf.insert(np.zeros(1), TeacherPrediction(np.zeros(2), 0, 0.5), kl)
    p = buf.probabilities()
    n = 200_000
    freq = np.bincount(buf.sample_minibatch(n).indices - buf.seqs()[0], minlength=len(p)) / n
    print("priority  target  observed  is_weight")
    for prio, target, seen, w in zip(buf.priorities(), p, freq, buf.is_weights()):
        print(f"{prio:8.3f}  {target:.4f}  {seen:.4f}    {w:.3f}")
    print(f"L1 distance {np.abs(freq - p).sum():.4f}")
