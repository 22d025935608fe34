"""Distill a blob classifier into a smaller student without touching the training rows."""
import sys

from ssdkd import engine
from ssdkd.config import default_config

if __name__ == "__main__":
    epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 4
    cfg = default_config(engine={"epochs": epochs})
    train, test = engine.load_datasets(cfg)
    res = engine.run(cfg, train, test)
    print(f"teacher accuracy {res.teacher_accuracy:.4f}, untrained student {res.initial_accuracy:.4f}")
    for r in res.reports:
        print(f"epoch {r.epoch}: student {r.accuracy:.4f}  buffer {r.buffer_size}  "
              f"census entropy {r.census_entropy:.3f}  mean p_T {r.mean_p_T:.3f}")
    print(f"forwards on original training rows: {res.monitor.original_forwards}")
