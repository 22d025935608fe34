"""Check reverse-mode gradients of a small composite loss against central differences."""
import numpy as np

from ssdkd import autodiff as ad


def loss(x):
    h = ad.tanh(ad.reshape(x, (4, 3)))
    centered = ad.sub(h, ad.mean_axis(h, 0))
    return ad.add(ad.sum(ad.square(centered)), ad.norm(ad.var_axis(h, 0)))


if __name__ == "__main__":
    for seed in range(3):
        x0 = np.random.default_rng(seed).standard_normal(12)
        print(f"seed {seed}: max relative error {ad.fd_check(loss, x0):.2e}")
