"""Plain-Python reference implementations of the hydrograph metrics, used as test oracles."""
import math

import numpy as np

from runoffbench.tensor import RngStream


def ref_nse(obs, sim):
    pairs = [(o, s) for o, s in zip(obs, sim) if not math.isnan(o)]
    mean = sum(o for o, _ in pairs) / len(pairs)
    return 1 - sum((s - o) ** 2 for o, s in pairs) / sum((o - mean) ** 2 for o, _ in pairs)


def ref_kge(obs, sim):
    pairs = [(o, s) for o, s in zip(obs, sim) if not math.isnan(o)]
    n = len(pairs)
    mo = sum(o for o, _ in pairs) / n
    ms = sum(s for _, s in pairs) / n
    so = math.sqrt(sum((o - mo) ** 2 for o, _ in pairs) / n)
    ss = math.sqrt(sum((s - ms) ** 2 for _, s in pairs) / n)
    r = sum((o - mo) * (s - ms) for o, s in pairs) / n / (so * ss)
    a, b = ss / so, ms / mo
    return 1 - math.sqrt((r - 1) ** 2 + (a - 1) ** 2 + (b - 1) ** 2), r, a, b


def ref_fhv(obs, sim, frac=0.02):
    pairs = [(o, s) for o, s in zip(obs, sim) if not math.isnan(o)]
    fdc_o = sorted((o for o, _ in pairs), reverse=True)
    fdc_s = sorted((s for _, s in pairs), reverse=True)
    h = max(1, int(frac * len(pairs)))
    return 100 * sum(fdc_s[i] - fdc_o[i] for i in range(h)) / sum(fdc_o[:h])


def ref_flv(obs, sim, frac=0.3, floor=1e-6):
    pairs = [(o, s) for o, s in zip(obs, sim) if not math.isnan(o)]
    n = len(pairs)
    fdc_o = sorted((max(o, floor) for o, _ in pairs), reverse=True)
    fdc_s = sorted((max(s, floor) for _, s in pairs), reverse=True)
    low = range(n - max(1, int(frac * n)), n)
    m = n - 1
    qo = sum(math.log(fdc_o[i]) - math.log(fdc_o[m]) for i in low)
    qs = sum(math.log(fdc_s[i]) - math.log(fdc_s[m]) for i in low)
    return -100 * (qs - qo) / qo


def seeded_pair(seed, n=1000, zeros=False, gaps=False):
    rng = RngStream(seed)
    obs = rng.exponential(2.0, n) + 0.05
    sim = obs * rng.uniform(0.6, 1.4, n) + rng.normal(0, 0.2, n) ** 2
    if zeros:
        obs[rng.random(n) < 0.15] = 0.0
        sim[rng.random(n) < 0.15] = 0.0
    if gaps:
        obs[rng.random(n) < 0.05] = np.nan
    return obs, sim
