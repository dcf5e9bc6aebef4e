"""Base training followed by refinement over a grid of antenna lengths.

Prints one line per al0 with rounds, committed rounds and validation/test
RMSE, plus the al0 chosen on validation. Useful for judging whether
refinement helps on a given dataset and base optimizer.
"""

import argparse
import time
from dataclasses import dataclass

from a2bas.data import SplitSpec, read_ratings, split
from a2bas.model import evaluate, init_factors
from a2bas.pso import SwarmConfig, plfa_train
from a2bas.refine import RefineConfig, sequential_refine
from a2bas.synthetic import low_rank_ratings
from a2bas.trainers import SgdConfig, sgd_train


@dataclass(frozen=True)
class StudyConfig:
    data: str = ""
    base: str = "plfa"
    f: int = 20
    eta: float = 0.015
    max_epochs: int = 300
    max_rounds: int = 10
    seed: int = 0
    grid: str = "0.01,0.03,0.1,0.3,0.5,1,2"


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    for name, default in vars(StudyConfig()).items():
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=type(default), default=default)
    cfg = StudyConfig(**vars(p.parse_args(argv)))

    if cfg.data:
        ratings = read_ratings(cfg.data, None if cfg.data.endswith(".data") else ",", densify=True)
    else:
        ratings, _, _ = low_rank_ratings(300, 300, 2, 0.05, 0.1, seed=cfg.seed)
    train, val, test = split(ratings, SplitSpec(seed=cfg.seed))
    start = init_factors(ratings.num_rows, ratings.num_cols, cfg.f, seed=cfg.seed)
    sgd_cfg = SgdConfig(eta=cfg.eta, max_epochs=cfg.max_epochs, seed=cfg.seed)

    t0 = time.perf_counter()
    if cfg.base == "plfa":
        base, _ = plfa_train(start, train, val, SwarmConfig(seed=cfg.seed), sgd_cfg)
    else:
        base, _ = sgd_train(start, train, val, sgd_cfg)
    print(f"{cfg.base}: val {evaluate(base, val).rmse:.6f} test {evaluate(base, test).rmse:.6f} "
          f"({time.perf_counter() - t0:.1f}s)")

    best = None
    for al0 in (float(x) for x in cfg.grid.split(",")):
        rc = RefineConfig(al0=al0, al_min=min(1e-3, al0), max_rounds=cfg.max_rounds, seed=cfg.seed)
        t0 = time.perf_counter()
        out, trace = sequential_refine(base, train, val, rc)
        v, t = evaluate(out, val).rmse, evaluate(out, test).rmse
        print(f"al0={al0:<6g} rounds={len(trace.rounds):<3d} committed={trace.committed_rounds:<3d} "
              f"val={v:.6f} test={t:.6f} ({time.perf_counter() - t0:.1f}s)")
        if best is None or v < best[0]:
            best = (v, al0, t)
    print(f"selected al0={best[1]:g} on validation, test {best[2]:.6f}")


if __name__ == "__main__":
    main()
