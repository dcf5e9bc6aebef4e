"""Write a synthetic low-rank rating file for smoke runs and benchmarks."""

import argparse
from dataclasses import dataclass

from a2bas.data import write_ratings
from a2bas.synthetic import low_rank_ratings


@dataclass(frozen=True)
class SyntheticConfig:
    rows: int = 300
    cols: int = 300
    rank: int = 2
    density: float = 0.05
    noise: float = 0.1
    offset: float = 0.0
    seed: int = 0


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("out")
    for name, default in vars(SyntheticConfig()).items():
        p.add_argument(f"--{name}", type=type(default), default=default)
    args = vars(p.parse_args(argv))
    out = args.pop("out")
    cfg = SyntheticConfig(**args)
    m, _, _ = low_rank_ratings(cfg.rows, cfg.cols, cfg.rank, cfg.density, cfg.noise, seed=cfg.seed, offset=cfg.offset)
    write_ratings(m, out)
    print(f"wrote {len(m)} ratings ({cfg.rows}x{cfg.cols}) to {out}")


if __name__ == "__main__":
    main()
