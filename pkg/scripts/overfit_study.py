"""Overfit smoke study: depth-2 / base-4 net, 4 phantom pairs, 500 Adam steps at lr 3e-4.

Compares pairs built from the 4x mask against fully sampled (toy) pairs and
reports final / initial training loss for each setting.

    python3 scripts/overfit_study.py [--steps 500] [--dropout 0.0 0.05]
"""
import argparse
import time

from rtrecon.enhancer import NetworkConfig
from rtrecon.enhancer.training import TrainConfig, train
from rtrecon.phantom import generate_dataset, rt_layout
from rtrecon.pipeline import PipelineConfig, phantom_set, prepare_slices
from rtrecon.sampling import full_mask, make_mask


def toy_pairs(undersampled: bool, n: int = 4, rows: int = 64, cols: int = 48,
              noiseless: bool = False):
    cfg = PipelineConfig(rows=rows, cols=cols, n_slices=n)
    mask = make_mask(cols, cfg.mask_seed) if undersampled else full_mask(cols)
    if noiseless:
        slices = generate_dataset(n, rows, cols, rt_layout(cfg.n_coils).noiseless(),
                                  cfg.phantom_seed, cfg.line_axis)
    else:
        slices = phantom_set(cfg)
    return [p.pair() for p in prepare_slices(slices, mask, cfg)]


def overfit(pairs, steps: int = 500, dropout: float = 0.05, seed: int = 0, shortcut: bool = False):
    net = NetworkConfig(depth=2, base_filters=4, dropout_rate=dropout, input_channels=2,
                        input_shortcut=shortcut, seed=seed)
    tc = TrainConfig(batch_size=4, initial_lr=3e-4, max_steps=steps, max_epochs=10 * steps,
                     plateau_patience=10 * steps, early_stop_patience=10 * steps, seed=seed,
                     dtype="float64")
    return train(pairs, net, tc)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--dropout", type=float, nargs="+", default=[0.0, 0.05])
    ap.add_argument("--shortcut", type=int, nargs="+", default=[0, 1],
                    help="input shortcut settings to try (0 = plain U-Net)")
    ap.add_argument("--noiseless", action="store_true", help="drop the channel noise")
    a = ap.parse_args()
    for under in (True, False):
        pairs = toy_pairs(under, noiseless=a.noiseless)
        for rate, sc in [(r, c) for c in a.shortcut for r in a.dropout]:
            t0 = time.perf_counter()
            r = overfit(pairs, a.steps, rate, shortcut=bool(sc))
            s = r.step_losses
            print(f"{'4x mask' if under else 'full'} shortcut={sc} dropout={rate}: initial {s[0]:.5g} "
                  f"final {s[-1]:.5g} ratio {s[-1] / s[0]:.4f} ({time.perf_counter() - t0:.1f} s)",
                  flush=True)


if __name__ == "__main__":
    main()
