"""Train the desk-scale CNN (stage 1 then stage 2) and save both checkpoints."""

import argparse
import time
from dataclasses import replace
from pathlib import Path

from crloc.neural import desk_preset, init_network, save_model
from crloc.train import TrainConfig, train_two_stage


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--epochs", type=int, default=100, help="max epochs per stage")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    net = init_network(desk_preset(), args.seed)
    cfg1 = replace(TrainConfig.desk(1, args.seed), epochs_max=args.epochs)
    cfg2 = replace(TrainConfig.desk(2, args.seed), epochs_max=args.epochs)
    t0 = time.time()

    def show(epoch, err):
        print(f"epoch {epoch:3d}  val {err:.4f}  t {time.time() - t0:7.1f}s", flush=True)

    net1, net2, rep1, rep2 = train_two_stage(net, cfg1, cfg2, on_epoch=show)
    save_model(net1, out / "stage1.crcnn")
    save_model(net2, out / "stage2.crcnn")
    print(f"stage1 best {rep1.best_error:.4f} @ {rep1.best_epoch} ({rep1.stop_reason})")
    print(f"stage2 best {rep2.best_error:.4f} @ {rep2.best_epoch} ({rep2.stop_reason})")
    print(f"wall {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
