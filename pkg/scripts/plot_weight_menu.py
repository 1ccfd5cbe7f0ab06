#!/usr/bin/env python3
"""Render the four lag-weighting shapes used by the mixed-frequency studies."""

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from bsgs.cli import weight_shape_plot

MENU = {
    "bell (5,15,0)": (5.0, 15.0, 0.0),
    "fast decay (1,10,0)": (1.0, 10.0, 0.0),
    "slow decay (1,4,0)": (1.0, 4.0, 0.0),
    "flat (1,1,0)": (1.0, 1.0, 0.0),
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="weight_menu.svg")
    ap.add_argument("--p-x", type=int, default=11)
    args = ap.parse_args()
    plt.rcParams["svg.hashsalt"] = "bsgs"
    fig, ax = plt.subplots(figsize=(7, 4))
    weight_shape_plot(MENU, p_x=args.p_x)(ax)
    fig.tight_layout()
    fig.savefig(args.out, format="svg", metadata={"Date": None})
    print(args.out)


if __name__ == "__main__":
    main()
