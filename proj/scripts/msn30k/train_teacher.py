#!/usr/bin/env python3
"""Train a LambdaMART teacher on MSLR-WEB30K with LightGBM and save it as text.

    pip install lightgbm scikit-learn
    python3 train_teacher.py --fold Fold1 --out teacher.txt --leaves 256 --trees 600

The text model is read directly by `ltrnn --teacher teacher.txt`.
"""
import argparse

import lightgbm as lgb
import numpy as np
from sklearn.datasets import load_svmlight_file


def load(path):
    x, y, qid = load_svmlight_file(path, query_id=True, n_features=136)
    _, counts = np.unique(qid, return_counts=True)
    # load_svmlight_file keeps file order, and queries are contiguous in the files
    return x, y, counts


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--fold", default="Fold1")
    ap.add_argument("--out", default="teacher.txt")
    ap.add_argument("--leaves", type=int, default=256)
    ap.add_argument("--trees", type=int, default=600)
    ap.add_argument("--learning-rate", type=float, default=0.05)
    ap.add_argument("--min-data-in-leaf", type=int, default=100)
    ap.add_argument("--min-sum-hessian", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    xt, yt, gt = load(f"{args.fold}/train.txt")
    xv, yv, gv = load(f"{args.fold}/vali.txt")
    train = lgb.Dataset(xt, yt, group=gt)
    valid = lgb.Dataset(xv, yv, group=gv, reference=train)
    params = {
        "objective": "lambdarank",
        "metric": "ndcg",
        "ndcg_eval_at": [10],
        "num_leaves": args.leaves,
        "learning_rate": args.learning_rate,
        "min_data_in_leaf": args.min_data_in_leaf,
        "min_sum_hessian_in_leaf": args.min_sum_hessian,
        "num_threads": 0,
        "seed": args.seed,
        "verbose": -1,
    }
    model = lgb.train(
        params,
        train,
        num_boost_round=args.trees,
        valid_sets=[valid],
        callbacks=[lgb.early_stopping(100), lgb.log_evaluation(50)],
    )
    model.save_model(args.out, num_iteration=model.best_iteration)
    print(f"saved {args.out}: {model.best_iteration} trees, {args.leaves} leaves")


if __name__ == "__main__":
    main()
