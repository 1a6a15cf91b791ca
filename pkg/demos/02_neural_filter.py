"""Train the windowed neural filter and compare it with EnKF.

Generates a small Selkov dataset, trains the context-free variant for a few
epochs, and scores both the neural filter and a tuned EnKF on the held-out
test split. Takes a minute or two on one CPU core.
"""

import numpy as np

from filterlab.bench import (
    NeuralRunConfig,
    evaluate_bayes,
    evaluate_neural,
    train_neural,
    tune_inflation,
)
from filterlab.bayes import FilterConfig
from filterlab.data import generate_dataset
from filterlab.systems import make_system


def main():
    ds = generate_dataset(make_system("selkov"), n_traj=50, traj_len=200, master_seed=0)
    print(f"dataset: {len(ds.trajectories)} trajectories of {len(ds.trajectories[0])} steps")

    obs_rmse = np.mean(
        [
            np.sqrt(np.mean((t.states[39:] - t.observations[39:]) ** 2))
            for t in ds.by_split("test")
        ]
    )
    print(f"observation baseline: rmse {obs_rmse:.4f}")

    inflation = tune_inflation(ds, "enkf")
    enkf_rmse, enkf_ms = evaluate_bayes(ds, "enkf", FilterConfig(inflation=inflation))
    print(f"EnKF (inflation {inflation:g}): rmse {enkf_rmse:.4f}   {enkf_ms:.3f} ms/step")

    cfg = NeuralRunConfig(
        variant="llm-filter-o",
        epochs=10,
        d_model=64,
        head_hidden=128,
        n_layers=2,
        n_heads=2,
        stride=4,
        lr=1e-3,
    )
    print("training the context-free neural filter (10 epochs)...")
    model, _ = train_neural(ds, cfg, seed=0)
    nn_rmse, nn_ms = evaluate_neural(model, None, ds)
    print(f"neural filter: rmse {nn_rmse:.4f}   {nn_ms:.3f} ms/step")


if __name__ == "__main__":
    main()
