"""
Training the averaged forecaster
================================

Fit the model to lagged random-walk copies, then look at what each piece
contributes: the validation curve, the head-only baseline and a grouped
variant that shares heads inside correlated channel groups.
"""

from averagetime.cluster import build_grouping
from averagetime.data import SplitSpec, fit_scaler, make_windows, split
from averagetime.model import ModelConfig, init_params, parameter_count
from averagetime.synth import SynthSpec, generate
from averagetime.train import TrainConfig, evaluate, train

# %%
# Chronological split, then standardize with training statistics only.
series = generate(SynthSpec("lagged-copies", 6, 2000, noise_std=0.1, seed=0))
L, H = 48, 24
tr, va, te = split(series, SplitSpec(), L, H)
scaler = fit_scaler(tr)
windows = [make_windows(scaler.transform(s), L, H) for s in (tr, va, te)]
print("windows per split:", [len(w) for w in windows])

# %%
# Three models sharing everything except head layout and embedding.
grouping = build_grouping(scaler.transform(tr).values, 0.8).grouping
configs = {
    "heads only": ModelConfig(6, L, H, use_embedding_path=False),
    "averaged": ModelConfig(6, L, H, n_transformer_layers=1, d_model=32, n_heads=4),
    "averaged, grouped": ModelConfig(6, L, H, n_transformer_layers=1, d_model=32, n_heads=4, grouping=grouping),
}
tc = TrainConfig(learning_rate=1e-3, batch_size=64, max_epochs=10, patience=3)

# %%
for name, cfg in configs.items():
    params = init_params(cfg, seed=0)
    best, report = train(params, cfg, windows[0], windows[1], tc)
    test = evaluate(best, cfg, windows[2])
    curve = " ".join(f"{v:.3f}" for _, v in report.history)
    print(f"{name:18s} params {parameter_count(best):6d}  test mse {test.mse:.4f}  val curve {curve}")
