"""
Pooling and combination variants
================================

The six models LinkedRNN11 .. LinkedRNN23 cross two ways of pooling RNN
states (last state, attention) with three ways of combining link rounds
(last round, feed-forward over the last two, feed-forward over all).
"""

import statistics

from linkedrnn import ModelConfig, SplitSpec, SyntheticSpec, TrainConfig, generate_synthetic, run_experiment

data = generate_synthetic(SyntheticSpec(seed=0))

for i, pooling in enumerate(("last", "attention"), start=1):
    for j, aggregation in enumerate(("last", "ffn_last_two", "ffn_all"), start=1):
        cfg = ModelConfig(input_dim=data.d, hidden_dim=32, layers=2, pooling=pooling,
                          aggregation=aggregation, num_classes=4)
        scores = []
        for seed in range(3):
            _, rep, _ = run_experiment(data, cfg, TrainConfig(lr=0.01, seed=seed), SplitSpec(seed=seed))
            scores.append(rep.test_metrics["micro_f1"])
        print(f"LinkedRNN{i}{j}  {pooling:<9} {aggregation:<12} median micro-F1 {statistics.median(scores):.3f}")
