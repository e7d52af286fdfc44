# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0

"""Long training runs on synthetic data: memorization, learnability, ablations."""

import pytest

from graformer.data import generate_synthetic
from graformer.graphops import human16
from graformer.layers import GraFormerModel, ModelConfig, load_checkpoint
from graformer.training import TrainConfig, evaluate, train

from tests.graformertest import GraformerTest


pytestmark = pytest.mark.expensive


def benchmark_split():
    """4096 training samples and 512 held-out ones from the same generator."""
    skeleton = human16()
    return generate_synthetic(skeleton, 4096, seed=100), generate_synthetic(skeleton, 512, seed=200)


def train_variant(variant, train_set, eval_set, epochs=30):
    config = ModelConfig(human16(), layers=2, dim=64, heads=4, dropout=0.1, variant=variant)
    model = GraFormerModel(config, seed=11)
    train(model, train_set, TrainConfig(batch_size=64, epochs=epochs, dropout=0.1, seed=11), eval_dataset=eval_set)
    return evaluate(model, eval_set).mpjpe_mm


class OverfitTest(GraformerTest):
    """The default model memorizes a small training set."""

    def test_overfit_64_samples(self):
        dataset = generate_synthetic(human16(), 64, seed=7)
        model = GraFormerModel(ModelConfig(human16()), seed=7)
        config = TrainConfig(batch_size=64, epochs=2000, dropout=0.0, seed=7)
        result = train(model, dataset, config, checkpoint_dir="run")
        assert evaluate(model, dataset).mpjpe_mm < 1.0
        assert result.log[-1]["eval_mpjpe_mm"] < 1.0
        # The written checkpoint scores the same.
        assert evaluate(load_checkpoint("run/final.grfk"), dataset).mpjpe_mm < 1.0


class LearnabilityTest(GraformerTest):
    """Training generalizes to held-out samples, and the full model is best."""

    run_in_temp_dir = False

    def test_trained_beats_untrained(self):
        train_set, eval_set = benchmark_split()
        config = ModelConfig(human16(), layers=2, dim=64, heads=4, dropout=0.1)
        untrained = evaluate(GraFormerModel(config, seed=11), eval_set).mpjpe_mm
        trained = train_variant("graformer", train_set, eval_set)
        assert trained <= 0.2 * untrained

    def test_ablation_ordering(self):
        train_set, eval_set = benchmark_split()
        full = train_variant("graformer", train_set, eval_set)
        no_cheb = train_variant("model-at", train_set, eval_set)
        no_attention = train_variant("model-c", train_set, eval_set)
        assert full <= 1.05 * no_cheb
        assert full <= 1.05 * no_attention
