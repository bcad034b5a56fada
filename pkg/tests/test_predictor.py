"""
Tests for the attribute predictor
"""

import pytest
import torch

from portrait_lab.errors import ArgumentError, UntrainedModelError
from portrait_lab.predictor import (
    AttributePredictor, load_predictor, predict_attribute_vector, predict_attributes, predictor_arch,
    save_predictor, train_attribute_predictor,
)


def test_untrained_predictor_is_refused(experiment, dataset):
    predictor = AttributePredictor(predictor_arch(experiment, 32))
    with pytest.raises(UntrainedModelError):
        predict_attributes(predictor, dataset.image(0))
    with pytest.raises(UntrainedModelError):
        predict_attributes(None, dataset.image(0))


def test_training_holds_out_validation_samples(experiment, dataset, tmp_path):
    predictor, metrics = train_attribute_predictor(dataset, experiment, steps=3, out_dir=tmp_path)
    assert predictor.trained
    assert set(metrics) == {"train_mae", "val_mae"}
    assert 0.0 <= metrics["val_mae"] <= 1.0
    assert (tmp_path / "predictor_log.jsonl").exists()

    values = predict_attributes(predictor, dataset.images([0, 1, 2]))
    assert values.shape == (3, 4)
    assert float(values.min()) >= 0.0 and float(values.max()) <= 1.0

    vector = predict_attribute_vector(predictor, dataset.image(0))
    assert vector.names == ["elongation", "feature_size", "hue", "light_elevation"]


def test_checkpoint_keeps_the_trained_flag(experiment, dataset, tmp_path):
    predictor, _ = train_attribute_predictor(dataset, experiment, steps=2)
    save_predictor(predictor, tmp_path / "pred.pt")
    loaded = load_predictor(tmp_path / "pred.pt")
    assert loaded.trained
    assert torch.allclose(predict_attributes(loaded, dataset.image(3)), predict_attributes(predictor, dataset.image(3)))

    untrained = AttributePredictor(predictor_arch(experiment, 32))
    save_predictor(untrained, tmp_path / "fresh.pt")
    assert not load_predictor(tmp_path / "fresh.pt").trained


def test_predictor_rejects_wrong_resolution(experiment):
    predictor = AttributePredictor(predictor_arch(experiment, 32))
    with pytest.raises(ArgumentError, match="32px"):
        predictor(torch.zeros(1, 3, 16, 16))
