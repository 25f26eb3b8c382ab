import numpy as np
import pytest

from spinemetric.backbone import (
    HEAD_CLASSIFIER,
    HEAD_EMBEDDING,
    NetworkConfig,
    init_model,
    load_model,
    save_model,
)
from spinemetric.losses import GradingMargins
from spinemetric.mining import GradeLabel, RegionLabel, make_folds
from spinemetric.phantom import PhantomConfig, generate_dataset
from spinemetric.pipeline import (
    STAGE_FRACTURE,
    STAGE_LABEL,
    STAGE_REPRESENTATION,
    PipelineConfig,
    StagePlan,
    label_targets,
    run_pipeline,
    run_stage,
    validate_stage_plans,
)

G0, G2, G3 = GradeLabel.G0, GradeLabel.G2, GradeLabel.G3

TINY_NET = NetworkConfig(input_size=8, conv_channels=(4, 8), linear_dims=(16, 8))


def balanced_samples(per_grade=4, seed=1):
    counts = {(g, r): per_grade for g in (G0, G2, G3) for r in RegionLabel}
    samples, _ = generate_dataset(PhantomConfig(seed=seed), counts, seed=seed)
    return samples


def tiny_config(*plans, seed=3):
    return PipelineConfig(network=TINY_NET, stages=tuple(plans), seed=seed)


def param_bytes(model):
    tensors = dict(model.parameters())
    tensors.update(model.bn_stats())
    return {k: v.tobytes() for k, v in tensors.items()}


class TestLabelTargets:
    def test_enumeration(self):
        assert label_targets([RegionLabel.T1_T5, RegionLabel.L5]) == [0, 4]

    def test_empty(self):
        assert label_targets([]) == []

    def test_all_regions_cover_five_classes(self):
        assert set(label_targets(list(RegionLabel))) == {0, 1, 2, 3, 4}


class TestStagePlans:
    def test_fracture_requires_cross_entropy(self):
        with pytest.raises(ValueError):
            StagePlan(STAGE_FRACTURE, "grading", epochs=1)

    def test_label_pretrain_rejects_grading(self):
        with pytest.raises(ValueError):
            StagePlan(STAGE_LABEL, "grading", epochs=1)

    def test_unknown_stage(self):
        with pytest.raises(ValueError):
            StagePlan("Finetune", "cross_entropy", epochs=1)

    def test_out_of_order_rejected(self):
        plans = [
            StagePlan(STAGE_FRACTURE, "cross_entropy", epochs=1),
            StagePlan(STAGE_REPRESENTATION, "grading", epochs=1),
        ]
        with pytest.raises(ValueError):
            validate_stage_plans(plans)

    def test_duplicate_stage_rejected(self):
        plans = [
            StagePlan(STAGE_REPRESENTATION, "grading", epochs=1),
            StagePlan(STAGE_REPRESENTATION, "triplet", epochs=1),
        ]
        with pytest.raises(ValueError):
            validate_stage_plans(plans)

    def test_config_round_trip(self):
        config = tiny_config(
            StagePlan(STAGE_LABEL, "contrastive", epochs=2),
            StagePlan(STAGE_REPRESENTATION, "grading", epochs=3),
            StagePlan(STAGE_FRACTURE, "cross_entropy", epochs=4),
        )
        back = PipelineConfig.from_dict(config.to_dict())
        assert back.to_json() == config.to_json()

    def test_margin_hierarchy_refused_at_config_parse(self):
        doc = tiny_config(StagePlan(STAGE_REPRESENTATION, "grading", epochs=1)).to_dict()
        doc["margins"] = {"alpha": 0.5, "beta": 1.0, "gamma": 0.2}
        with pytest.raises(ValueError):
            PipelineConfig.from_dict(doc)


class TestRunStage:
    def test_zero_epochs_is_noop(self):
        samples = balanced_samples()
        config = tiny_config(StagePlan(STAGE_REPRESENTATION, "grading", epochs=0))
        model = init_model(TINY_NET, seed=3)
        before = param_bytes(model)
        run_stage(model, config.stages[0], samples, seed=3, config=config)
        assert param_bytes(model) == before

    def test_grading_loss_decreases_over_training(self):
        # 60 samples (20 per grade), 200 epochs, reduced backbone
        samples = balanced_samples(per_grade=4)
        config = tiny_config(StagePlan(STAGE_REPRESENTATION, "grading", epochs=200))
        model = init_model(TINY_NET, seed=3)
        record = run_stage(model, config.stages[0], samples, seed=3, config=config)
        assert len(record.epoch_losses) == 200
        assert record.epoch_losses[-1] < record.epoch_losses[0]
        assert np.mean(record.epoch_losses[-10:]) < 0.5 * np.mean(record.epoch_losses[:10])

    def test_single_class_fracture_split_refused(self):
        counts = {(G0, r): 3 for r in RegionLabel}
        samples, _ = generate_dataset(PhantomConfig(seed=2), counts, seed=2)
        config = tiny_config(StagePlan(STAGE_FRACTURE, "cross_entropy", epochs=1))
        model = init_model(TINY_NET, seed=0)
        with pytest.raises(ValueError):
            run_stage(model, config.stages[0], samples, seed=0, config=config)

    def test_fracture_stage_swaps_head_automatically(self):
        samples = balanced_samples()
        config = tiny_config(StagePlan(STAGE_FRACTURE, "cross_entropy", epochs=1))
        model = init_model(TINY_NET, seed=0)
        assert model.head == HEAD_EMBEDDING
        run_stage(model, config.stages[0], samples, seed=0, config=config)
        assert model.head == HEAD_CLASSIFIER
        assert model.output_dim == 2

    def test_metric_stage_requires_embedding_head(self):
        samples = balanced_samples()
        config = tiny_config(StagePlan(STAGE_REPRESENTATION, "triplet", epochs=1))
        model = init_model(TINY_NET, seed=0).swap_head(HEAD_CLASSIFIER, seed=0)
        with pytest.raises(ValueError):
            run_stage(model, config.stages[0], samples, seed=0, config=config)

    def test_empty_split_refused(self):
        config = tiny_config(StagePlan(STAGE_REPRESENTATION, "grading", epochs=1))
        with pytest.raises(ValueError):
            run_stage(init_model(TINY_NET, seed=0), config.stages[0], [], seed=0, config=config)

    @pytest.mark.parametrize("loss_kind", ["contrastive", "triplet"])
    def test_label_pretrain_losses_run(self, loss_kind):
        samples = balanced_samples(per_grade=2)
        config = tiny_config(StagePlan(STAGE_LABEL, loss_kind, epochs=2))
        model = init_model(TINY_NET, seed=1)
        record = run_stage(model, config.stages[0], samples, seed=1, config=config)
        assert len(record.epoch_losses) == 2
        assert all(np.isfinite(v) for v in record.epoch_losses)


class TestCheckpointContinuity:
    def test_stage_boundary_round_trip_is_bit_exact(self, tmp_path):
        samples = balanced_samples()
        stage1 = StagePlan(STAGE_REPRESENTATION, "grading", epochs=2)
        stage2 = StagePlan(STAGE_FRACTURE, "cross_entropy", epochs=2)
        config = tiny_config(stage1, stage2)

        model_a = init_model(TINY_NET, seed=3)
        run_stage(model_a, stage1, samples, seed=3, config=config)
        save_model(model_a, tmp_path / "stage1.gmck")
        run_stage(model_a, stage2, samples, seed=3, config=config)

        model_b = load_model(tmp_path / "stage1.gmck")
        run_stage(model_b, stage2, samples, seed=3, config=config)

        assert param_bytes(model_a) == param_bytes(model_b)


class TestRunPipeline:
    def test_naive_classification_configuration(self):
        samples = balanced_samples()
        config = tiny_config(StagePlan(STAGE_FRACTURE, "cross_entropy", epochs=2))
        folds = make_folds([s.grade for s in samples], 1, 0.3, seed=4)
        model, metrics, records = run_pipeline(config, samples, folds[0])
        assert model.head == HEAD_CLASSIFIER
        assert len(records) == 1
        assert records[0].stage == STAGE_FRACTURE
        assert metrics.tp + metrics.fp + metrics.tn + metrics.fn == len(folds[0].test_ids)

    def test_full_three_stage_pipeline(self):
        samples = balanced_samples()
        config = tiny_config(
            StagePlan(STAGE_LABEL, "contrastive", epochs=1),
            StagePlan(STAGE_REPRESENTATION, "grading", epochs=1),
            StagePlan(STAGE_FRACTURE, "cross_entropy", epochs=1),
        )
        folds = make_folds([s.grade for s in samples], 1, 0.3, seed=4)
        model, metrics, records = run_pipeline(config, samples, folds[0])
        assert [r.stage for r in records] == [STAGE_LABEL, STAGE_REPRESENTATION, STAGE_FRACTURE]
        assert model.head == HEAD_CLASSIFIER

    def test_probe_scoring_when_no_fracture_stage(self):
        samples = balanced_samples()
        config = tiny_config(StagePlan(STAGE_REPRESENTATION, "grading", epochs=1))
        config = PipelineConfig.from_dict({**config.to_dict(), "probe_steps": 500})
        folds = make_folds([s.grade for s in samples], 1, 0.3, seed=4)
        model, metrics, _ = run_pipeline(config, samples, folds[0])
        assert model.head == HEAD_EMBEDDING
        assert metrics.tp + metrics.fp + metrics.tn + metrics.fn == len(folds[0].test_ids)

    def test_disabled_stage_skipped(self):
        samples = balanced_samples()
        config = tiny_config(
            StagePlan(STAGE_REPRESENTATION, "grading", epochs=1, enabled=False),
            StagePlan(STAGE_FRACTURE, "cross_entropy", epochs=1),
        )
        folds = make_folds([s.grade for s in samples], 1, 0.3, seed=4)
        _, _, records = run_pipeline(config, samples, folds[0])
        assert [r.stage for r in records] == [STAGE_FRACTURE]

    def test_determinism_of_metrics(self):
        samples = balanced_samples()
        config = tiny_config(
            StagePlan(STAGE_REPRESENTATION, "triplet", epochs=1),
            StagePlan(STAGE_FRACTURE, "cross_entropy", epochs=1),
        )
        folds = make_folds([s.grade for s in samples], 1, 0.3, seed=4)
        import json

        _, m1, _ = run_pipeline(config, samples, folds[0])
        _, m2, _ = run_pipeline(config, samples, folds[0])
        assert json.dumps(m1.to_dict(), sort_keys=True) == json.dumps(m2.to_dict(), sort_keys=True)

    def test_fold_must_cover_dataset(self):
        samples = balanced_samples()
        config = tiny_config(StagePlan(STAGE_FRACTURE, "cross_entropy", epochs=1))
        folds = make_folds([s.grade for s in samples[:-2]], 1, 0.3, seed=4)
        with pytest.raises(ValueError):
            run_pipeline(config, samples, folds[0])
