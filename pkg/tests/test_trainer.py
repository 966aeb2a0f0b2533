import json
import math

import numpy as np
import pytest

from pauselm.errors import ConfigError, DataValidationError, NumericError
from pauselm.model import (
    Batch,
    LossWeights,
    ModelConfig,
    init_params,
    load_checkpoint,
    save_checkpoint,
    stack_batch,
)
from pauselm.synth import GroupTimingSpec, SynthSpec, generate
from pauselm.tokenizer import (
    CLS_ID,
    MASK_ID,
    NULL_BIN,
    PAD_ID,
    SEP_ID,
    build_vocab,
    encode_corpus,
)
from pauselm.trainer import (
    AdamState,
    adam_step,
    apply_masking_plan,
    finetune,
    finetune_defaults,
    make_masking_plan,
    pretrain,
    pretrain_defaults,
)

from conftest import small_synth_spec


def uniform_batch(n_seqs, n_words, label=None):
    """Batch of identical fully-real sequences: n_words eligible positions each."""
    T = n_words + 2
    seqs = []
    from pauselm.tokenizer import EncodedSequence

    for i in range(n_seqs):
        ids = np.full(T, 5, dtype=np.int64)
        ids[0] = CLS_ID
        ids[-1] = SEP_ID
        bins = np.full(T, 10, dtype=np.int64)
        bins[0] = bins[-1] = NULL_BIN
        seqs.append(
            EncodedSequence(
                transcript_id=f"s{i}",
                word_ids=ids,
                dur_bins=bins.copy(),
                pause_bins=bins.copy(),
                attention_mask=np.ones(T, dtype=np.int64),
                label=label,
            )
        )
    return stack_batch(seqs)


class TestMaskingPlan:
    def test_rate_zero_empty(self):
        batch = uniform_batch(4, 10)
        plan = make_masking_plan(batch, 0.0, 0.0, np.random.default_rng(0), 30)
        assert plan.is_empty

    def test_rate_one_masks_every_eligible_position(self):
        batch = uniform_batch(4, 10)
        plan = make_masking_plan(batch, 1.0, 1.0, np.random.default_rng(0), 30)
        assert len(plan.word_masks) == 40
        assert len(plan.pause_masks) == 40

    def test_never_masks_special_positions(self):
        batch = uniform_batch(3, 6)
        plan = make_masking_plan(batch, 1.0, 1.0, np.random.default_rng(1), 30)
        T = batch.seq_len
        for m in plan.word_masks + plan.pause_masks:
            assert 1 <= m.position <= T - 2

    def test_binomial_statistics(self):
        # 10 000 eligible positions at rate 0.15: 3 sigma around 1500
        batch = uniform_batch(200, 50)
        plan = make_masking_plan(batch, 0.15, 0.15, np.random.default_rng(123), 30)
        sigma = math.sqrt(10_000 * 0.15 * 0.85)
        assert abs(len(plan.word_masks) - 1500) <= 3 * sigma
        assert abs(len(plan.pause_masks) - 1500) <= 3 * sigma

    def test_action_split_roughly_80_10_10(self):
        batch = uniform_batch(200, 50)
        plan = make_masking_plan(batch, 1.0, 0.0, np.random.default_rng(7), 30)
        n = len(plan.word_masks)
        frac = {a: sum(m.action == a for m in plan.word_masks) / n for a in ("mask", "random", "keep")}
        assert frac["mask"] == pytest.approx(0.8, abs=0.02)
        assert frac["random"] == pytest.approx(0.1, abs=0.02)
        assert frac["keep"] == pytest.approx(0.1, abs=0.02)

    def test_deterministic_given_seed(self):
        batch = uniform_batch(5, 8)
        p1 = make_masking_plan(batch, 0.3, 0.3, np.random.default_rng(9), 30)
        p2 = make_masking_plan(batch, 0.3, 0.3, np.random.default_rng(9), 30)
        assert p1 == p2

    def test_originals_recorded(self):
        batch = uniform_batch(1, 4)
        plan = make_masking_plan(batch, 1.0, 1.0, np.random.default_rng(2), 30)
        for m in plan.word_masks:
            assert m.original_id == 5
        for m in plan.pause_masks:
            assert m.original_pause_bin == 10

    def test_bad_rate_rejected(self):
        batch = uniform_batch(1, 4)
        with pytest.raises(ValueError):
            make_masking_plan(batch, 1.5, 0.0, np.random.default_rng(0), 30)


class TestApplyMasking:
    def test_actions_and_null_bins(self):
        from pauselm.trainer import MaskingPlan, PauseMask, WordMask

        batch = uniform_batch(1, 4)
        plan = MaskingPlan(
            word_masks=(
                WordMask(0, 1, 5, "mask", 9),
                WordMask(0, 2, 5, "random", 9),
                WordMask(0, 3, 5, "keep", 9),
            ),
            pause_masks=(PauseMask(0, 2, 10),),
        )
        masked = apply_masking_plan(batch, plan)
        assert masked.word_ids[0, 1] == MASK_ID
        assert masked.word_ids[0, 2] == 9
        assert masked.word_ids[0, 3] == 5
        assert masked.dur_bins[0, 2] == NULL_BIN
        assert masked.pause_bins[0, 2] == NULL_BIN
        # untouched positions and the input batch itself are unchanged
        assert batch.word_ids[0, 1] == 5
        assert batch.pause_bins[0, 2] == 10
        assert masked.pause_bins[0, 1] == 10


class TestAdam:
    def test_zero_gradients_noop(self):
        params = {"w": np.array([1.0, -2.0])}
        grads = {"w": np.zeros(2)}
        state = AdamState.zeros(params)
        adam_step(params, grads, state, lr=0.1)
        np.testing.assert_array_equal(params["w"], [1.0, -2.0])
        assert np.all(state.m["w"] == 0.0)
        assert np.all(state.v["w"] == 0.0)

    def test_first_step_closed_form(self):
        params = {"w": np.array([0.0])}
        grads = {"w": np.array([1.0])}
        state = AdamState.zeros(params)
        adam_step(params, grads, state, lr=0.1, betas=(0.9, 0.999), eps=1e-8)
        # bias-corrected m_hat = v_hat = 1 -> update = -lr / (1 + eps)
        expected = -0.1 / (1.0 + 1e-8)
        assert params["w"][0] == pytest.approx(expected, rel=1e-12)

    def test_global_norm_clipping(self):
        # gradient of norm 10 with clip 1.0 is scaled by 0.1
        params = {"a": np.array([0.0]), "b": np.array([0.0, 0.0])}
        grads = {"a": np.array([6.0]), "b": np.array([8.0, 0.0])}  # norm 10
        state = AdamState.zeros(params)
        adam_step(params, grads, state, lr=1.0, clip=1.0)
        np.testing.assert_allclose(state.m["a"], 0.1 * 0.6, rtol=1e-12)
        np.testing.assert_allclose(state.m["b"], [0.1 * 0.8, 0.0], rtol=1e-12)

    def test_no_clip_below_threshold(self):
        params = {"a": np.array([0.0])}
        grads = {"a": np.array([0.5])}
        state = AdamState.zeros(params)
        adam_step(params, grads, state, lr=1.0, clip=1.0)
        np.testing.assert_allclose(state.m["a"], 0.1 * 0.5, rtol=1e-12)

    def test_non_finite_gradients_rejected(self):
        params = {"a": np.array([0.0])}
        grads = {"a": np.array([np.nan])}
        with pytest.raises(NumericError):
            adam_step(params, grads, AdamState.zeros(params), lr=0.1)


def desk_setup(n_per_group=10, seed=11):
    transcripts = generate(small_synth_spec(n_per_group=n_per_group, seed=seed))
    vocab = build_vocab(transcripts, min_count=1)
    model_cfg = ModelConfig(
        vocab_size=len(vocab),
        d_model=16,
        n_layers=1,
        n_heads=2,
        d_ff=32,
        max_seq_len=16,
        dropout_rate=0.0,
    )
    dataset = encode_corpus(transcripts, vocab, model_cfg.max_seq_len)
    return transcripts, vocab, model_cfg, dataset


def read_log(run_dir):
    return [json.loads(line) for line in (run_dir / "train_log.jsonl").read_text().splitlines()]


class TestPretrain:
    def test_loss_decreases(self, tmp_path):
        _, _, model_cfg, dataset = desk_setup(n_per_group=20)
        cfg = pretrain_defaults(learning_rate=1e-3, epochs=5, batch_size=8, seed=1)
        pretrain(dataset, cfg, model_cfg, tmp_path / "run")
        log = read_log(tmp_path / "run")
        assert len(log) == 5
        assert log[-1]["loss_mlm"] < log[0]["loss_mlm"]
        assert log[-1]["loss_pause"] < log[0]["loss_pause"]

    def test_same_seed_identical_checkpoint_bytes(self, tmp_path):
        _, _, model_cfg, dataset = desk_setup()
        cfg = pretrain_defaults(learning_rate=1e-3, epochs=2, batch_size=4, seed=3)
        p1, _ = pretrain(dataset, cfg, model_cfg, tmp_path / "r1")
        p2, _ = pretrain(dataset, cfg, model_cfg, tmp_path / "r2")
        assert p1.read_bytes() == p2.read_bytes()

    def test_loss_source_isolation_run(self, tmp_path):
        _, _, model_cfg, dataset = desk_setup(n_per_group=15)
        cfg = pretrain_defaults(
            learning_rate=1e-3, epochs=3, batch_size=8, seed=2,
            word_mask_rate=0.0, pause_mask_rate=0.15,
        )
        pretrain(dataset, cfg, model_cfg, tmp_path / "run")
        log = read_log(tmp_path / "run")
        assert all(line["loss_mlm"] == 0.0 for line in log)
        assert log[-1]["loss_pause"] < log[0]["loss_pause"]

    def test_resume_matches_uninterrupted(self, tmp_path):
        _, _, model_cfg, dataset = desk_setup()
        cfg = pretrain_defaults(
            learning_rate=1e-3, epochs=4, batch_size=4, seed=5, checkpoint_every=2
        )
        full_path, _ = pretrain(dataset, cfg, model_cfg, tmp_path / "full")
        # interrupt after epoch 1 (0-indexed), i.e. the checkpoint-every-2 snapshot
        resumed_path, _ = pretrain(
            dataset,
            cfg,
            model_cfg,
            tmp_path / "resumed",
            resume_from=tmp_path / "full" / "checkpoint-epoch001.bin",
        )
        assert resumed_path.read_bytes() == full_path.read_bytes()

    def test_empty_corpus_rejected(self, tmp_path):
        _, _, model_cfg, _ = desk_setup()
        with pytest.raises(DataValidationError):
            pretrain([], pretrain_defaults(), model_cfg, tmp_path / "run")

    def test_wrong_stage_rejected(self, tmp_path):
        _, _, model_cfg, dataset = desk_setup()
        with pytest.raises(ConfigError):
            pretrain(dataset, finetune_defaults(), model_cfg, tmp_path / "run")


class TestFinetune:
    def test_zero_iterations_identity(self, tmp_path):
        _, _, model_cfg, dataset = desk_setup()
        params = init_params(model_cfg, seed=8)
        init_path = tmp_path / "init.bin"
        save_checkpoint(init_path, model_cfg, params)
        cfg = finetune_defaults(iterations=0, seed=1)
        out_path, _ = finetune(dataset, init_path, cfg, tmp_path / "run")
        assert out_path.read_bytes() == init_path.read_bytes()

    def test_missing_labels_rejected_before_updates(self, tmp_path):
        _, vocab, model_cfg, _ = desk_setup()
        transcripts = generate(small_synth_spec(n_per_group=2))
        unlabeled = [t.__class__(id=t.id, words=t.words, label=None) for t in transcripts]
        dataset = encode_corpus(unlabeled, vocab, model_cfg.max_seq_len)
        params = init_params(model_cfg, seed=8)
        with pytest.raises(DataValidationError, match="label"):
            finetune(dataset, (model_cfg, params), finetune_defaults(), tmp_path / "run")
        assert not (tmp_path / "run" / "checkpoint.bin").exists()

    def test_linearly_separable_toy_reaches_full_train_accuracy(self, tmp_path):
        # pause statistics fully determine the label
        from pauselm.evaluator import eval_classification

        spec = small_synth_spec(
            n_per_group=12,
            words_min=8,
            words_max=12,
            control=GroupTimingSpec(math.log(0.25), 0.3, math.log(0.08), 0.3),
            ad=GroupTimingSpec(math.log(0.25), 0.3, math.log(0.9), 0.3),
            seed=21,
        )
        transcripts = generate(spec)
        vocab = build_vocab(transcripts, min_count=1)
        model_cfg = ModelConfig(
            vocab_size=len(vocab), d_model=16, n_layers=1, n_heads=2, d_ff=32,
            max_seq_len=16, dropout_rate=0.0,
        )
        dataset = encode_corpus(transcripts, vocab, model_cfg.max_seq_len)
        params = init_params(model_cfg, seed=0)
        cfg = finetune_defaults(learning_rate=2e-3, batch_size=8, iterations=150, seed=4)
        _, trained = finetune(dataset, (model_cfg, params), cfg, tmp_path / "run")
        report = eval_classification(transcripts, trained, model_cfg, vocab)
        assert report.accuracy == 1.0

    def test_pretrained_vs_random_init_both_produce_checkpoints(self, tmp_path):
        _, _, model_cfg, dataset = desk_setup()
        pre_cfg = pretrain_defaults(learning_rate=1e-3, epochs=1, batch_size=8, seed=1)
        pre_path, _ = pretrain(dataset, pre_cfg, model_cfg, tmp_path / "pre")
        ft_cfg = finetune_defaults(learning_rate=1e-3, iterations=5, seed=2)
        p1, _ = finetune(dataset, pre_path, ft_cfg, tmp_path / "ft1")
        params = init_params(model_cfg, seed=99)
        p2, _ = finetune(dataset, (model_cfg, params), ft_cfg, tmp_path / "ft2")
        for p in (p1, p2):
            cfg_loaded, loaded = load_checkpoint(p)
            assert cfg_loaded == model_cfg
            assert loaded.keys() == params.keys()

    def test_training_log_schema(self, tmp_path):
        _, _, model_cfg, dataset = desk_setup()
        cfg = finetune_defaults(learning_rate=1e-3, iterations=3, seed=2)
        finetune(dataset, (model_cfg, init_params(model_cfg, seed=1)), cfg, tmp_path / "run")
        log = read_log(tmp_path / "run")
        assert len(log) == 3
        for line in log:
            assert set(line) == {
                "stage", "epoch", "iteration", "loss_total",
                "loss_mlm", "loss_pause", "loss_cls", "wall_ms",
            }
            assert line["stage"] == "finetune"
