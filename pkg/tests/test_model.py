import itertools

import numpy as np
import pytest
import torch

from stacst.model import (
    Batch,
    ModelConfig,
    TrainConfig,
    Trainer,
    TrainingExample,
    batch_greedy_decode,
    build_model,
    collate,
    count_parameters,
    greedy_decode,
    joint_loss,
    load_checkpoint,
    lr_schedule,
    mixed_batch_sampler,
    save_checkpoint,
    subsampled_lengths,
)
from stacst.serializer import TargetSequence, attach_language_tokens, build_vocabulary, strip_task_tokens


@pytest.fixture(scope="module")
def vocab():
    seqs = [
        attach_language_tokens(TargetSequence(("ab", "cd", "[TURN]", "ef")), "es", "en"),
        attach_language_tokens(TargetSequence(("ab", "[TURN]", "[XT]", "gh")), "es", "es"),
    ]
    return build_vocabulary(seqs, merges=0)


@pytest.fixture(scope="module")
def tiny_cfg(vocab):
    return ModelConfig.preset("tiny", vocab_size=len(vocab), feature_dim=16, dropout=0.0)


def make_examples(vocab, n=6, seed=0, feature_dim=16):
    rng = np.random.default_rng(seed)
    sequences = [
        attach_language_tokens(TargetSequence(("ab", "cd")), "es", "en"),
        attach_language_tokens(TargetSequence(("ab", "[TURN]", "gh")), "es", "es"),
        attach_language_tokens(TargetSequence(("ef", "[TURN]", "[XT]", "cd")), "es", "es"),
    ]
    out = []
    for i in range(n):
        seq = sequences[i % len(sequences)]
        out.append(
            TrainingExample(
                segment_id=f"seg{i}",
                features=rng.normal(size=(int(rng.integers(32, 60)), feature_dim)).astype(np.float32),
                ctc_ids=tuple(vocab.encode(seq)[2:]),
                decoder_ids=tuple([vocab.bos_id] + vocab.encode(seq) + [vocab.eos_id]),
                task=seq.task,
            )
        )
    return out


@pytest.fixture(scope="module")
def batch(vocab):
    return collate(make_examples(vocab, 4), vocab.pad_id)


# --------------------------------------------------------------------------
# Shapes and parameter counts
# --------------------------------------------------------------------------


def test_subsample_stride_arithmetic(tiny_cfg, vocab, batch):
    model = build_model(tiny_cfg, seed=0)
    feats = torch.zeros(1, 40, 16)
    _, enc_lengths, ctc_logits = model.encode(feats, torch.tensor([40]))
    assert ctc_logits.shape[1] == 10
    assert int(enc_lengths[0]) == 10
    assert subsampled_lengths(torch.tensor([40, 37, 4])).tolist() == [10, 10, 1]


def test_forward_deterministic_without_dropout(tiny_cfg, vocab, batch):
    model = build_model(tiny_cfg, seed=0)
    model.eval()
    with torch.no_grad():
        a = model(batch)
        b = model(batch)
    for x, y in zip(a, b):
        assert torch.equal(x, y)


def test_tiny_parameter_count_matches_formula(tiny_cfg):
    model = build_model(tiny_cfg, seed=0)
    assert sum(p.numel() for p in model.parameters()) == count_parameters(tiny_cfg)


def test_small_parameter_count_matches_formula():
    cfg = ModelConfig.preset("s", vocab_size=500, feature_dim=80)
    model = build_model(cfg, seed=0)
    assert sum(p.numel() for p in model.parameters()) == count_parameters(cfg)


@pytest.mark.parametrize(
    "name,target",
    [("s", 21_000_000), ("m", 86_000_000), ("l", 298_000_000)],
)
def test_preset_counts_within_ten_percent(name, target):
    cfg = ModelConfig.preset(name, vocab_size=5000)
    count = count_parameters(cfg)
    assert abs(count - target) / target <= 0.10


def test_dimension_head_divisibility_enforced():
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, d_model=30, n_heads=4)


# --------------------------------------------------------------------------
# Joint loss
# --------------------------------------------------------------------------


def test_joint_loss_lambda_edges(tiny_cfg, vocab, batch):
    model = build_model(tiny_cfg, seed=0)
    model.eval()
    with torch.no_grad():
        outputs = model(batch)
        l0, m0 = joint_loss(*outputs, batch, 0.0)
        l1, m1 = joint_loss(*outputs, batch, 1.0)
        assert float(l0) == pytest.approx(m0["nll"])
        assert float(l1) == pytest.approx(m1["ctc"])


def test_joint_loss_affine_in_lambda(tiny_cfg, vocab, batch):
    model = build_model(tiny_cfg, seed=0)
    model.eval()
    with torch.no_grad():
        outputs = model(batch)
        l0 = float(joint_loss(*outputs, batch, 0.0)[0])
        l1 = float(joint_loss(*outputs, batch, 1.0)[0])
        l3 = float(joint_loss(*outputs, batch, 0.3)[0])
        assert l3 == pytest.approx(0.7 * l0 + 0.3 * l1, rel=1e-12)


def test_joint_loss_arithmetic():
    # lambda=0.3, ctc=2, nll=1 -> 1.3 by the loss combination formula.
    assert 0.3 * 2.0 + 0.7 * 1.0 == pytest.approx(1.3)


def test_joint_loss_counts_infeasible_samples(tiny_cfg, vocab):
    # 8 frames subsample to 2 encoder frames; a 5-token CTC target cannot fit.
    ex = make_examples(vocab, 1)[0]
    short = TrainingExample(
        segment_id="short",
        features=ex.features[:8],
        ctc_ids=tuple(vocab.encode(TargetSequence(("ab", "cd", "ef")))),
        decoder_ids=ex.decoder_ids,
        task=ex.task,
    )
    batch = collate([short], vocab.pad_id)
    model = build_model(tiny_cfg, seed=0)
    with torch.no_grad():
        loss, metrics = joint_loss(*model(batch), batch, 0.3)
    assert metrics["ctc_infeasible"] == 1
    assert metrics["ctc"] == 0.0


def test_batch_contract_validation(tiny_cfg, vocab):
    examples = make_examples(vocab, 2)
    good = collate(examples, vocab.pad_id)
    good.validate(vocab)
    bad = collate(examples, vocab.pad_id)
    bad.decoder_ids[0, 1] = vocab.eos_id  # not a language token
    with pytest.raises(ValueError, match="SRC_LANG"):
        bad.validate(vocab)
    bad2 = collate(
        [
            TrainingExample(
                segment_id="x",
                features=examples[0].features,
                ctc_ids=(vocab.language_id("es"),),
                decoder_ids=examples[0].decoder_ids,
                task="asr",
            )
        ],
        vocab.pad_id,
    )
    with pytest.raises(ValueError, match="ctc"):
        bad2.validate(vocab)


# --------------------------------------------------------------------------
# Schedule and training
# --------------------------------------------------------------------------


def test_lr_schedule_shape():
    cfg = TrainConfig(total_steps=1000, peak_lr=2.0)
    assert lr_schedule(0, cfg) == 0.0
    assert lr_schedule(50, cfg) == pytest.approx(1.0)  # halfway up the ramp
    assert lr_schedule(100, cfg) == pytest.approx(2.0)
    assert lr_schedule(500, cfg) == pytest.approx(2.0)
    assert lr_schedule(950, cfg) == pytest.approx(1.0)
    assert lr_schedule(1000, cfg) == 0.0
    with pytest.raises(ValueError):
        lr_schedule(1001, cfg)


def test_zero_learning_rate_leaves_parameters_unchanged(tiny_cfg, vocab, batch):
    model = build_model(tiny_cfg, seed=0)
    before = [p.detach().clone() for p in model.parameters()]
    trainer = Trainer(model, TrainConfig(total_steps=10, peak_lr=0.0, weight_decay=0.0, seed=0))
    trainer.train_step(batch)
    for prev, now in zip(before, model.parameters()):
        assert torch.equal(prev, now)


def test_gradient_clipping_bounds_applied_norm():
    # clip_grad_norm_ is what train_step applies; with synthetic grads of
    # norm 10 and clip 5 the rescaled norm must be 5 within 1e-6.
    params = [torch.nn.Parameter(torch.zeros(4)), torch.nn.Parameter(torch.zeros(3))]
    params[0].grad = torch.ones(4) * (10.0 / np.sqrt(7.0))
    params[1].grad = torch.ones(3) * (10.0 / np.sqrt(7.0))
    total = torch.sqrt(sum((p.grad**2).sum() for p in params))
    assert float(total) == pytest.approx(10.0)
    torch.nn.utils.clip_grad_norm_(params, 5.0)
    clipped = torch.sqrt(sum((p.grad**2).sum() for p in params))
    assert float(clipped) == pytest.approx(5.0, abs=1e-6)


def test_training_deterministic_given_seed(tiny_cfg, vocab):
    def run():
        model = build_model(tiny_cfg, seed=11)
        trainer = Trainer(model, TrainConfig(total_steps=10, peak_lr=1e-3, seed=5))
        sampler = mixed_batch_sampler(make_examples(vocab, 6), [], 2, seed=5)
        losses = [trainer.train_step(collate(b, vocab.pad_id))["loss"] for b in itertools.islice(sampler, 10)]
        return losses

    assert run() == run()


def test_skipped_step_on_nonfinite_loss(tiny_cfg, vocab, batch):
    model = build_model(tiny_cfg, seed=0)
    with torch.no_grad():
        model.out_head.bias.fill_(float("nan"))
    trainer = Trainer(model, TrainConfig(total_steps=4, peak_lr=1e-3, seed=0))
    metrics = trainer.train_step(batch)
    assert metrics["skipped"] is True
    assert trainer.skipped_nonfinite == 1


# --------------------------------------------------------------------------
# Mixed batch sampler
# --------------------------------------------------------------------------


def test_sampler_all_asr_when_st_empty(vocab):
    asr = [ex for ex in make_examples(vocab, 9) if ex.task == "asr"]
    batches = list(itertools.islice(mixed_batch_sampler(asr, [], 2, seed=0), 10))
    assert all(ex.task == "asr" for b in batches for ex in b)
    assert all(len(b) == 2 for b in batches)


def test_sampler_fraction_tracks_dataset_sizes(vocab):
    examples = make_examples(vocab, 6)
    asr = [ex for ex in examples if ex.task == "asr"][:1] * 900
    st = [ex for ex in examples if ex.task == "st"][:1] * 100
    stream = mixed_batch_sampler(asr, st, 1, seed=3)
    draws = [b[0].task for b in itertools.islice(stream, 10_000)]
    frac = sum(1 for task in draws if task == "st") / len(draws)
    assert frac == pytest.approx(0.1, abs=0.02)


def test_sampler_same_seed_same_order(vocab):
    asr = make_examples(vocab, 7)
    a = [ex.segment_id for b in itertools.islice(mixed_batch_sampler(asr, [], 3, seed=9), 5) for ex in b]
    b = [ex.segment_id for b_ in itertools.islice(mixed_batch_sampler(asr, [], 3, seed=9), 5) for ex in b_]
    assert a == b


def test_sampler_both_empty():
    with pytest.raises(ValueError):
        next(mixed_batch_sampler([], [], 2, seed=0))


def test_sampler_task_pure_batches(vocab):
    examples = make_examples(vocab, 8)
    asr = [ex for ex in examples if ex.task == "asr"]
    st = [ex for ex in examples if ex.task == "st"]
    for b in itertools.islice(mixed_batch_sampler(asr, st, 3, seed=1, task_pure=True), 20):
        assert len(set(ex.task for ex in b)) == 1


# --------------------------------------------------------------------------
# Decoding and checkpoints
# --------------------------------------------------------------------------


def test_greedy_decode_untrained_no_crash(tiny_cfg, vocab, rng):
    model = build_model(tiny_cfg, seed=2)
    feats = rng.normal(size=(50, 16)).astype(np.float32)
    seq, truncated = greedy_decode(model, vocab, feats, "es", "en", max_len=8)
    assert len(seq.tokens) <= 2 + 8
    assert seq.src_lang == "es" and seq.tgt_lang == "en"


def test_greedy_decode_max_len_zero_gives_empty_text(tiny_cfg, vocab, rng):
    model = build_model(tiny_cfg, seed=2)
    feats = rng.normal(size=(50, 16)).astype(np.float32)
    seq, truncated = greedy_decode(model, vocab, feats, "es", "es", max_len=0)
    assert strip_task_tokens(seq) == ""
    assert truncated


def test_priming_selects_task(tiny_cfg, vocab, rng):
    model = build_model(tiny_cfg, seed=2)
    feats = rng.normal(size=(50, 16)).astype(np.float32)
    asr, _ = greedy_decode(model, vocab, feats, "es", "es", max_len=4)
    st, _ = greedy_decode(model, vocab, feats, "es", "en", max_len=4)
    assert asr.task == "asr" and st.task == "st"


def test_checkpoint_round_trip_is_byte_stable(tiny_cfg, tmp_path):
    model = build_model(tiny_cfg, seed=4)
    p1, p2 = tmp_path / "a.stck", tmp_path / "b.stck"
    save_checkpoint(str(p1), model)
    reloaded = load_checkpoint(str(p1))
    save_checkpoint(str(p2), reloaded)
    assert p1.read_bytes() == p2.read_bytes()
    for (n1, a), (n2, b) in zip(model.named_parameters(), reloaded.named_parameters()):
        assert n1 == n2 and torch.equal(a, b)


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.stck"
    path.write_bytes(b"XXXX" + b"\x00" * 32)
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(str(path))


# --------------------------------------------------------------------------
# End-to-end gradient check
# --------------------------------------------------------------------------


def test_end_to_end_gradient_check_double_precision(vocab):
    cfg = ModelConfig.preset("tiny", vocab_size=len(vocab), feature_dim=8, dropout=0.0)
    torch.manual_seed(0)
    model = build_model(cfg, seed=0).double()
    examples = make_examples(vocab, 2, feature_dim=8)
    batch = collate(examples, vocab.pad_id)
    batch.features = batch.features.double()

    def loss_value():
        ctc_logits, enc_lengths, dec_logits = model(batch)
        loss, _ = joint_loss(ctc_logits, enc_lengths, dec_logits, batch, 0.3)
        return loss

    def loss_scalar():
        with torch.no_grad():
            return float(loss_value())

    model.zero_grad()
    loss_value().backward()
    named = dict(model.named_parameters())
    rng = np.random.default_rng(123)
    flat = [(name, i) for name, p in named.items() for i in range(p.numel())]
    picks = [flat[int(k)] for k in rng.choice(len(flat), size=32, replace=False)]
    eps = 1e-5
    for name, index in picks:
        param = named[name]
        analytic = float(param.grad.reshape(-1)[index])
        with torch.no_grad():
            base = float(param.reshape(-1)[index])
            param.reshape(-1)[index] = base + eps
        hi = loss_scalar()
        with torch.no_grad():
            param.reshape(-1)[index] = base - eps
        lo = loss_scalar()
        with torch.no_grad():
            param.reshape(-1)[index] = base
        fd = (hi - lo) / (2 * eps)
        # rtol for real gradients, atol to absorb FD roundoff near zero.
        assert abs(fd - analytic) <= 1e-9 + 1e-5 * max(abs(fd), abs(analytic)), (
            name,
            index,
            fd,
            analytic,
        )
