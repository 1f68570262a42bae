import numpy as np
import pytest

from wav2text import corpus, dsp, model, pretrain, rawenc
from wav2text import diffcore as dc
from wav2text.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from wav2text.config import CorpusConfig, PretrainConfig, RawEncoderConfig, RunConfig, Seq2SeqConfig

SMALL = RunConfig(
    rawenc=RawEncoderConfig(conv_channels=(16,) * 4, nin_channels=(16,) * 3, head_hidden=16),
    seq2seq=Seq2SeqConfig(lstm_units=4, embed_dim=4, decoder_units=6, attention_hidden=4),
)


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    manifests = corpus.build_corpus(root, CorpusConfig(count=3, min_len=4, max_len=5), seed=3)
    examples, stats = pretrain.prepare_examples(manifests["train"], SMALL)
    return manifests["train"], examples, stats


def random_example(rng, n=6):
    return pretrain.PretrainExample("r", rng.uniform(-1, 1, size=(n, 400)), {})


def matching_targets(ex, params, target):
    with dc.no_grad():
        preds = rawenc.predict_features(ex.frames, SMALL.rawenc, params, target)
    preds = preds if target == "multi" else (preds,)
    return {k: z.data.copy() for k, z in zip(pretrain.KINDS[target], preds)}


@pytest.mark.parametrize("target", ["fbank", "mfcc", "multi"])
def test_targets_equal_predictions_give_zero_loss_and_no_update(target):
    params = pretrain.init_pretrain_params(SMALL, target, seed=1)
    ex = random_example(np.random.default_rng(0))
    ex.targets = matching_targets(ex, params, target)
    assert pretrain.utterance_loss(ex.frames, ex.targets, SMALL, params, target).item() == 0.0
    before = {n: t.data.copy() for n, t in params.items()}
    task = PretrainConfig(target=target, steps=1)
    result = pretrain.pretrain([ex], SMALL, task, params, seed=0)
    assert result.step_losses == [0.0]
    for name, arr in before.items():
        np.testing.assert_array_equal(result.params[name].data, arr)


def test_loss_matches_definition():
    params = pretrain.init_pretrain_params(SMALL, "fbank", seed=2)
    rng = np.random.default_rng(1)
    ex = random_example(rng, n=5)
    with dc.no_grad():
        z = rawenc.predict_features(ex.frames, SMALL.rawenc, params, "fbank").data
    f = rng.normal(size=z.shape)
    expected = sum(((f[s] - z[s]) ** 2).sum() for s in range(5)) / 5
    got = pretrain.utterance_loss(ex.frames, {"fbank": f}, SMALL, params, "fbank").item()
    assert got == pytest.approx(expected, rel=1e-13)


def test_identical_utterances_identical_losses(toy):
    _, examples, _ = toy
    twin = pretrain.PretrainExample("twin", examples[0].frames.copy(),
                                    {k: v.copy() for k, v in examples[0].targets.items()})
    params = pretrain.init_pretrain_params(SMALL, "multi", seed=0)
    a = pretrain.utterance_loss(examples[0].frames, examples[0].targets, SMALL, params, "multi").item()
    b = pretrain.utterance_loss(twin.frames, twin.targets, SMALL, params, "multi").item()
    assert a == b


def test_multi_loss_decomposes_and_trunk_grads_add(toy):
    _, examples, _ = toy
    ex = examples[0]
    params = pretrain.init_pretrain_params(SMALL, "multi", seed=4)
    trunk = rawenc.trunk_paths(SMALL.rawenc)

    def grads(target):
        loss = pretrain.utterance_loss(ex.frames, ex.targets, SMALL, params, target)
        loss.backward()
        out = {n: params[n].grad.copy() for n in trunk}
        params.zero_grad()
        return loss.item(), out

    multi, g_multi = grads("multi")
    fb, g_fb = grads("fbank")
    mf, g_mf = grads("mfcc")
    assert abs(multi - (fb + mf)) <= 1e-12 * max(1.0, abs(multi))
    for n in trunk:
        np.testing.assert_allclose(g_multi[n], g_fb[n] + g_mf[n], rtol=0, atol=1e-10)


def test_target_errors(toy):
    _, examples, _ = toy
    ex = examples[0]
    params = pretrain.init_pretrain_params(SMALL, "multi", seed=0)
    with pytest.raises(KeyError, match="mfcc"):
        pretrain.utterance_loss(ex.frames, {"fbank": ex.targets["fbank"]}, SMALL, params, "multi")
    with pytest.raises(ValueError, match="rows"):
        pretrain.utterance_loss(ex.frames[:-1], ex.targets, SMALL, params, "fbank")
    with pytest.raises(ValueError, match="fbank or mfcc"):
        pretrain.pretrain_single(examples, SMALL, PretrainConfig(target="multi"))
    with pytest.raises(ValueError, match="multi"):
        pretrain.pretrain_multi(examples, SMALL, PretrainConfig(target="fbank"))
    with pytest.raises(ValueError, match="empty"):
        pretrain.pretrain([], SMALL, PretrainConfig(target="fbank", steps=1))


def test_corpus_loss_order_invariant(toy):
    _, examples, _ = toy
    params = pretrain.init_pretrain_params(SMALL, "fbank", seed=5)
    a = pretrain.corpus_loss(examples, SMALL, params, "fbank")
    b = pretrain.corpus_loss(examples[::-1], SMALL, params, "fbank")
    assert a == pytest.approx(b, rel=1e-14)


def test_trace_is_reproducible_and_counts_steps(toy, tmp_path):
    _, examples, _ = toy
    task = PretrainConfig(target="mfcc", epochs=2)
    runs = [pretrain.pretrain(examples, SMALL, task, seed=7) for _ in range(2)]
    assert runs[0].step_losses == runs[1].step_losses
    assert runs[0].steps == 2 * len(examples) and len(runs[0].trace) == 2
    for k, path in enumerate((tmp_path / "a.csv", tmp_path / "b.csv")):
        pretrain.write_loss_trace(path, runs[k].trace)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "epoch,mean_loss" and len(lines) == 3


def test_one_utterance_overfits(toy):
    _, examples, stats = toy
    one = examples[:1]
    params = pretrain.init_pretrain_params(SMALL, "fbank", seed=0)
    start = pretrain.corpus_loss(one, SMALL, params, "fbank")
    result = pretrain.pretrain(one, SMALL, PretrainConfig(target="fbank", steps=200), params, seed=0)
    assert pretrain.corpus_loss(one, SMALL, result.params, "fbank") < 0.2 * start


@pytest.fixture(scope="module")
def trained(toy):
    utts, examples, stats = toy
    result = pretrain.pretrain(examples[:1], SMALL, PretrainConfig(target="fbank", steps=200), seed=0)
    result.standardizers = stats
    return utts, result


def test_comparison_plot(trained, tmp_path):
    utts, result = trained
    frames = corpus.load_frames(utts.utterances[0], SMALL.dsp)
    summary = pretrain.emit_comparison_plot(frames, result.params, SMALL, result.standardizers["fbank"],
                                            tmp_path / "cmp")
    assert summary["original"].shape == summary["predicted"].shape == (len(frames), SMALL.dsp.n_mels)
    assert summary["mean_abs_diff_std"] < 0.5
    for suffix in ("_original.csv", "_predicted.csv", ".png"):
        assert (tmp_path / f"cmp{suffix}").stat().st_size > 0
    np.testing.assert_allclose(dsp.read_features_csv(tmp_path / "cmp_original.csv"), summary["original"])


def test_silent_utterance_original_is_constant_floor(trained):
    _, result = trained
    silent = np.zeros((7, 400))
    original, predicted = pretrain.comparison_matrices(silent, result.params, SMALL, result.standardizers["fbank"])
    assert np.all(original == original.flat[0]) and np.isfinite(original).all()
    assert predicted.shape == original.shape


def test_checkpoint_and_export(trained, tmp_path):
    _, result = trained
    ckpt = pretrain.result_checkpoint(result, SMALL, "fbank")
    save_checkpoint(tmp_path / "pre.ckpt", ckpt)
    loaded = load_checkpoint(tmp_path / "pre.ckpt")
    stats = pretrain.standardizers_from_meta(loaded.meta)
    np.testing.assert_array_equal(stats["fbank"].mean, result.standardizers["fbank"].mean)

    exported = pretrain.export_transferred(loaded, SMALL)
    trunk = rawenc.trunk_paths(SMALL.rawenc)
    assert set(exported.params) == set(trunk)
    assert not any(p.startswith("rawenc.head") for p in exported.params)
    for p in trunk:
        assert exported.params[p].tobytes() == result.params[p].data.tobytes()

    fresh = model.init_model(SMALL, seed=11)
    reference = model.init_model(SMALL, seed=11)
    exported.apply_to(fresh, SMALL)
    for name in fresh:
        expected = exported.params[name] if name in trunk else reference[name].data
        assert fresh[name].data.tobytes() == expected.tobytes()


def test_export_rejects_missing_paths(trained):
    _, result = trained
    ckpt = pretrain.result_checkpoint(result, SMALL, "fbank")
    del ckpt.params["rawenc.nin1.2.bias"]
    with pytest.raises(CheckpointError, match="nin1.2.bias"):
        pretrain.export_transferred(ckpt, SMALL)
