import numpy as np
import pytest

from config import AdamWConfig, DecoderConfig, ModelConfig, RenderConfig, SynthParams
from errors import LifecycleError, PadPolicyError, ParameterError, ShapeError
from lab import autodiff as ad
from lab.autodiff import Graph, Tensor
from lab.losses import recon_mse
from lab.models import QueryDecoder, Student, Teachers
from lab.optim import AdamWState, adamw_step
from lab.render import render
from lab.signal_core import synth_ecg


@pytest.fixture
def student(tiny_model, small_render):
    return Student(tiny_model, small_render)


def test_student_shapes(student, record, small_render, tiny_model):
    image = render(record, small_render)
    z = student.encode_image(image)
    assert z.shape == (tiny_model.d_img,)
    z_rec, z_ctr = student.project(z)
    assert z_rec.shape == z_ctr.shape == (tiny_model.d_sig,)
    assert np.all(np.abs(z_rec.data) <= 1.0)
    assert student.decode_signal(z_rec).shape == (12, tiny_model.signal_length)


def test_encoder_rejects_wrong_resolution(student, record):
    with pytest.raises(ShapeError):
        student.encode_image(render(record, RenderConfig(px_per_mm=3)))


def test_heads_are_independent(student, rng, tiny_model):
    z_rec, z_ctr = student.project(Tensor(rng.normal(size=(3, tiny_model.d_img))))
    assert not np.allclose(z_rec.data, z_ctr.data)
    names = student.parameter_names()
    assert "head.rec.w" in names and "head.ctr.w" in names


def test_query_count_and_padding():
    model = ModelConfig(signal_length=5000, decoder=DecoderConfig(d=8, heads=2, patch=8, layers=1))
    assert model.n_queries == 625
    decoder = QueryDecoder(Graph("d"), model.updated(signal_length=1001, decoder=model.decoder.updated(patch=10)))
    assert decoder.n_queries == 101
    out = decoder(np.zeros((2, model.d_sig)), training=False)
    assert out.shape == (2, 12, 1001)


def test_padding_disabled_raises():
    model = ModelConfig(signal_length=1001, decoder=DecoderConfig(d=8, heads=2, patch=10, pad=False))
    with pytest.raises(PadPolicyError):
        QueryDecoder(Graph("d"), model)


def test_mask_is_seeded_and_sized(tiny_model):
    decoder = QueryDecoder(Graph("d"), tiny_model)
    a, b = decoder.mask_for(5, 0.25), decoder.mask_for(5, 0.25)
    assert np.array_equal(a, b)
    assert int(a.sum()) == int(0.25 * decoder.n_queries)
    assert int(decoder.mask_for(5, 0.0).sum()) == 0


def test_masking_only_changes_training_output(tiny_model, rng):
    decoder = QueryDecoder(Graph("d"), tiny_model)
    z = rng.normal(size=(2, tiny_model.d_sig))
    with ad.no_grad():
        eval_a = decoder(z, mask_seed=1, training=False).data
        eval_b = decoder(z, mask_seed=2, training=False).data
        train_a = decoder(z, mask_seed=1, training=True).data
        train_b = decoder(z, mask_seed=2, training=True).data
    assert np.array_equal(eval_a, eval_b)
    assert not np.array_equal(train_a, train_b)
    assert np.array_equal(decoder(z, mask_seed=1, training=True).data, train_a)


def test_positions_tell_the_patches_apart(tiny_model, rng):
    decoder = QueryDecoder(Graph("d"), tiny_model)
    z = rng.normal(size=(1, tiny_model.d_sig))
    decoder.queries.data[:] = decoder.queries.data[0]
    with ad.no_grad():
        distinct = decoder(z, training=False).data.reshape(12, decoder.n_queries, decoder.patch)
        decoder.positions.data[:] = decoder.positions.data[0]
        shared = decoder(z, training=False).data.reshape(12, decoder.n_queries, decoder.patch)
    # identical tokens decode to identical patches
    np.testing.assert_allclose(shared, np.broadcast_to(shared[:, :1], shared.shape), atol=1e-5)
    assert not np.allclose(distinct[:, 0], distinct[:, 1], atol=1e-5)


def test_decoder_output_follows_position_embeddings(tiny_model, rng):
    decoder = QueryDecoder(Graph("d"), tiny_model)
    z = rng.normal(size=(2, tiny_model.d_sig))
    with ad.no_grad():
        before = decoder(z, training=False).data
        decoder.positions.data += rng.normal(0.0, 0.1, size=decoder.positions.shape)
        after = decoder(z, training=False).data
    assert not np.allclose(before, after)


@pytest.mark.slow
def test_masked_decoder_training_lowers_loss(tiny_model, rng):
    graph = Graph("d")
    decoder = QueryDecoder(graph, tiny_model)
    target = synth_ecg(SynthParams(heart_rate=72, fs=100.0, seed=3)).record.samples[None]
    z = rng.normal(size=(1, tiny_model.d_sig))
    state, history = AdamWState(), []
    for step in range(200):
        loss = recon_mse(decoder(z, mask_seed=step, training=True), target)
        ad.backward(loss)
        adamw_step(graph.items(), {name: p.grad for name, p in graph.items()}, state, 1e-2, AdamWConfig())
        graph.zero_grad()
        history.append(loss.item())
    assert np.all(np.isfinite(history))
    assert np.mean(history[-10:]) < 0.8 * np.mean(history[:10])


def test_mask_ratio_range(tiny_model):
    decoder = QueryDecoder(Graph("d"), tiny_model)
    with pytest.raises(ParameterError):
        decoder(np.zeros((1, tiny_model.d_sig)), mask_ratio=1.5)


def test_decoder_input_shape(tiny_model):
    decoder = QueryDecoder(Graph("d"), tiny_model)
    with pytest.raises(ShapeError):
        decoder(np.zeros((1, tiny_model.d_sig + 1)))


def test_teachers_require_pretraining(tiny_model, sample):
    teachers = Teachers(tiny_model)
    with pytest.raises(LifecycleError):
        teachers.encode_signal(sample.record)
    with pytest.raises(LifecycleError):
        teachers.encode_text(sample.report)
    teachers.freeze()
    assert teachers.encode_signal(sample.record).shape == (tiny_model.d_sig,)
    assert teachers.encode_text([sample.report, sample.report]).shape == (2, tiny_model.d_sig)


def test_signal_encoder_length_check(tiny_model):
    teachers = Teachers(tiny_model)
    teachers.freeze()
    with pytest.raises(ShapeError):
        teachers.encode_signal(np.zeros((1, 12, tiny_model.signal_length - 1)))


def test_initialisation_is_seeded(tiny_model, small_render):
    a = Student(tiny_model, small_render).graph.checksum()
    b = Student(tiny_model, small_render).graph.checksum()
    c = Student(tiny_model.updated(seed=1), small_render).graph.checksum()
    assert a == b != c


def test_gradients_reach_every_student_parameter(student, sample, small_render, tiny_model):
    image = render(sample.record, small_render)
    z_rec, z_ctr = student.project(student.encode_image([image, image]))
    x_hat = student.decode_signal(z_rec, mask_seed=0, training=True)
    loss = (x_hat * x_hat).mean() + (z_ctr * z_ctr).mean() + student.temperatures.tau_ctr() * 0.0
    ad.backward(loss)
    missing = [name for name, p in student.graph.items() if p.grad is None and "s_gram" not in name]
    assert missing == []
