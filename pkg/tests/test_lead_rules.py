import numpy as np
import pandas as pd
import pytest

from config import RuleWeights, SynthParams
from errors import PreconditionError, ShapeError, UndefinedSNRError
from lab import lead_rules
from lab.autodiff import Tensor, backward
from lab.lead_rules import LEAD_INDEX
from lab.signal_core import EcgRecord, synth_ecg


def test_derive_limb_from_unit_leads():
    iii, avr, avl, avf = lead_rules.derive_limb_from_I_II(np.ones(4), np.ones(4))
    np.testing.assert_allclose(iii, 0.0)
    np.testing.assert_allclose(avr, -1.0)
    np.testing.assert_allclose(avl, 0.5)
    np.testing.assert_allclose(avf, 0.5)


def test_derive_limb_shape_mismatch():
    with pytest.raises(ShapeError):
        lead_rules.derive_limb_from_I_II(np.ones(4), np.ones(5))


def test_refine_einthoven_projects_onto_plane():
    i_ref, ii_ref, iii_ref = lead_rules.refine_einthoven(np.array([1.0]), np.array([1.0]), np.array([1.0]))
    np.testing.assert_allclose([i_ref[0], ii_ref[0], iii_ref[0]], [2 / 3, 4 / 3, 2 / 3])
    np.testing.assert_allclose(i_ref - ii_ref + iii_ref, 0.0, atol=1e-12)


def test_refine_einthoven_keeps_consistent_triples(rng):
    i, ii = rng.normal(size=50), rng.normal(size=50)
    refined = lead_rules.refine_einthoven(i, ii, ii - i)
    for got, want in zip(refined, (i, ii, ii - i)):
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_refine_goldberger_rejects_inconsistent_triple():
    with pytest.raises(PreconditionError):
        lead_rules.refine_goldberger(np.ones(3), np.ones(3), np.ones(3))


def test_refine_goldberger_on_consistent_triple():
    avr, avl, avf = lead_rules.refine_goldberger(np.ones(3), np.ones(3), np.zeros(3))
    np.testing.assert_allclose(avr, -1.0)
    np.testing.assert_allclose(avl, 0.5)
    np.testing.assert_allclose(avf, 0.5)


def test_rule_loss_zero_for_consistent_reconstruction(sample):
    x = sample.record.samples.astype(np.float64)
    assert lead_rules.rule_loss(x, x) == pytest.approx(0.0, abs=1e-10)


def test_rule_loss_hand_value():
    x = np.zeros((12, 1))
    x_hat = np.zeros((12, 1))
    x_hat[LEAD_INDEX["I"]] = 1.0
    x_hat[LEAD_INDEX["II"]] = 1.0
    x_hat[LEAD_INDEX["III"]] = 1.0
    # refined (2/3, 4/3, 2/3); augmented (-1, 0, 1)
    expected = 0.5 * (4 / 9 + 16 / 9 + 4 / 9) / 3 + 0.5 * (1 + 0 + 1) / 3
    assert lead_rules.rule_loss(x_hat, x, RuleWeights()) == pytest.approx(expected)


def test_rule_loss_shape_checks():
    with pytest.raises(ShapeError):
        lead_rules.rule_loss(np.zeros((12, 10)), np.zeros((12, 11)))
    with pytest.raises(ShapeError):
        lead_rules.rule_loss(np.zeros((11, 10)), np.zeros((11, 10)))


def test_rule_loss_rejects_mixed_rates(sample):
    other = EcgRecord(250.0, sample.record.samples)
    with pytest.raises(ShapeError):
        lead_rules.rule_loss(other, sample.record)


def test_rule_loss_on_tensors_is_differentiable(rng):
    x_hat = Tensor(rng.normal(size=(2, 12, 8)), requires_grad=True)
    loss = lead_rules.rule_loss(x_hat, rng.normal(size=(2, 12, 8)))
    assert isinstance(loss, Tensor)
    backward(loss)
    assert x_hat.grad.shape == (2, 12, 8)
    # only the limb leads enter the loss
    assert np.all(x_hat.grad[:, 6:] == 0)


def test_snr_db_values():
    ref = np.sin(np.linspace(0, 6, 200))
    assert lead_rules.snr_db(ref, ref) == lead_rules.SNR_CAP_DB
    assert lead_rules.snr_db(ref, -ref) == pytest.approx(-6.0206, abs=1e-3)
    with pytest.raises(UndefinedSNRError):
        lead_rules.snr_db(np.zeros(10), np.ones(10))
    with pytest.raises(ShapeError):
        lead_rules.snr_db(np.ones(3), np.ones(4))


def test_snr_audit_clean_and_noisy():
    clean = synth_ecg(SynthParams(heart_rate=72, fs=100.0, seed=1)).record
    noisy = synth_ecg(SynthParams(heart_rate=72, fs=100.0, seed=1, noise_sigma=0.05)).record
    clean_frame = lead_rules.snr_audit([clean])
    noisy_frame = lead_rules.snr_audit([noisy])
    assert list(clean_frame["lead"]) == ["III", "aVR", "aVL", "aVF"]
    assert (clean_frame["mean_snr_db"] > 60).all()
    assert (noisy_frame["mean_snr_db"] < clean_frame["mean_snr_db"]).all()
    assert (noisy_frame["n_records"] == 1).all()


def test_write_snr_report(tmp_path, record):
    frame = lead_rules.snr_audit([record, record])
    path = lead_rules.write_snr_report(frame, tmp_path / "out" / "snr.csv")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("#")
    assert lines[1] == "lead,mean_snr_db,n_records"
    back = pd.read_csv(path, comment="#")
    assert list(back["n_records"]) == [2, 2, 2, 2]


def test_einthoven_residual_of_synthetic_record(record):
    assert np.max(np.abs(lead_rules.einthoven_residual(record))) < 1e-5


def test_refine_einthoven_is_idempotent_and_moves_along_normal(rng):
    normal = np.array([1.0, -1.0, 1.0])
    for _ in range(100):
        triple = rng.normal(scale=rng.uniform(0.1, 5.0), size=(3, 20))
        refined = np.stack(lead_rules.refine_einthoven(*triple))
        again = np.stack(lead_rules.refine_einthoven(*refined))
        np.testing.assert_allclose(again, refined, atol=1e-10)
        # each sample's correction is a multiple of the plane normal
        np.testing.assert_allclose(np.cross((triple - refined).T, normal), 0.0, atol=1e-10)


def test_snr_at_known_power_ratio():
    for trial in range(20):
        params = SynthParams(heart_rate=60 + 3 * trial, fs=500.0, seed=trial)
        lead = synth_ecg(params).record.lead("II").astype(np.float64)
        assert lead.size == 5000
        noise = np.random.default_rng(trial).normal(scale=np.sqrt(np.mean(lead**2) / 1e4), size=lead.size)
        assert lead_rules.snr_db(lead, lead + noise) == pytest.approx(40.0, abs=0.5)


def test_clean_records_hit_the_snr_cap():
    records = [synth_ecg(SynthParams(heart_rate=rate, fs=500.0, seed=rate)).record for rate in (50, 72, 130)]
    frame = lead_rules.snr_audit(records)
    assert (frame["mean_snr_db"] == lead_rules.SNR_CAP_DB).all()
    assert (frame["n_records"] == 3).all()
