"""Bounded exhaustive checker: lemma verdicts, injected-bug kernels, replay."""

import pytest

from attestnet.checker import (
    BoundedInstance,
    check_all_lemmas,
    check_attestation_lemma,
    check_consistency,
    check_lemma,
    check_transport_lemmas,
    replay_counterexample,
)
from attestnet.errors import InstanceTooLarge


def test_correct_kernel_all_lemmas_hold():
    instance = BoundedInstance(senders=2, messages_per_sender=3)
    reports = check_all_lemmas(instance)
    assert [r.lemma for r in reports] == [
        "attestation", "transfer_auth", "no_lost", "no_reorder", "no_duplicate"]
    for report in reports:
        assert report.holds, report.line()


def test_attestation_lemma_holds():
    report = check_attestation_lemma(seed=11)
    assert report.holds


def test_frozen_counter_kernel_violates_no_duplicate():
    instance = BoundedInstance(senders=1, messages_per_sender=2)
    report = check_lemma(instance, "no_duplicate", kernel="frozen-counter")
    assert report.verdict == "Counterexample"
    assert "duplicate" in report.counterexample.mutation


def test_gap_accepting_kernel_violates_no_lost():
    instance = BoundedInstance(senders=1, messages_per_sender=2)
    report = check_lemma(instance, "no_lost", kernel="gap-accepting")
    assert report.verdict == "Counterexample"
    assert report.counterexample.mutation.startswith(("drop", "swap"))


def test_consistency_holds_for_correct_kernel():
    instance = BoundedInstance(senders=1, messages_per_sender=3)
    report = check_consistency(instance)
    assert report.holds


def test_consistency_single_receiver_degenerate_case():
    # one message stream, both "receivers" see identical frames: vacuous hold
    instance = BoundedInstance(senders=1, messages_per_sender=1)
    assert check_consistency(instance).holds


def test_per_receiver_counter_kernel_violates_consistency():
    instance = BoundedInstance(senders=1, messages_per_sender=2)
    report = check_consistency(instance, kernel="per-receiver-counter")
    assert report.verdict == "Counterexample"


def test_instance_bounds_enforced():
    with pytest.raises(InstanceTooLarge):
        check_transport_lemmas(BoundedInstance(senders=3))
    with pytest.raises(InstanceTooLarge):
        check_transport_lemmas(BoundedInstance(messages_per_sender=9))


def test_counterexample_replay_reproduces_acceptance_pattern():
    instance = BoundedInstance(senders=1, messages_per_sender=2)
    report = check_lemma(instance, "no_lost", kernel="gap-accepting")
    cex = report.counterexample
    replayed = replay_counterexample(cex)
    assert replayed == cex.acceptance


def test_counterexample_serialization_roundtrip():
    from attestnet.checker import Counterexample

    instance = BoundedInstance(senders=1, messages_per_sender=2)
    report = check_lemma(instance, "no_duplicate", kernel="frozen-counter")
    data = report.counterexample.to_dict()
    restored = Counterexample.from_dict(data)
    assert restored.mutation == report.counterexample.mutation
    assert restored.delivery_order == report.counterexample.delivery_order
    assert replay_counterexample(restored) == report.counterexample.acceptance


def test_full_grid_holds_for_correct_kernel():
    for senders in (1, 2):
        for messages in (1, 2, 3, 4):
            instance = BoundedInstance(senders=senders,
                                       messages_per_sender=messages)
            transport = check_transport_lemmas(instance)
            for lemma, report in transport.items():
                assert report.holds, f"{senders}x{messages}: {report.line()}"
