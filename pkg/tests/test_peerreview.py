"""Accountability: witness audits, deviation exposure, chain breaks."""

from attestnet.protocols.peerreview import (
    MutatingChild,
    PrScenario,
    VERDICT_CHAIN_BREAK,
    VERDICT_CONSISTENT,
    VERDICT_EXPOSED,
    PrChild,
    reference_execute,
    rewrite_log_entry,
)


def test_honest_stream_consistent_throughout():
    scenario = PrScenario.build(seed=1, n_children=2)
    for i in range(20):
        scenario.root.send(b"cmd-%02d" % i)
        scenario.drain()
        verdicts = scenario.audit_all()
        assert all(v.kind == VERDICT_CONSISTENT for v in verdicts.values())
    for child_id, witness in scenario.witnesses.items():
        assert witness.audited_seq == len(scenario.children[child_id].log)
        assert witness.expected_state["processed"] == 20


def test_root_collects_attested_responses():
    scenario = PrScenario.build(seed=2, n_children=2)
    scenario.run_rounds([b"alpha", b"beta"])
    for child_id in scenario.children:
        assert len(scenario.root.responses[child_id]) == 2


def test_mutated_result_exposed_at_seq():
    scenario = PrScenario.build(
        seed=3, n_children=2,
        child_cls_at={2: MutatingChild},
        child_kwargs_at={2: {"mutate_round": 2}})
    scenario.run_rounds([b"one", b"two", b"three"])
    verdicts = scenario.audit_all()
    assert verdicts[2].kind == VERDICT_EXPOSED
    assert verdicts[3].kind == VERDICT_CONSISTENT
    # oracle: the reference execution of the mutated command
    assert verdicts[2].expected == reference_execute(b"two")
    assert verdicts[2].found.startswith(b"lie:")


def test_rewritten_history_breaks_chain_at_first_altered_entry():
    scenario = PrScenario.build(seed=4, n_children=1)
    scenario.run_rounds([b"a", b"b", b"c"])
    child = scenario.children[2]
    rewrite_log_entry(child, 1, b"\x52fabricated")
    verdict = scenario.witnesses[2].audit()
    assert verdict.kind == VERDICT_CHAIN_BREAK
    assert verdict.seq == child.log.get(1).seq


def test_first_chain_break_helper_matches_witness():
    scenario = PrScenario.build(seed=5, n_children=1)
    scenario.run_rounds([b"x", b"y"])
    child = scenario.children[2]
    assert child.log.first_chain_break() is None
    rewrite_log_entry(child, 0, b"\x52evil")
    assert child.log.first_chain_break() == 0


def test_audit_is_incremental():
    scenario = PrScenario.build(seed=6, n_children=1)
    scenario.run_rounds([b"first"])
    witness = scenario.witnesses[2]
    v1 = witness.audit()
    assert v1.kind == VERDICT_CONSISTENT
    tail_after_one = witness.audited_seq
    scenario.run_rounds([b"second"])
    v2 = witness.audit()
    assert v2.kind == VERDICT_CONSISTENT
    assert witness.audited_seq > tail_after_one


def test_deviation_after_audited_prefix_still_caught():
    scenario = PrScenario.build(
        seed=7, n_children=1,
        child_cls_at={2: MutatingChild},
        child_kwargs_at={2: {"mutate_round": 3}})
    scenario.run_rounds([b"r1", b"r2"])
    assert scenario.witnesses[2].audit().kind == VERDICT_CONSISTENT
    scenario.run_rounds([b"r3"])
    assert scenario.witnesses[2].audit().kind == VERDICT_EXPOSED
