"""Smoke test for the pyclickmodel extension: simulate, fit, evaluate, classify."""

import json
import math

import pyclickmodel as cm


def main():
    assert cm.classify(["items"]) == "Items-Only"
    assert cm.category("cacm") == "Fully Dependent"
    assert cm.equivalent("pbm", "trust_bias")
    assert not cm.equivalent("pbm", "trust_pbm")
    assert set(json.loads(cm.descriptor("dbn"))["deps"]) == {"items", "clicks"}

    truth = cm.Model.random("pbm", (1, 4), items=12, seed=7)
    train = cm.simulate(truth, 20_000, seed=1)
    test = cm.simulate(truth, 5_000, seed=2)
    assert len(train) == 20_000 and train.shape == (1, 4) and train.kind == "single_list"
    assert cm.ClickLog.from_jsonl(train.to_jsonl()).to_jsonl() == train.to_jsonl()

    pbm, report = cm.fit("pbm", train)
    rcm, _ = cm.fit("rcm", train)
    assert report["converged"], report
    traj = report["ll_trajectory"]
    assert all(b >= a - 1e-9 * max(1.0, abs(a)) for a, b in zip(traj, traj[1:]))

    good, base = cm.evaluate(pbm, test), cm.evaluate(rcm, test)
    assert 1.0 <= good["overall_perplexity"] < base["overall_perplexity"], (good, base)
    assert math.isclose(good["total_ll"], pbm.log_likelihood(test), rel_tol=1e-12)

    q = pbm.conditionals(test, 0)
    assert len(q) == 4 and all(0.0 <= x <= 1.0 for x in q)
    assert cm.Model.from_json(pbm.to_json()).to_json() == pbm.to_json()

    carousel = cm.simulate(cm.Model.random("cacm", (2, 3), items=10, topics=4, seed=3), 500, seed=4)
    assert carousel.kind == "carousel" and carousel.shape == (2, 3)

    try:
        cm.simulate(truth, 0)
    except ValueError as e:
        assert "sessions" in str(e)
    else:
        raise AssertionError("zero sessions accepted")

    print(f"ok: pbm perplexity {good['overall_perplexity']:.4f} vs rcm {base['overall_perplexity']:.4f}")


if __name__ == "__main__":
    main()
