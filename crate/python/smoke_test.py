"""Smoke test for the tsgnn extension module.

Build and install first:  pip install --no-build-isolation -e crates/py
"""

import json
import tempfile

import tsgnn


def main():
    assert tsgnn.basis_dimension("triple:3,3,2") == 12
    assert tsgnn.basis_dimension("deepsets:3") == 2

    g = tsgnn.Graph.sbm(3, 20, 0.3, 0.02, feature_dim=6, noise=0.3, seed=1).preprocess()
    assert (g.num_nodes, g.feature_dim, g.num_classes) == (60, 6, 3)

    final, best, report = tsgnn.train([g], json.dumps({"epochs": 20, "hidden_width": 8, "seed": 2}))
    lines = [json.loads(line) for line in report.splitlines()]
    assert len(lines) == 21 and lines[-1]["version"] == 1
    acc = final.evaluate(g)
    assert 0.0 <= acc <= 1.0

    # a relabeled copy of the training graph gives the same correct count
    moved = g.permuted(seed=7)
    assert final.correct_count(moved) == final.correct_count(g)

    # the same weights run on a graph with different N, F and C
    other = tsgnn.Graph.sbm(5, 10, 0.4, 0.05, feature_dim=9, noise=0.3, seed=3).preprocess()
    logits = final.predict(other)
    assert len(logits) == 50 and len(logits[0]) == 5

    with tempfile.NamedTemporaryFile(suffix=".json") as f:
        best.save(f.name)
        again = tsgnn.Model.load(f.name)
        assert again.to_json() == best.to_json()

    r = tsgnn.symcheck(trials=12, tol=1e-9)
    assert r["passed"], r

    assert tsgnn.run_cli(["basis", "--group", "dss", "--n", "3", "--f", "2"]) == 0
    print(f"ok: accuracy {acc:.3f}, symcheck max deviation {r['max_deviation']:.2e}")


if __name__ == "__main__":
    main()
