"""End-to-end check of the `cafata` extension module on a tiny synthetic dataset."""

import json
import math
import random
import sys
import tempfile
from pathlib import Path

import cafata


def write_inputs(root: Path, seed: int = 0) -> None:
    rng = random.Random(seed)
    genres = ["drama", "comedy", "horror"]
    actors = ["ann", "bob", "cat", "dan"]
    with open(root / "features.tsv", "w") as f:
        for i in range(12):
            f.write(f"m{i}\tgenre\t{genres[i % 3]}\n")
            f.write(f"m{i}\tactor\t{actors[i % 4]}\n")
            if i % 2:
                f.write(f"m{i}\tactor\t{actors[(i + 1) % 4]}\n")
    (root / "schema.json").write_text(json.dumps({"time": ["day", "night"], "company": ["alone", "friends"]}))
    with open(root / "interactions.csv", "w") as f:
        f.write("user,item,value,time,company\n")
        for u in range(8):
            for _ in range(20):
                i = rng.randrange(12)
                time = rng.choice(["day", "night"])
                company = rng.choice(["alone", "friends"])
                liked = (i % 3 == u % 3) ^ (time == "night" and i % 3 == 2)
                f.write(f"u{u},m{i},{4 if liked else 2},{time},{company}\n")


def main() -> int:
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        write_inputs(root)
        summary = cafata.prepare(
            str(root / "interactions.csv"),
            str(root / "features.tsv"),
            str(root / "schema.json"),
            str(root / "prepared.json"),
            scale=(1.0, 5.0),
            seed=1,
        )
        assert summary["users"] == 8, summary

        log = cafata.train(
            str(root / "prepared.json"), str(root / "ckpt.json"), dim=4, epochs=30, batch_size=16, lr=0.2, seed=1
        )
        assert log["epochs"], log

        rec = cafata.Recommender.load(str(root / "ckpt.json"))
        ctx = {"time": "night", "company": "friends"}
        assert rec.variant == "ca-fata"

        b = rec.breakdown("u0", "m1", ctx)
        total = sum(t["importance"] * t["contribution"] for t in b["types"])
        assert math.isclose(total, b["rating"], abs_tol=1e-9)
        assert math.isclose(rec.predict("u0", "m1", ctx), b["rating"], abs_tol=1e-12)

        e = rec.explain("u0", "m1", ctx)
        print(e["text"])
        assert e["kind"] == "template" and len(e["arguments"]) <= 2

        taf = rec.taf("u0", "m1", ctx)
        assert len(taf["arguments"]) == 3

        c = rec.contrastive("u0", ctx)
        print(c["text"])
        assert c["text"].startswith("We recommend")

        before = rec.predict("u0", "m1", ctx)
        fb = rec.feedback("u0", "comedy", "dislike", ctx)
        after = rec.predict("u0", "m1", ctx)
        assert fb["new"] < fb["old"] and after < before, (fb, before, after)

        top = rec.recommend("u0", ctx, n=3)
        assert len(top) <= 3 and all(isinstance(s, float) for _, s in top)

        clusters = rec.cluster(k=2, seed=0)
        assert set(clusters["assignments"]) == set(rec.users)
        assert all(abs(sum(r) - 1) < 1e-9 for r in rec.importance()["rows"])

        report = rec.evaluate(str(root / "prepared.json"))
        assert report["rmse_raw"] >= report["mae_raw"]

        try:
            rec.predict("nobody", "m1", ctx)
        except ValueError:
            pass
        else:
            raise AssertionError("unknown user accepted")

        try:
            rec.explain("u0", "m1", {"time": "day"})
        except ValueError:
            pass
        else:
            raise AssertionError("partial context accepted")

    reports = cafata.check_axioms(trials=200, seed=3)
    assert all(not r["counterexamples"] for r in reports), reports

    km = cafata.kmeans([[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0]], 2)
    assert km["assignments"][0] == km["assignments"][1] != km["assignments"][2]

    print("smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
