"""Smoke test for the ebisg Python extension.

Build the module first (see README.md), then run:

    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import ebisg  # noqa: E402


def close(a, b, tol=1e-12):
    return all(abs(x - y) <= tol for x, y in zip(a, b))


def main():
    assert len(ebisg.RACES) == 6 and ebisg.RACES[2] == "hispanic"
    assert ebisg.normalize_name("  José  García ") == "JOSE GARCIA"

    geo = [0.5, 0.2, 0.2, 0.05, 0.03, 0.02]
    marginal = [0.6, 0.13, 0.16, 0.06, 0.01, 0.04]
    # A surname prior equal to the marginal carries no information.
    assert close(ebisg.bisg_posterior(geo, marginal, marginal), geo)
    assert ebisg.bifsg_posterior(geo, None, None, marginal) == geo
    post = ebisg.bisg_posterior(geo, [0.05, 0.05, 0.85, 0.03, 0.01, 0.01], marginal)
    assert abs(sum(post) - 1) < 1e-12 and post[2] > geo[2]

    v = ebisg.embed_name("GARCIA", dim=64, seed=1)
    assert len(v) == 64 and abs(math.sqrt(sum(x * x for x in v)) - 1) < 1e-12

    with tempfile.TemporaryDirectory() as tmp:
        data = os.path.join(tmp, "data")
        models = os.path.join(tmp, "models")
        status = ebisg.run_cli([
            "gen-synth", "--seed", "3", "--out", data, "--voters", "300", "--units", "10",
            "--train-voters", "500", "--unmatched-share", "0.12",
        ])
        assert status == 0, status
        for variant, flag, src in [
            ("surname", "--table", "surnames.csv"),
            ("fullname", "--voters", "voters_train.csv"),
        ]:
            status = ebisg.run_cli([
                "train", "--out", models, "--variant", variant, flag, os.path.join(data, src),
                "--dim", "64", "--hidden", "16", "--epochs", "3",
            ])
            assert status == 0, (variant, status)
        assert ebisg.run_cli(["predict", "--method", "fullname-embed"]) == 2

        surnames = ebisg.NameTable.load(os.path.join(data, "surnames.csv"))
        geos = ebisg.GeoTable.load(os.path.join(data, "geo.csv"))
        assert len(surnames) > 0 and len(geos) == 10
        assert abs(sum(geos.marginal()) - 1) < 1e-9

        model = ebisg.PriorModel.load(os.path.join(models, "fullname.emlp"))
        assert model.provenance == "char-ngram/v1 dim=64 seed=0"
        p = model.predict("ZZYZX QUORTLE")
        assert len(p) == 6 and abs(sum(p) - 1) < 1e-9

        predictor = ebisg.Predictor(
            os.path.join(data, "surnames.csv"),
            os.path.join(data, "geo.csv"),
            surname_weights=os.path.join(models, "surname.emlp"),
            fullname_weights=os.path.join(models, "fullname.emlp"),
        )
        rows = predictor.predict_file(os.path.join(data, "voters.csv"), method="fullname-embed")
        assert len(rows) == 300 and all("posterior" in r for r in rows)
        matched = [r for r in rows if r["surname_matched"]]
        unmatched = [r for r in rows if not r["surname_matched"]]
        assert matched and unmatched
        one = predictor.predict("ANA", "QXWERTY", "T00001", method="surname-embed")
        assert one["surname_matched"] is False and abs(sum(one["posterior"]) - 1) < 1e-9

        store = ebisg.EmbeddingStore(8, "test/v1")
        store.insert("garcía", [0.5] * 8)
        path = os.path.join(tmp, "s.ebed")
        store.save(path)
        back = ebisg.EmbeddingStore.load(path)
        assert back.get("GARCIA") == [0.5] * 8 and back.dim == 8 and back.provenance == "test/v1"
        try:
            ebisg.EmbeddingStore.load(os.path.join(data, "geo.csv"))
        except ValueError as e:
            assert "geo.csv" in str(e)
        else:
            raise AssertionError("corrupt store accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
