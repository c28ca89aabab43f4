#!/usr/bin/env python3
"""Regenerates the small shipped fixtures under data/fixtures/. Output is deterministic."""

import json
import pathlib

OUT = pathlib.Path(__file__).resolve().parent.parent / "data" / "fixtures"

SYMPTOMS = [
    "fever", "cough", "headache", "nausea", "rash", "fatigue", "dizziness", "chest pain",
    "sore throat", "back pain", "wheezing", "vomiting", "diarrhea", "chills", "joint pain",
    "itching", "blurred vision", "palpitations", "shortness of breath", "abdominal pain",
    "night sweats", "weight loss", "runny nose", "muscle aches", "swollen glands", "ear pain",
    "constipation", "insomnia", "numbness", "confusion",
]


def slug(name):
    return name.replace(" ", "_")


def binary_feature(name):
    return {"id": "f_" + slug(name), "name": name, "kind": "binary", "values": ["yes", "no"]}


def write(name, obj):
    path = OUT / name
    path.write_text(json.dumps(obj, indent=1, sort_keys=False) + "\n")
    print("wrote", path)


def separable():
    # Ten diseases, each owning three symptoms at 95/5 and showing the rest at 5/95.
    diseases = [{"id": f"d{i:02d}", "name": f"condition {chr(ord('a') + i)}", "prior_count": 20} for i in range(10)]
    features = [binary_feature(s) for s in SYMPTOMS]
    counts = {}
    for i, d in enumerate(diseases):
        row = {}
        for j, f in enumerate(features):
            own = j // 3 == i
            row[f["id"]] = {"yes": 95, "no": 5} if own else {"yes": 5, "no": 95}
        counts[d["id"]] = row
    return {"version": 1, "diseases": diseases, "features": features, "counts": counts, "negated_features": []}


def twin():
    # d_alpha and d_beta share every conditional: no finding can separate them.
    names = SYMPTOMS[:6]
    features = [binary_feature(s) for s in names]
    profiles = {
        "d_alpha": [95, 95, 5, 5, 50, 5],
        "d_beta": [95, 95, 5, 5, 50, 5],
        "d_gamma": [5, 5, 95, 95, 50, 5],
        "d_delta": [5, 5, 5, 5, 50, 95],
    }
    diseases = [{"id": d, "name": d[2:], "prior_count": 10} for d in profiles]
    counts = {d: {f["id"]: {"yes": p, "no": 100 - p} for f, p in zip(features, ps)} for d, ps in profiles.items()}
    return {"version": 1, "diseases": diseases, "features": features, "counts": counts, "negated_features": []}


def minimal():
    return {
        "version": 1,
        "diseases": [{"id": "d_a", "name": "a", "prior_count": 1}, {"id": "d_b", "name": "b", "prior_count": 1}],
        "features": [binary_feature("fever")],
        "counts": {"d_a": {"f_fever": {"yes": 90, "no": 10}}, "d_b": {"f_fever": {"yes": 10, "no": 90}}},
    }


def bad_sum():
    kb = minimal()
    kb["counts"]["d_a"]["f_fever"] = {"yes": 60, "no": 41}
    return kb


def mixed_pair():
    # Two KBs sharing half of their features by name and kind.
    shared = [
        binary_feature("fever"),
        binary_feature("cough"),
        {"id": "f_pain", "name": "pain", "kind": "numeric", "values": [str(v) for v in range(0, 11)],
         "numeric_scale": {"min": 0, "max": 10, "step": 1}},
        {"id": "f_onset", "name": "onset", "kind": "categorical", "values": ["sudden", "gradual"]},
    ]
    only_a = [binary_feature("rash"), binary_feature("itching"),
              {"id": "f_duration", "name": "duration", "kind": "ordinal", "values": ["days", "weeks", "months"]},
              binary_feature("wheezing")]
    only_b = [binary_feature("headache"), binary_feature("nausea"),
              {"id": "f_severity", "name": "severity", "kind": "ordinal", "values": ["mild", "moderate", "severe"]},
              # same name as an a-only feature but a different kind: must not match
              {"id": "f_wheeze", "name": "wheezing", "kind": "categorical", "values": ["none", "exertion", "rest"]}]

    def table(features, shape):
        counts = {}
        for di, d in enumerate(shape):
            row = {}
            for fi, f in enumerate(features):
                n = len(f["values"])
                hot = (di + fi) % n
                share = [0] * n
                base = 100 // (n + 2)
                for v in range(n):
                    share[v] = base
                share[hot] += 100 - base * n
                row[f["id"]] = {v: c for v, c in zip(f["values"], share)}
            counts[d] = row
        return counts

    diseases_a = [{"id": "d_flu", "name": "Influenza", "prior_count": 30},
                  {"id": "d_asthma", "name": "Asthma", "prior_count": 20},
                  {"id": "d_urticaria", "name": "Urticaria", "prior_count": 10}]
    diseases_b = [{"id": "b_influenza", "name": "influenza", "prior_count": 30},
                  {"id": "b_migraine", "name": "Migraine", "prior_count": 20},
                  {"id": "b_gastritis", "name": "Gastritis", "prior_count": 10}]
    fa = shared + only_a
    fb = [dict(f, id=f["id"].replace("f_", "g_")) for f in shared] + only_b
    kb_a = {"version": 1, "diseases": diseases_a, "features": fa, "counts": table(fa, [d["id"] for d in diseases_a])}
    kb_b = {"version": 1, "diseases": diseases_b, "features": fb, "counts": table(fb, [d["id"] for d in diseases_b])}
    return kb_a, kb_b


def elicited():
    return {
        "d_flu": {"f_fever": {"prob_yes": 0.9}, "f_cough": {"prob_yes": 0.8},
                  "f_onset": {"distribution": {"sudden": 0.7, "gradual": 0.3}}},
        "d_cold": {"f_fever": {"prob_yes": 0.2}, "f_cough": {"prob_yes": 0.6},
                   "f_onset": {"distribution": {"sudden": 0.2, "gradual": 0.8}}},
        "d_bad": {"f_fever": {"prob_yes": 1.4}},
    }


def build_inputs():
    schema = {
        "diseases": [{"id": "d_flu", "name": "Influenza"}, {"id": "d_cold", "name": "Common cold"}],
        "features": [
            binary_feature("fever"),
            binary_feature("cough"),
            {"id": "f_site", "name": "pain site", "kind": "multi_choice", "values": ["head", "throat", "chest"]},
        ],
    }
    records = [
        {"disease": "d_flu", "findings": {"f_fever": "yes", "f_site": ["head", "chest"]}},
        {"disease": "d_flu", "findings": {"f_fever": "yes", "f_cough": "yes", "f_site": ["head"]}},
        {"disease": "d_cold", "findings": {"f_cough": "yes", "f_site": ["throat"]}},
        {"disease": "d_cold", "findings": {"f_fever": "no", "f_site": ["throat", "head"]}},
    ]
    return schema, records


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    write("separable_kb.json", separable())
    write("twin_kb.json", twin())
    write("minimal_kb.json", minimal())
    write("bad_sum_kb.json", bad_sum())
    a, b = mixed_pair()
    write("mixed_a_kb.json", a)
    write("mixed_b_kb.json", b)
    write("elicited_tables.json", elicited())
    schema, records = build_inputs()
    write("build_schema.json", schema)
    (OUT / "build_records.jsonl").write_text("".join(json.dumps(r) + "\n" for r in records))
    print("wrote", OUT / "build_records.jsonl")


if __name__ == "__main__":
    main()
