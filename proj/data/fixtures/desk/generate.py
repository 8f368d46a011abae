"""Regenerates the desk-scale pipeline fixture in this directory."""
import json
import random
from pathlib import Path

HERE = Path(__file__).parent
rng = random.Random(20240501)

EN = "the a small old new city river house council report market winter school train bridge garden".split()
EN_V = "opened closed built reported announced visited crossed repaired praised described".split()
DE = "der die das kleine alte neue Stadt Fluss Haus Rat Bericht Markt Winter Schule Zug Brücke Garten".split()
DE_V = "eröffnete schloss baute meldete kündigte besuchte überquerte reparierte lobte beschrieb".split()
ZH = "城市 河流 房子 委员会 报告 市场 冬天 学校 火车 桥梁 花园 老人 孩子 新闻".split()
ZH_V = "开放 关闭 建造 报道 宣布 访问 穿过 修理 赞扬 描述".split()

SYSTEMS = {  # system -> (noise level, allowed pairs)
    "google": (0.10, None),
    "gpt4": (0.12, None),
    "tower13": (0.18, None),
    "tower7": (0.26, None),
    "alma": (0.34, ["en-de", "zh-en"]),
    "nllb": (0.40, ["en-de"]),
}


def sentence(nouns, verbs, n):
    words = [rng.choice(nouns) for _ in range(n)]
    words.insert(1, rng.choice(verbs))
    return " ".join(words)


def perturb(text, noise):
    words = text.split()
    out = []
    for w in words:
        r = rng.random()
        if r < noise / 3:
            continue
        if r < 2 * noise / 3:
            out.append(w[::-1])
            continue
        if r < noise and len(w) > 2:
            i = rng.randrange(len(w) - 1)
            w = w[:i] + w[i + 1] + w[i] + w[i + 2:]
        out.append(w)
    if rng.random() < noise / 2 and len(out) > 2:
        i = rng.randrange(len(out) - 1)
        out[i], out[i + 1] = out[i + 1], out[i]
    return " ".join(out) if out else words[0]


def jsonl(name, rows):
    with open(HERE / name, "w", encoding="utf-8") as f:
        for r in rows:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")


corpus_en, corpus_zh, refs, table, ratings, mock = [], [], [], [], [], []
quality = {}


def add_source(lang, tgt, idx, corpus):
    sid = f"{lang}{idx:03d}"
    if lang == "en":
        src = sentence(EN, EN_V, rng.randint(4, 8))
        ref = sentence(DE, DE_V, rng.randint(4, 8))
    else:
        src = "".join(sentence(ZH, ZH_V, rng.randint(3, 6)).split())
        ref = sentence(EN, EN_V, rng.randint(4, 8))
    rec = {"id": sid, "text": src, "lang": lang, "collection": "desk-news", "date": "2023-06-01"}
    if idx % 9 != 8:
        rec["ppl"] = round(rng.uniform(20, 260), 1)
    corpus.append(rec)
    refs.append({"source_id": sid, "tgt_lang": tgt, "text": ref})
    lp = f"{lang}-{tgt}"
    for system, (noise, allowed) in SYSTEMS.items():
        if allowed is not None and lp not in allowed:
            continue
        hyp = perturb(ref, noise)
        if system == "gpt4" and idx == 3:
            hyp = "I'm sorry, but I can't help with translating this text."
        table.append({"source_id": sid, "system_id": system, "text": hyp})
        q = 100 * (1 - noise) + rng.gauss(0, 6)
        if hyp.startswith("I'm sorry"):
            q = 5
        human = max(0, min(100, round(q / 5) * 5))
        ratings.append({"annotator_id": f"ann-{lp}", "source_id": sid, "system_id": system,
                        "score": human, "timestamp": "2024-02-01T10:00:00Z", "lp": lp})
        mock.append({"source_id": sid, "system_id": system, "metric_id": "mockqe",
                     "score": round(0.6 + (1 - noise) * 0.3 + rng.gauss(0, 0.04), 4), "lp": lp})


for i in range(18):
    add_source("en", "de", i, corpus_en)
for i in range(12):
    add_source("zh", "en", i, corpus_zh)

jsonl("corpus_en.jsonl", corpus_en)
jsonl("corpus_zh.jsonl", corpus_zh)
jsonl("references.jsonl", refs)
jsonl("systems_fixture.jsonl", table)
jsonl("ratings.jsonl", ratings)
jsonl("mock_qe_scores.jsonl", mock)
