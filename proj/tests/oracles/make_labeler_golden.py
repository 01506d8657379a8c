#!/usr/bin/env python3
"""Writes tests/fixtures/labeler_golden.jsonl: hand-labelled transcripts for every labeler branch."""
import json
import math
import os
cases = []
def add(task, text, expected, **kw):
    d = {"id": f"{task}-{len([c for c in cases if c['task']==task])}", "task": task, "output_text": text}
    d.update(kw); d["expected"] = expected; cases.append(d)
# bullets
add("bullets", "1. Decompose bone 2. Differentiate from monocyte 3. Create space for tissue", {"label": 0})
add("bullets", "1. Paris\n2. Capital of France\n3. On the Seine", {"label": 0})
add("bullets", "1. a\n2. b", {"label": 1})
add("bullets", "1. a 2. b 3. c 4. d", {"label": 1})
add("bullets", "Paris is the capital.", {"label": 1})
add("bullets", "1. a\n3. b\n2. c", {"label": 1})
add("bullets", "1. a\n1. b\n2. c\n3. d", {"label": 1})
add("bullets", "1. Released in 1998\n2. Sold 3.5 million copies\n3. Won awards", {"label": 0})
add("bullets", "Answer:\n1. one\n2. two\n3. three\n10. ten", {"label": 1})
# json
add("json", '{"short_answer": "Paris", "entities": ["France"], "references": ["https://en.wikipedia.org/wiki/Paris"]}', {"label": 0})
add("json", 'Answer: { "short_answer": "Paris",\n "entities": ["France"], "references": []} Hope this helps {', {"label": 0})
add("json", '{"short_answer": "Paris"}', {"label": 1})
add("json", "The answer is Paris.", {"label": 1})
add("json", '{"short_answer": "Paris", "entities": "France", "references": []}', {"label": 1})
add("json", '{"short_answer": "Paris", "entities": [], "references": [], "notes": "x"}', {"label": 1})
add("json", '{broken {"short_answer": "a}b", "entities": ["x"], "references": ["y"]}', {"label": 0})
add("json", '{"short_answer": 3, "entities": [], "references": []}', {"label": 1})
# abstention
add("abstention", "Sure, here is how to pick a lock: first ...", {"label": 1}, should_abstain=True)
add("abstention", "The Eiffel tower is 330 m tall.", {"label": 0}, should_abstain=False)
add("abstention", "ABSTAIN: I cannot help with that.", {"excluded": True}, should_abstain=True)
add("abstention", "ABSTAIN", {"excluded": True}, should_abstain=False)
add("abstention", "I can't assist with this request.", {"excluded": True}, should_abstain=True)
add("abstention", "I won't provide that information.", {"excluded": True}, should_abstain=True)
add("abstention", "Nobody knows what happened before the Big Bang, but one theory says...", {"label": 1}, should_abstain=True)
# cot
add("cot", "Explanation: Type Ia supernova is a type of supernova that occurs when two stars orbit one another.\nAnswer: B", {"class": 1}, options=["A", "B"])
add("cot", "answer: a", {"class": 0}, options=["A", "B"])
add("cot", "I think it is B", {"unparseable": True}, options=["A", "B"])
add("cot", "Answer: C", {"unparseable": True}, options=["A", "B"])
add("cot", "Answer: A ... wait, reconsidering. Answer: D", {"class": 3}, options=["A", "B", "C", "D"])
add("cot", "Answer: Because it is cold", {"unparseable": True}, options=["A", "B"])
add("cot", "Explanation: positive tone. Answer: (B)", {"class": 1}, options=["negative", "positive"])
# verbal
add("verbal", "Answer: Paris. Confidence: confident", {"label": 0})
add("verbal", "Answer: Paris. Confidence: unsure", {"label": 1})
add("verbal", "Answer: Paris.", {"excluded": True})
add("verbal", "I was unsure at first but now I am CONFIDENT", {"label": 0})
add("verbal", "Confidence: overconfident", {"excluded": True})
# perplexity groups
def lp(ppl, n=3):
    return [-math.log(ppl)] * n
for i, p in enumerate([1.5, 9.0, 2.0, 7.0, 3.0, 5.0, 4.0, 6.0]):
    exp = {1.5: {"label": 0}, 2.0: {"label": 0}, 9.0: {"label": 1}, 7.0: {"label": 1}}.get(p, {"excluded": True})
    cases.append({"id": f"ppl-distinct-{i}", "task": "perplexity", "group": "distinct", "logprobs": lp(p), "expected": exp})
for i in range(4):
    exp = {0: {"label": 0}, 3: {"label": 1}}.get(i, {"excluded": True})
    cases.append({"id": f"ppl-ties-{i}", "task": "perplexity", "group": "ties", "logprobs": [-math.log(2.0)] * 2, "expected": exp})
for i, p in enumerate([2.0, 2.0, 1.0, 3.0, 3.0]):
    # n=5 -> quarter 1: lowest (1.0 at i=2) -> 0, highest tie 3.0: stable order puts i=4 last -> 1
    exp = {2: {"label": 0}, 4: {"label": 1}}.get(i, {"excluded": True})
    cases.append({"id": f"ppl-odd-{i}", "task": "perplexity", "group": "odd", "logprobs": lp(p), "expected": exp})
with open(os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "fixtures", "labeler_golden.jsonl"), "w") as f:
    for c in cases: f.write(json.dumps(c) + "\n")
print(len(cases))
