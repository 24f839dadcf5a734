"""Independent brute-force oracles the fast implementations are checked
against. Deliberately naive: exhaustive substitution for rule metrics,
exhaustive walk enumeration for exploration, plain set arithmetic for the
report metrics."""

from __future__ import annotations

import itertools

from kgreason.kg import KnowledgeGraph
from kgreason.rules import HornRule


def _apply(term, sigma):
    return sigma[term.name] if term.is_var else term.name


def exhaustive_metrics(g: KnowledgeGraph, rule: HornRule):
    """(support, head_coverage, confidence, pca_confidence) by enumerating
    every substitution of the rule's variables over all entities."""
    ents = g.entities
    names = rule.variables()
    head = rule.head
    body_pairs = set()
    support_pairs = set()
    for combo in itertools.product(ents, repeat=len(names)):
        sigma = dict(zip(names, combo))
        if all(
            (_apply(a.arg1, sigma), a.predicate, _apply(a.arg2, sigma)) in g
            for a in rule.body
        ):
            pair = (_apply(head.arg1, sigma), _apply(head.arg2, sigma))
            body_pairs.add(pair)
            if (pair[0], head.predicate, pair[1]) in g:
                support_pairs.add(pair)

    head_vars = []
    for t in (head.arg1, head.arg2):
        if t.is_var and t.name not in head_vars:
            head_vars.append(t.name)
    head_groundings = 0
    for combo in itertools.product(ents, repeat=len(head_vars)):
        sigma = dict(zip(head_vars, combo))
        if (_apply(head.arg1, sigma), head.predicate, _apply(head.arg2, sigma)) in g:
            head_groundings += 1

    support = len(support_pairs)
    hc = support / head_groundings if head_groundings else 0.0
    conf = support / len(body_pairs) if body_pairs else 0.0
    pca_den = sum(1 for x, _ in body_pairs if g.has_subject(x, head.predicate))
    pca = support / pca_den if pca_den else 0.0
    return support, hc, conf, pca


def exhaustive_groundings(g: KnowledgeGraph, rule: HornRule):
    """Every total substitution satisfying the body, with head-present flag."""
    ents = g.entities
    names = rule.variables()
    out = []
    for combo in itertools.product(ents, repeat=len(names)):
        sigma = dict(zip(names, combo))
        if all(
            (_apply(a.arg1, sigma), a.predicate, _apply(a.arg2, sigma)) in g
            for a in rule.body
        ):
            head_t = (
                _apply(rule.head.arg1, sigma),
                rule.head.predicate,
                _apply(rule.head.arg2, sigma),
            )
            out.append((sigma, head_t in g))
    out.sort(key=lambda pair: tuple(pair[0][v] for v in names))
    return out


def enumerate_walks(g: KnowledgeGraph, start: str, hops: int):
    """All walks from start up to the hop limit, as triple chains."""
    walks = []

    def extend(node, chain):
        if chain:
            walks.append(tuple(chain))
        if len(chain) == hops:
            return
        for pred, nxt in g.outgoing(node):
            chain.append((node, pred, nxt))
            extend(nxt, chain)
            chain.pop()

    extend(start, [])
    return walks


def exhaustive_relation_paths(g: KnowledgeGraph, start: str, hops: int):
    return {tuple(t[1] for t in walk) for walk in enumerate_walks(g, start, hops)}


def naive_report(gold_sets, pred_sets, hard_answers):
    """Six metrics straight from their set-arithmetic definitions."""
    n = len(gold_sets)
    hits = prec = rec = f1 = hard = 0.0
    for a, p, h in zip(gold_sets, pred_sets, hard_answers):
        inter = p & a
        hits += 1.0 if inter else 0.0
        prec += len(inter) / len(p) if p else 0.0
        rec += len(inter) / len(a) if a else 0.0
        f1 += 2 * len(inter) / (len(p) + len(a)) if (p or a) else 0.0
        hard += 1.0 if h in p else 0.0
    hits /= n
    hard /= n
    return {
        "hits_any": hits,
        "precision": prec / n,
        "recall": rec / n,
        "f1": f1 / n,
        "hits_hard": hard,
        "hhr": hard / hits if hits > 0 else 0.0,
    }
