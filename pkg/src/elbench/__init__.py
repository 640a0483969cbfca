"""Entity linking benchmark harness.

Loads a benchmark of sentences with gold entity mentions, prompts a
text-completion model to link mentions to Wikipedia titles, resolves
titles to Wikidata QIDs through a dump-derived mapping, scores the
predictions with micro-averaged precision/recall/F1, and stratifies
results by entity popularity (Wikidata triple counts).
"""

__version__ = "0.1.0"
