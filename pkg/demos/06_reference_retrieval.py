"""Text-based reference suggestion: captions, cosine retrieval, re-ranking.

Builds a small gallery of captioned photos, indexes it with the bundled
bag-of-words embedder, retrieves coarse candidates for a query, and narrows
them with the keyword-overlap ranker.
"""

from viewalign.retrieval import (
    GalleryEntry,
    HashedBagOfWordsEmbedder,
    KeywordOverlapRanker,
    RetrievalConfig,
    UserPrompt,
    build_caption,
    coarse_retrieve,
    index_gallery,
    rerank,
)

gallery = [
    GalleryEntry("g-01", "a person laughing in a sunlit park", ("person", "tree"), "outdoor candid", 1, "g/01.jpg"),
    GalleryEntry("g-02", "a confident executive at a desk", ("person", "desk", "laptop"), "office portrait", 1, "g/02.jpg"),
    GalleryEntry("g-03", "two friends celebrating with confetti", ("person", "person"), "party night", 2, "g/03.jpg"),
    GalleryEntry("g-04", "a surprised child with a gift box", ("person", "box"), "birthday indoor", 1, "g/04.jpg"),
    GalleryEntry("g-05", "a quiet still life of a mug and a book", ("mug", "book"), "tabletop morning", 0, "g/05.jpg"),
    GalleryEntry("g-06", "a happy couple walking a dog", ("person", "person", "dog"), "street evening", 2, "g/06.jpg"),
    GalleryEntry("g-07", "a chef plating food with utensils", ("person", "plate", "fork"), "kitchen action", 1, "g/07.jpg"),
    GalleryEntry("g-08", "a proud graduate holding a diploma", ("person", "diploma"), "ceremony", 1, "g/08.jpg"),
]

print("gallery captions:")
for entry in gallery[:3]:
    print(" ", build_caption(entry))
print("  ...\n")

index = index_gallery(gallery, HashedBagOfWordsEmbedder())
prompt = UserPrompt(
    query="take a happy picture of me",
    detected_objects=("person", "dog"),
    people_count=1,
)

cfg = RetrievalConfig(m=6, m_star=3)
coarse = coarse_retrieve(prompt, index, cfg)
print(f"coarse top-{cfg.m} by cosine similarity:")
for eid, sim in coarse:
    print(f"  {eid}  sim={sim:+.3f}")

candidates = [(eid, index.caption_of(eid)) for eid, _ in coarse]
result = rerank(prompt, candidates, KeywordOverlapRanker(), cfg)
print(f"\nre-ranked to m*={cfg.m_star} suggestions: {', '.join(result.ids)}")
print(f"explanation: {result.explanation}")
