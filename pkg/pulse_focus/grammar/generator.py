# ABOUTME: Random grammar-valid transcripts for scripted episodes and grammar checks
# ABOUTME: Every transcript it produces parses cleanly for the given image count

import logging

logger = logging.getLogger(__name__)

WORDS = (
    "the", "image", "shows", "a", "red", "car", "two", "people", "near", "tree", "sign", "left",
    "right", "count", "compare", "check", "is", "small", "dark", "white", "there", "are", "3",
    "objects", "in", "front", "of", "building", "next", "look", "at", "which", "one", "matches",
)
PUNCTUATION = (".", ",", ";", ":", "?", "!", "")
SEPARATORS = ("", "\n", " ", "\n\n")


def random_sentence(rng, min_words=3, max_words=12):
    count = int(rng.integers(min_words, max_words + 1))
    words = [WORDS[int(i)] for i in rng.integers(0, len(WORDS), size=count)]
    text = " ".join(words)
    if rng.random() < 0.1:
        text += " < " + WORDS[int(rng.integers(0, len(WORDS)))]
    return text + PUNCTUATION[int(rng.integers(0, len(PUNCTUATION)))]


def random_transcript(rng, num_images, cycles=None, max_cycles=6, min_words=3, max_words=12,
                      long_block_rate=0.0, long_block_words=80, two_image_rate=0.2,
                      mismatch_rate=0.0, end=None, summary=True, answer=True):
    """
    A transcript of plan/focus cycles, optionally closed by an END plan, a Summary and an answer.

    Args:
        rng (np.random.Generator): Source of randomness
        num_images (int): Image count N (>= 1)
        cycles (int, optional): Exact number of cycles; random in [0, max_cycles] otherwise
        long_block_rate (float): Chance that a block body gets ``long_block_words`` words
        two_image_rate (float): Chance that a focus block references two images
        mismatch_rate (float): Chance that the focus tag differs from the plan directive
        end (bool, optional): Whether to add a final END plan; random when None

    Returns:
        str: The transcript
    """
    if num_images < 1:
        raise ValueError("Transcripts with focus blocks need at least one image")
    if cycles is None:
        cycles = int(rng.integers(0, max_cycles + 1))
    if end is None:
        end = bool(rng.random() < 0.5)

    def body():
        if rng.random() < long_block_rate:
            return random_sentence(rng, long_block_words, long_block_words)
        return random_sentence(rng, min_words, max_words)

    def pick_images():
        if num_images >= 2 and rng.random() < two_image_rate:
            first, second = rng.choice(num_images, size=2, replace=False) + 1
            return (int(first), int(second))
        return (int(rng.integers(1, num_images + 1)),)

    parts = []
    for _ in range(cycles):
        planned = pick_images()
        actual = pick_images() if rng.random() < mismatch_rate else planned
        directive = "Next focus: " + " and ".join(f"I{j}" for j in planned)
        tag = "<focus:" + ",".join(f"I{j}" for j in actual) + ">"
        parts.append(SEPARATORS[int(rng.integers(0, len(SEPARATORS)))])
        parts.append(f"<plan>{body()} {directive}</plan>")
        parts.append(SEPARATORS[int(rng.integers(0, len(SEPARATORS)))])
        parts.append(f"{tag}{body()}</focus>")
    if end:
        parts.append(f"\n<plan>{random_sentence(rng, min_words, max_words)} END</plan>")
    if summary:
        parts.append(f"\nSummary: {random_sentence(rng, min_words, max_words)}")
    if answer:
        choice = "ABCD"[int(rng.integers(0, 4))]
        parts.append(f"\n<answer> {choice} </answer>")
        if rng.random() < 0.3:
            parts.append("\n")
    return "".join(parts)
