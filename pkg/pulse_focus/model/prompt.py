# ABOUTME: Builds multi-image prompts: instruction text, labelled image segments of visual ids
# ABOUTME: Visual ids are drawn from the vocabulary range the tokenizer leaves free

import logging

import numpy as np

from pulse_focus.exceptions import ConfigurationError
from pulse_focus.model.layout import TokenLayout

logger = logging.getLogger(__name__)

DEFAULT_TEMPLATE = (
    "Look at the images and answer the question.\n"
    "Alternate <plan> and <focus:Ix> blocks. End every plan with 'Next focus: Ix' or 'END'.\n"
    "Put the chosen option inside <answer></answer>.\n"
)


def build_prompt(tokenizer, template, image_lengths, vocab_size, seed):
    """
    Lay out a prompt and its token ids.

    Args:
        tokenizer (Tokenizer): Encodes the text parts
        template (str): Instruction text placed first
        image_lengths (list): Visual-token count per image
        vocab_size (int): Model vocabulary; ids in [tokenizer.size, vocab_size) are visual
        seed (int): Seed for the visual ids

    Returns:
        tuple: (list of token ids, TokenLayout)
    """
    tokenizer.check_vocab(vocab_size)
    if image_lengths and vocab_size <= tokenizer.size:
        raise ConfigurationError(
            f"vocab_size {vocab_size} leaves no ids for visual tokens (tokenizer uses {tokenizer.size})"
        )
    rng = np.random.default_rng(seed)
    tokens = []
    parts = []
    text = template
    for j, length in enumerate(image_lengths, start=1):
        if length <= 0:
            raise ConfigurationError(f"Image {j} must have at least one visual token")
        text += f"Image {j}: "
        ids = tokenizer.encode(text)
        tokens.extend(ids)
        parts.append(("text", len(ids)))
        tokens.extend(int(v) for v in rng.integers(tokenizer.size, vocab_size, size=length))
        parts.append(("image", length))
        text = "\n"
    ids = tokenizer.encode(text + "Reasoning:\n")
    tokens.extend(ids)
    parts.append(("text", len(ids)))
    layout = TokenLayout.from_lengths(parts)
    logger.debug(f"Built prompt of {len(tokens)} tokens with {len(image_lengths)} images")
    return tokens, layout
