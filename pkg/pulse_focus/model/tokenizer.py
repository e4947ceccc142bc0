# ABOUTME: Tag-aware character tokenizer used to turn generated ids into transcript text
# ABOUTME: Block tags are single tokens so tag boundaries land on token boundaries

import logging

from pulse_focus.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

SPECIAL_TOKENS = ("<plan>", "</plan>", "<focus:", "</focus>", "<answer>", "</answer>")
BASE_CHARACTERS = "\n\t" + "".join(chr(code) for code in range(32, 127))


class Tokenizer:
    """
    Longest-match tokenizer over the block tags plus printable ASCII.

    Ids ``0..size-1`` decode to text. Model vocabularies are usually larger; the
    ids at or above ``size`` carry no text and are used as visual tokens.
    """

    def __init__(self, specials=SPECIAL_TOKENS, characters=BASE_CHARACTERS):
        self.pieces = list(specials) + list(characters)
        self._ids = {piece: index for index, piece in enumerate(self.pieces)}
        # Longest specials first so "</focus>" wins over "</"
        self._specials = sorted(specials, key=len, reverse=True)

    @property
    def size(self):
        return len(self.pieces)

    def encode(self, text):
        """
        Encode text into token ids. CRLF and lone CR line endings become LF.

        Raises:
            ConfigurationError: If the text holds a character outside the vocabulary
        """
        text = text.replace("\r\n", "\n").replace("\r", "\n")
        ids = []
        i = 0
        while i < len(text):
            if text[i] == "<":
                special = next((s for s in self._specials if text.startswith(s, i)), None)
                if special is not None:
                    ids.append(self._ids[special])
                    i += len(special)
                    continue
            char = text[i]
            if char not in self._ids:
                raise ConfigurationError(
                    f"Character {char!r} at offset {i} is not in the tokenizer vocabulary "
                    "(printable ASCII, tab, newline and the block tags)"
                )
            ids.append(self._ids[char])
            i += 1
        return ids

    def decode_token(self, token_id):
        """Text for one id; visual ids decode to the empty string."""
        if 0 <= token_id < self.size:
            return self.pieces[token_id]
        return ""

    def decode(self, ids):
        return "".join(self.decode_token(token_id) for token_id in ids)

    def check_vocab(self, vocab_size):
        """Make sure a model vocabulary can hold every text token."""
        if vocab_size < self.size:
            raise ConfigurationError(
                f"Model vocab_size {vocab_size} is smaller than tokenizer size {self.size}"
            )

