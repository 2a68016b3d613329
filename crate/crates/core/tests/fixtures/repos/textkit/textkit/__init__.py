from textkit.tokens import tokenize, ngrams, Vocabulary
from textkit.stats import word_frequencies, type_token_ratio, top_words
from textkit.formatting import wrap, justify, slugify
